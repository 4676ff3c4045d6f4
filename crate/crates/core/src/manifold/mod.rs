//! Chart-based model Riemannian manifolds.
//!
//! Every model is a finite atlas of explicit charts with a smooth metric in
//! coordinates. Points never live on an abstract manifold: they are always
//! (chart id, coordinate vector) pairs, and operations fail loudly when a
//! trajectory leaves the atlas instead of extrapolating.
//!
//! Registry:
//!   `torus:<n>`            flat torus, side-1 fundamental cube, metric `δ`
//!   `ctorus:<2m>`          same torus with the standard complex structure
//!   `sphere:<n>`           round unit sphere in two stereographic charts
//!   `hyperbolic:<n>`       upper half-space, metric `δ / y²`
//!   `product:<a>x<b>`      Riemannian product with the block metric

mod curvature;
mod transport;

pub use curvature::{Christoffel, CurvatureOperator};
pub use transport::{TransportOpts, Transported};

use crate::error::{GeomError, Result};
use crate::params::Params;
use nalgebra::{DMatrix, DVector};

/// Largest admissible stereographic coordinate radius. Flows switch charts
/// near radius `SPHERE_SWITCH_RADIUS`, so this bound is only reached when
/// something is wrong.
const SPHERE_MAX_RADIUS: f64 = 4.0;
/// Chart-switch trigger for sphere flows; the overlap is the annulus
/// `1/SPHERE_MAX_RADIUS < |x| < SPHERE_MAX_RADIUS`, so 1.5 is comfortably
/// interior and the switched radius `1/1.5` is far from both edges.
pub(crate) const SPHERE_SWITCH_RADIUS: f64 = 1.5;
/// Admissible half-space band: `y` in (HYP_MIN_Y, HYP_MAX) and |x_i| < HYP_MAX.
const HYP_MIN_Y: f64 = 1e-6;
const HYP_MAX: f64 = 1e6;
/// Two points in one chart are "the same base" below this coordinate gap.
const BASE_COINCIDE_TOL: f64 = 1e-9;

/// A point of a model manifold: chart id plus chart coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub chart: usize,
    pub coords: DVector<f64>,
}

impl Point {
    pub fn new(chart: usize, coords: DVector<f64>) -> Self {
        Self { chart, coords }
    }

    pub fn from_slice(chart: usize, coords: &[f64]) -> Self {
        Self::new(chart, DVector::from_column_slice(coords))
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// A tangent vector, stored as chart components at an explicit base point.
#[derive(Debug, Clone)]
pub struct Tangent {
    pub base: Point,
    pub components: DVector<f64>,
}

impl Tangent {
    pub fn new(base: Point, components: DVector<f64>) -> Self {
        Self { base, components }
    }

    pub fn zero_at(base: &Point) -> Self {
        Self::new(base.clone(), DVector::zeros(base.dim()))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.base.clone(), &self.components * s)
    }
}

/// True when two points are the same chart representative.
///
/// Finite-difference shifts deliberately stay un-canonicalized, so literal
/// chart-plus-coordinates comparison is the right notion of "same base".
pub fn points_coincide(a: &Point, b: &Point) -> bool {
    a.chart == b.chart
        && a.coords.len() == b.coords.len()
        && (&a.coords - &b.coords).amax() <= BASE_COINCIDE_TOL
}

#[derive(Debug, Clone)]
pub enum ModelKind {
    FlatTorus { dim: usize, complex: bool },
    Sphere { dim: usize },
    Hyperbolic { dim: usize },
    Product { left: Box<ManifoldModel>, right: Box<ManifoldModel> },
}

/// A model manifold with its numerical parameters.
#[derive(Debug, Clone)]
pub struct ManifoldModel {
    name: String,
    kind: ModelKind,
    params: Params,
}

impl ManifoldModel {
    /// Build a model from a registry name like `sphere:2` or
    /// `product:torus:2xhyperbolic:2`.
    pub fn from_name(name: &str, params: Params) -> Result<Self> {
        let kind = parse_kind(name, &params)?;
        Ok(Self {
            name: name.to_string(),
            kind,
            params,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// Rebuild the same model carrying different numerical parameters.
    pub fn with_params(&self, params: Params) -> Self {
        Self::from_name(&self.name, params).expect("name round-trips")
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            ModelKind::FlatTorus { dim, .. }
            | ModelKind::Sphere { dim }
            | ModelKind::Hyperbolic { dim } => *dim,
            ModelKind::Product { left, right } => left.dim() + right.dim(),
        }
    }

    pub fn chart_count(&self) -> usize {
        match &self.kind {
            ModelKind::FlatTorus { .. } | ModelKind::Hyperbolic { .. } => 1,
            ModelKind::Sphere { .. } => 2,
            ModelKind::Product { left, right } => left.chart_count() * right.chart_count(),
        }
    }

    pub fn is_compact(&self) -> bool {
        match &self.kind {
            ModelKind::FlatTorus { .. } | ModelKind::Sphere { .. } => true,
            ModelKind::Hyperbolic { .. } => false,
            ModelKind::Product { left, right } => left.is_compact() && right.is_compact(),
        }
    }

    /// True when the curvature tensor vanishes identically.
    pub fn is_flat(&self) -> bool {
        match &self.kind {
            ModelKind::FlatTorus { .. } => true,
            ModelKind::Sphere { .. } | ModelKind::Hyperbolic { .. } => false,
            ModelKind::Product { left, right } => left.is_flat() && right.is_flat(),
        }
    }

    /// True for single-chart models whose transition maps are trivial, i.e.
    /// chart components of tangent vectors are globally meaningful.
    pub fn is_flat_torus(&self) -> bool {
        matches!(self.kind, ModelKind::FlatTorus { .. })
    }

    /// The standard complex structure of `ctorus:<2m>` as a matrix acting on
    /// chart components: `J e_{2a} = e_{2a+1}`, `J e_{2a+1} = -e_{2a}`.
    pub fn complex_structure(&self) -> Option<DMatrix<f64>> {
        match &self.kind {
            ModelKind::FlatTorus { dim, complex: true } => {
                let mut j = DMatrix::zeros(*dim, *dim);
                for a in 0..dim / 2 {
                    j[(2 * a + 1, 2 * a)] = 1.0;
                    j[(2 * a, 2 * a + 1)] = -1.0;
                }
                Some(j)
            }
            _ => None,
        }
    }

    /// Wrap a point to its canonical chart representative (torus folding).
    /// Used after integrator steps, never inside finite-difference stencils.
    pub fn canonical(&self, p: &Point) -> Point {
        match &self.kind {
            ModelKind::FlatTorus { .. } => {
                let coords = p.coords.map(|x| x - x.floor());
                Point::new(0, coords)
            }
            ModelKind::Sphere { .. } | ModelKind::Hyperbolic { .. } => p.clone(),
            ModelKind::Product { left, right } => {
                let (pl, pr) = self.split_point(p);
                self.join_point(&left.canonical(&pl), &right.canonical(&pr))
            }
        }
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.check_contains(p).is_ok()
    }

    pub fn check_contains(&self, p: &Point) -> Result<()> {
        if p.dim() != self.dim() {
            return Err(GeomError::OutsideChart {
                model: self.name.clone(),
                detail: format!("coordinate dimension {} instead of {}", p.dim(), self.dim()),
            });
        }
        if p.chart >= self.chart_count() {
            return Err(GeomError::OutsideChart {
                model: self.name.clone(),
                detail: format!("chart id {} out of range", p.chart),
            });
        }
        if p.coords.iter().any(|x| !x.is_finite()) {
            return Err(GeomError::OutsideChart {
                model: self.name.clone(),
                detail: "non-finite coordinates".into(),
            });
        }
        match &self.kind {
            ModelKind::FlatTorus { .. } => Ok(()),
            ModelKind::Sphere { .. } => {
                if p.coords.norm() < SPHERE_MAX_RADIUS {
                    Ok(())
                } else {
                    Err(GeomError::OutsideChart {
                        model: self.name.clone(),
                        detail: format!("stereographic radius {:.3} too large", p.coords.norm()),
                    })
                }
            }
            ModelKind::Hyperbolic { dim } => {
                let y = p.coords[dim - 1];
                let ok = y > HYP_MIN_Y && p.coords.amax() < HYP_MAX;
                if ok {
                    Ok(())
                } else {
                    Err(GeomError::OutsideChart {
                        model: self.name.clone(),
                        detail: format!("half-space coordinates out of band (y = {y:.3e})"),
                    })
                }
            }
            ModelKind::Product { left, right } => {
                let (pl, pr) = self.split_point(p);
                left.check_contains(&pl)?;
                right.check_contains(&pr)
            }
        }
    }

    /// Metric matrix `g_ij` in the point's chart.
    pub fn metric_at(&self, p: &Point) -> Result<DMatrix<f64>> {
        self.check_contains(p)?;
        Ok(self.metric_unchecked(p))
    }

    pub(crate) fn metric_unchecked(&self, p: &Point) -> DMatrix<f64> {
        let n = self.dim();
        match &self.kind {
            ModelKind::FlatTorus { .. } => DMatrix::identity(n, n),
            ModelKind::Sphere { .. } => {
                let r2 = p.coords.norm_squared();
                let lambda = 4.0 / ((1.0 + r2) * (1.0 + r2));
                DMatrix::identity(n, n) * lambda
            }
            ModelKind::Hyperbolic { dim } => {
                let y = p.coords[dim - 1];
                DMatrix::identity(n, n) / (y * y)
            }
            ModelKind::Product { left, right } => {
                let (pl, pr) = self.split_point(p);
                let gl = left.metric_unchecked(&pl);
                let gr = right.metric_unchecked(&pr);
                let mut g = DMatrix::zeros(n, n);
                let nl = left.dim();
                g.view_mut((0, 0), (nl, nl)).copy_from(&gl);
                g.view_mut((nl, nl), (right.dim(), right.dim())).copy_from(&gr);
                g
            }
        }
    }

    /// Metric pairing of raw component vectors at `p`.
    pub fn inner_raw(&self, p: &Point, a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
        let g = self.metric_at(p)?;
        Ok((a.transpose() * g * b)[(0, 0)])
    }

    /// Metric pairing of two tangent vectors; the bases must coincide.
    pub fn inner(&self, a: &Tangent, b: &Tangent) -> Result<f64> {
        if !points_coincide(&a.base, &b.base) {
            return Err(GeomError::MismatchedBase);
        }
        self.inner_raw(&a.base, &a.components, &b.components)
    }

    pub fn norm(&self, a: &Tangent) -> Result<f64> {
        Ok(self.inner(a, a)?.max(0.0).sqrt())
    }

    /// Deterministic metric-orthonormal basis at `p`: modified Gram-Schmidt
    /// applied to the chart coordinate frame in index order.
    pub fn orthonormal_basis_at(&self, p: &Point) -> Result<Vec<DVector<f64>>> {
        let g = self.metric_at(p)?;
        let n = self.dim();
        let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n);
        for a in 0..n {
            let mut v = DVector::zeros(n);
            v[a] = 1.0;
            for e in &basis {
                let c = (e.transpose() * &g * &v)[(0, 0)];
                v -= e * c;
            }
            let nrm2 = (v.transpose() * &g * &v)[(0, 0)];
            if nrm2 <= 0.0 {
                return Err(GeomError::DegenerateTuple { det: nrm2 });
            }
            basis.push(v / nrm2.sqrt());
        }
        Ok(basis)
    }

    /// Draw a point distributed by the normalized Riemannian volume.
    ///
    /// Torus chart coordinates are already volume-uniform for the flat
    /// metric. The round sphere is sampled area-exactly by a normalized
    /// Gaussian direction in the embedding and pulled back to the chart
    /// covering the landing hemisphere. Products sample factors
    /// independently; non-compact models have no probability volume.
    pub fn sample_point<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<Point> {
        match &self.kind {
            ModelKind::FlatTorus { dim, .. } => {
                Ok(Point::new(0, DVector::from_fn(*dim, |_, _| rng.gen::<f64>())))
            }
            ModelKind::Sphere { dim } => {
                let p = loop {
                    let z = DVector::from_fn(dim + 1, |_, _| {
                        rng.sample::<f64, _>(rand_distr::StandardNormal)
                    });
                    let n = z.norm();
                    if n > 1e-6 {
                        break z / n;
                    }
                };
                let chart = if p[*dim] <= 0.0 { 0 } else { 1 };
                Ok(Point::new(chart, transport::sphere_pull_point(chart, &p)))
            }
            ModelKind::Hyperbolic { .. } => Err(GeomError::NonCompact {
                model: self.name.clone(),
            }),
            ModelKind::Product { left, right } => {
                let pl = left.sample_point(rng)?;
                let pr = right.sample_point(rng)?;
                Ok(self.join_point(&pl, &pr))
            }
        }
    }

    /// A random point suitable for pointwise probing: volume-uniform where a
    /// sampler exists, otherwise drawn from a fixed interior box of the
    /// upper half-space (last coordinate in [1/2, 2]) well away from the
    /// chart boundary.
    pub fn probe_point<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<Point> {
        match &self.kind {
            ModelKind::Hyperbolic { dim } => {
                let mut c = DVector::zeros(*dim);
                for i in 0..dim - 1 {
                    c[i] = rng.gen_range(-1.0..1.0);
                }
                c[dim - 1] = rng.gen_range(0.5..2.0);
                Ok(Point::new(0, c))
            }
            ModelKind::Product { left, right } => {
                let pl = left.probe_point(rng)?;
                let pr = right.probe_point(rng)?;
                Ok(self.join_point(&pl, &pr))
            }
            _ => self.sample_point(rng),
        }
    }

    /// Dimension of the global smooth coordinate target used to build test
    /// functions that are well defined across charts.
    pub fn ambient_dim(&self) -> usize {
        match &self.kind {
            ModelKind::FlatTorus { dim, .. } => 2 * dim,
            ModelKind::Sphere { dim } => dim + 1,
            ModelKind::Hyperbolic { dim } => *dim,
            ModelKind::Product { left, right } => left.ambient_dim() + right.ambient_dim(),
        }
    }

    /// Global smooth coordinates of `p`: torus points map to
    /// `(cos 2πx_i, sin 2πx_i)` pairs, sphere points to the unit embedding,
    /// half-space points to their chart coordinates.
    pub fn ambient_point(&self, p: &Point) -> DVector<f64> {
        match &self.kind {
            ModelKind::FlatTorus { dim, .. } => {
                let mut out = DVector::zeros(2 * dim);
                for i in 0..*dim {
                    let t = 2.0 * std::f64::consts::PI * p.coords[i];
                    out[2 * i] = t.cos();
                    out[2 * i + 1] = t.sin();
                }
                out
            }
            ModelKind::Sphere { .. } => transport::sphere_embed(p.chart, &p.coords),
            ModelKind::Hyperbolic { .. } => p.coords.clone(),
            ModelKind::Product { left, right } => {
                let (pl, pr) = self.split_point(p);
                stack(&left.ambient_point(&pl), &right.ambient_point(&pr))
            }
        }
    }

    /// Differential of `ambient_point` applied to chart components `v` at `p`.
    pub fn ambient_tangent(&self, p: &Point, v: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            ModelKind::FlatTorus { dim, .. } => {
                let two_pi = 2.0 * std::f64::consts::PI;
                let mut out = DVector::zeros(2 * dim);
                for i in 0..*dim {
                    let t = two_pi * p.coords[i];
                    out[2 * i] = -two_pi * t.sin() * v[i];
                    out[2 * i + 1] = two_pi * t.cos() * v[i];
                }
                out
            }
            ModelKind::Sphere { .. } => transport::sphere_push(p.chart, &p.coords, v),
            ModelKind::Hyperbolic { .. } => v.clone(),
            ModelKind::Product { left, right } => {
                let (pl, pr) = self.split_point(p);
                let (vl, vr) = self.split_vec(v);
                stack(&left.ambient_tangent(&pl, &vl), &right.ambient_tangent(&pr, &vr))
            }
        }
    }

    /// Split a product point into factor points (left coordinates first).
    pub fn split_point(&self, p: &Point) -> (Point, Point) {
        let ModelKind::Product { left, right } = &self.kind else {
            panic!("split_point on a non-product model");
        };
        let nl = left.dim();
        let (cl, cr) = (p.coords.rows(0, nl).into_owned(), p.coords.rows(nl, right.dim()).into_owned());
        let lc = p.chart % left.chart_count();
        let rc = p.chart / left.chart_count();
        (Point::new(lc, cl), Point::new(rc, cr))
    }

    pub fn join_point(&self, pl: &Point, pr: &Point) -> Point {
        let ModelKind::Product { left, .. } = &self.kind else {
            panic!("join_point on a non-product model");
        };
        Point::new(pl.chart + left.chart_count() * pr.chart, stack(&pl.coords, &pr.coords))
    }

    pub fn split_vec(&self, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let ModelKind::Product { left, right } = &self.kind else {
            panic!("split_vec on a non-product model");
        };
        (
            v.rows(0, left.dim()).into_owned(),
            v.rows(left.dim(), right.dim()).into_owned(),
        )
    }
}

pub(crate) fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

fn parse_kind(name: &str, params: &Params) -> Result<ModelKind> {
    let unknown = || GeomError::UnknownManifold(name.to_string());
    if let Some(rest) = name.strip_prefix("product:") {
        // `<a>x<b>` where both halves are registry names; try every split.
        for (idx, _) in rest.match_indices('x') {
            let (a, b) = (&rest[..idx], &rest[idx + 1..]);
            if a.is_empty() || b.is_empty() {
                continue;
            }
            if let (Ok(left), Ok(right)) = (
                ManifoldModel::from_name(a, params.clone()),
                ManifoldModel::from_name(b, params.clone()),
            ) {
                return Ok(ModelKind::Product {
                    left: Box::new(left),
                    right: Box::new(right),
                });
            }
        }
        return Err(unknown());
    }
    let (family, dim_str) = name.split_once(':').ok_or_else(unknown)?;
    let dim: usize = dim_str.parse().map_err(|_| unknown())?;
    if dim == 0 || dim > 8 {
        return Err(unknown());
    }
    match family {
        "torus" => Ok(ModelKind::FlatTorus { dim, complex: false }),
        "ctorus" if dim % 2 == 0 => Ok(ModelKind::FlatTorus { dim, complex: true }),
        "sphere" if dim >= 2 => Ok(ModelKind::Sphere { dim }),
        "hyperbolic" if dim >= 2 => Ok(ModelKind::Hyperbolic { dim }),
        _ => Err(unknown()),
    }
}
