//! Christoffel symbols and the curvature tensor.
//!
//! Each model has a closed-form Levi-Civita connection (the registry metrics
//! are flat, conformal, or block products of those), plus a generic path that
//! differentiates the metric. The curvature convention is
//! `R(X,Y)Z = ∇_X∇_Y Z − ∇_Y∇_X Z − ∇_[X,Y] Z`, which makes
//! `⟨R(X,Y)Y,X⟩ > 0` on the round sphere.

use super::{points_coincide, ManifoldModel, ModelKind, Point, Tangent};
use crate::error::{GeomError, Result};
use nalgebra::{DMatrix, DVector};

/// Christoffel symbols at a point: `sym[k][(i, j)] = Γ^k_ij`.
#[derive(Debug, Clone)]
pub struct Christoffel {
    sym: Vec<DMatrix<f64>>,
}

impl Christoffel {
    pub fn zeros(n: usize) -> Self {
        Self {
            sym: vec![DMatrix::zeros(n, n); n],
        }
    }

    pub fn dim(&self) -> usize {
        self.sym.len()
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.sym[k][(i, j)]
    }

    /// `out_k = Γ^k_ij a_i b_j`; the geodesic equation uses `-contract(v, v)`.
    pub fn contract(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut out = DVector::zeros(n);
        for k in 0..n {
            out[k] = (a.transpose() * &self.sym[k] * b)[(0, 0)];
        }
        out
    }

    /// Max of `|Γ^k_ij − Γ^k_ji|`; the Levi-Civita connection is symmetric.
    pub fn max_symmetry_defect(&self) -> f64 {
        self.sym
            .iter()
            .map(|m| (m - m.transpose()).amax())
            .fold(0.0, f64::max)
    }

    fn block(left: &Christoffel, right: &Christoffel) -> Christoffel {
        let (nl, nr) = (left.dim(), right.dim());
        let n = nl + nr;
        let mut sym = vec![DMatrix::zeros(n, n); n];
        for k in 0..nl {
            sym[k].view_mut((0, 0), (nl, nl)).copy_from(&left.sym[k]);
        }
        for k in 0..nr {
            sym[nl + k].view_mut((nl, nl), (nr, nr)).copy_from(&right.sym[k]);
        }
        Christoffel { sym }
    }

    /// Symbols of a conformally flat metric `e^{2σ} δ` from the euclidean
    /// gradient of `σ`: `Γ^k_ij = δ_ik ∂_j σ + δ_jk ∂_i σ − δ_ij ∂_k σ`.
    fn conformal(sigma_grad: &DVector<f64>) -> Christoffel {
        let n = sigma_grad.len();
        let mut c = Christoffel::zeros(n);
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut v = 0.0;
                    if i == k {
                        v += sigma_grad[j];
                    }
                    if j == k {
                        v += sigma_grad[i];
                    }
                    if i == j {
                        v -= sigma_grad[k];
                    }
                    c.sym[k][(i, j)] = v;
                }
            }
        }
        c
    }
}

impl ManifoldModel {
    /// Christoffel symbols at `p`, closed-form when the model allows it.
    pub fn christoffel_at(&self, p: &Point) -> Result<Christoffel> {
        if self.params().use_closed_forms {
            if let Some(c) = self.christoffel_closed(p)? {
                return Ok(c);
            }
        }
        self.christoffel_fd(p, self.params().metric_fd_step)
    }

    /// Closed-form symbols, or `None` when the model has no closed form.
    pub fn christoffel_closed(&self, p: &Point) -> Result<Option<Christoffel>> {
        self.check_contains(p)?;
        Ok(self.christoffel_closed_unchecked(p))
    }

    fn christoffel_closed_unchecked(&self, p: &Point) -> Option<Christoffel> {
        match self.kind() {
            ModelKind::FlatTorus { dim, .. } => Some(Christoffel::zeros(*dim)),
            ModelKind::Sphere { .. } => {
                let r2 = p.coords.norm_squared();
                Some(Christoffel::conformal(&(&p.coords * (-2.0 / (1.0 + r2)))))
            }
            ModelKind::Hyperbolic { dim } => {
                let mut sg = DVector::zeros(*dim);
                sg[dim - 1] = -1.0 / p.coords[dim - 1];
                Some(Christoffel::conformal(&sg))
            }
            ModelKind::Product { left, right } => {
                let (pl, pr) = self.split_point(p);
                let cl = left.christoffel_closed_unchecked(&pl)?;
                let cr = right.christoffel_closed_unchecked(&pr)?;
                Some(Christoffel::block(&cl, &cr))
            }
        }
    }

    /// Symbols from central differences of the metric:
    /// `Γ^m_ij = g^{mk} (∂_i g_kj + ∂_j g_ki − ∂_k g_ij) / 2`.
    pub fn christoffel_fd(&self, p: &Point, h: f64) -> Result<Christoffel> {
        let n = self.dim();
        let g = self.metric_at(p)?;
        let ginv = g.clone().try_inverse().ok_or(GeomError::DegenerateTuple {
            det: g.determinant(),
        })?;
        let mut dg = Vec::with_capacity(n);
        for l in 0..n {
            let mut e = DVector::zeros(n);
            e[l] = h;
            let gp = self.metric_at(&Point::new(p.chart, &p.coords + &e))?;
            let gm = self.metric_at(&Point::new(p.chart, &p.coords - &e))?;
            dg.push((gp - gm) / (2.0 * h));
        }
        let mut c = Christoffel::zeros(n);
        for m in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for k in 0..n {
                        s += ginv[(m, k)] * (dg[i][(k, j)] + dg[j][(k, i)] - dg[k][(i, j)]);
                    }
                    c.sym[m][(i, j)] = 0.5 * s;
                }
            }
        }
        Ok(c)
    }

    /// Curvature tensor applied to tangents: `R(x, y)z` at `p`.
    ///
    /// All three tangents must be based at `p`. Closed forms are used when
    /// available; otherwise the Christoffel field is differentiated.
    pub fn riemann(&self, p: &Point, x: &Tangent, y: &Tangent, z: &Tangent) -> Result<Tangent> {
        for t in [x, y, z] {
            if !points_coincide(&t.base, p) {
                return Err(GeomError::MismatchedBase);
            }
        }
        self.check_contains(p)?;
        if self.params().use_closed_forms {
            if let Some(out) = self.riemann_closed_unchecked(p, &x.components, &y.components, &z.components) {
                return Ok(Tangent::new(p.clone(), out));
            }
        }
        let out = self.riemann_fd_components(p, &x.components, &y.components, &z.components, self.params().metric_fd_step)?;
        Ok(Tangent::new(p.clone(), out))
    }

    /// Finite-difference curvature along the generic path, regardless of
    /// closed forms; used to cross-check the closed expressions.
    pub fn riemann_fd(&self, p: &Point, x: &Tangent, y: &Tangent, z: &Tangent, h: f64) -> Result<Tangent> {
        for t in [x, y, z] {
            if !points_coincide(&t.base, p) {
                return Err(GeomError::MismatchedBase);
            }
        }
        let out = self.riemann_fd_components(p, &x.components, &y.components, &z.components, h)?;
        Ok(Tangent::new(p.clone(), out))
    }

    fn riemann_closed_unchecked(
        &self,
        p: &Point,
        x: &DVector<f64>,
        y: &DVector<f64>,
        z: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        match self.kind() {
            ModelKind::FlatTorus { dim, .. } => Some(DVector::zeros(*dim)),
            // Constant curvature K: R(x,y)z = K (⟨y,z⟩ x − ⟨x,z⟩ y).
            ModelKind::Sphere { .. } | ModelKind::Hyperbolic { .. } => {
                let kappa = if matches!(self.kind(), ModelKind::Sphere { .. }) {
                    1.0
                } else {
                    -1.0
                };
                let g = self.metric_unchecked(p);
                let yz = (y.transpose() * &g * z)[(0, 0)];
                let xz = (x.transpose() * &g * z)[(0, 0)];
                Some(x * (kappa * yz) - y * (kappa * xz))
            }
            ModelKind::Product { left, right } => {
                let (pl, pr) = self.split_point(p);
                let (xl, xr) = self.split_vec(x);
                let (yl, yr) = self.split_vec(y);
                let (zl, zr) = self.split_vec(z);
                let rl = left.riemann_closed_unchecked(&pl, &xl, &yl, &zl)?;
                let rr = right.riemann_closed_unchecked(&pr, &xr, &yr, &zr)?;
                Some(super::stack(&rl, &rr))
            }
        }
    }

    fn riemann_fd_components(
        &self,
        p: &Point,
        x: &DVector<f64>,
        y: &DVector<f64>,
        z: &DVector<f64>,
        h: f64,
    ) -> Result<DVector<f64>> {
        let n = self.dim();
        let gamma = self.christoffel_at(p)?;
        // dγ[l] = ∂_l Γ by central differences of the best Christoffel path.
        let mut dgamma = Vec::with_capacity(n);
        for l in 0..n {
            let mut e = DVector::zeros(n);
            e[l] = h;
            let cp = self.christoffel_at(&Point::new(p.chart, &p.coords + &e))?;
            let cm = self.christoffel_at(&Point::new(p.chart, &p.coords - &e))?;
            let mut d = Vec::with_capacity(n);
            for k in 0..n {
                let mut dm = DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        dm[(i, j)] = (cp.get(k, i, j) - cm.get(k, i, j)) / (2.0 * h);
                    }
                }
                d.push(dm);
            }
            dgamma.push(d);
        }
        // R^l_{kij} = ∂_i Γ^l_jk − ∂_j Γ^l_ik + Γ^l_im Γ^m_jk − Γ^l_jm Γ^m_ik,
        // contracted with x^i y^j z^k.
        let mut out = DVector::zeros(n);
        for l in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let mut r = dgamma[i][l][(j, k)] - dgamma[j][l][(i, k)];
                        for m in 0..n {
                            r += gamma.get(l, i, m) * gamma.get(m, j, k)
                                - gamma.get(l, j, m) * gamma.get(m, i, k);
                        }
                        acc += r * x[i] * y[j] * z[k];
                    }
                }
            }
            out[l] = acc;
        }
        Ok(out)
    }

    /// Curvature operator matrix on Λ² in the given orthonormal full frame:
    /// entry `[(i,j), (l,m)] = ⟨R(e_i, e_j) e_m, e_l⟩` over lexicographic
    /// index pairs `i < j`, `l < m`.
    pub fn curvature_operator(&self, p: &Point, frame: &[Tangent]) -> Result<CurvatureOperator> {
        let n = self.dim();
        if frame.len() != n {
            return Err(GeomError::InvalidArgument(format!(
                "curvature operator needs a full frame: got {} vectors in dimension {n}",
                frame.len()
            )));
        }
        let mut defect: f64 = 0.0;
        for (a, ea) in frame.iter().enumerate() {
            for (b, eb) in frame.iter().enumerate() {
                let want = if a == b { 1.0 } else { 0.0 };
                defect = defect.max((self.inner(ea, eb)? - want).abs());
            }
        }
        if defect > self.params().orthonormal_tol {
            return Err(GeomError::NotOrthonormal { defect });
        }
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .collect();
        let d = pairs.len();
        let mut entries = DMatrix::zeros(d, d);
        for (row, &(i, j)) in pairs.iter().enumerate() {
            for (col, &(l, m)) in pairs.iter().enumerate() {
                let r = self.riemann(p, &frame[i], &frame[j], &frame[m])?;
                entries[(row, col)] = self.inner(&r, &frame[l])?;
            }
        }
        Ok(CurvatureOperator { pairs, entries })
    }
}

/// The curvature operator on Λ² expressed in an orthonormal frame.
#[derive(Debug, Clone)]
pub struct CurvatureOperator {
    pairs: Vec<(usize, usize)>,
    entries: DMatrix<f64>,
}

impl CurvatureOperator {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Asymmetry of the raw entries; the operator is self-adjoint, so this
    /// measures numerical error only.
    pub fn symmetry_defect(&self) -> f64 {
        (&self.entries - self.entries.transpose()).amax()
    }

    /// Eigenvalues of the symmetrized matrix, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let sym = (&self.entries + self.entries.transpose()) * 0.5;
        let mut ev: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev
    }

    pub fn is_nonpositive(&self, tol: f64) -> bool {
        self.eigenvalues().last().map_or(true, |top| *top <= tol)
    }
}
