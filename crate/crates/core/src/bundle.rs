//! Tuple and frame bundles over a model manifold.
//!
//! A `Frame` is an ordered k-tuple of tangent vectors at a common base point;
//! the orthonormal ones form the k-frame bundle inside the full tuple bundle.
//! This module provides the frame flows (parallel transport of the whole
//! tuple along the geodesic of one slot), their generators, fiberwise
//! Gram-Schmidt, Haar sampling of orthonormal fibers, and the cutoff
//! extension that promotes a function of frames to a smooth function of
//! arbitrary tuples.

use crate::error::{GeomError, Result};
use crate::manifold::{points_coincide, ManifoldModel, Point, Tangent, TransportOpts};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use std::sync::Arc;

/// A scalar function on the tuple bundle. Evaluation must be deterministic;
/// smoothness in base and slots is the caller's contract.
pub trait ScalarBundleFn: Sync {
    fn eval(&self, m: &ManifoldModel, f: &Frame) -> Result<f64>;
}

impl<F> ScalarBundleFn for F
where
    F: Fn(&ManifoldModel, &Frame) -> Result<f64> + Sync,
{
    fn eval(&self, m: &ManifoldModel, f: &Frame) -> Result<f64> {
        self(m, f)
    }
}

/// A semi-basic field: assigns to each tuple a tangent vector at its base.
pub trait SemiBasicFn: Sync {
    fn eval(&self, m: &ManifoldModel, f: &Frame) -> Result<Tangent>;
}

impl<F> SemiBasicFn for F
where
    F: Fn(&ManifoldModel, &Frame) -> Result<Tangent> + Sync,
{
    fn eval(&self, m: &ManifoldModel, f: &Frame) -> Result<Tangent> {
        self(m, f)
    }
}

/// Adapter for closures that cannot fail, so call sites stay clean.
pub struct Plain<F>(pub F);

impl<F> ScalarBundleFn for Plain<F>
where
    F: Fn(&ManifoldModel, &Frame) -> f64 + Sync,
{
    fn eval(&self, m: &ManifoldModel, f: &Frame) -> Result<f64> {
        Ok((self.0)(m, f))
    }
}

impl<F> SemiBasicFn for Plain<F>
where
    F: Fn(&ManifoldModel, &Frame) -> Tangent + Sync,
{
    fn eval(&self, m: &ManifoldModel, f: &Frame) -> Result<Tangent> {
        Ok((self.0)(m, f))
    }
}

/// An ordered k-tuple of tangent vectors at one base point, stored as chart
/// components.
#[derive(Debug, Clone)]
pub struct Frame {
    pub base: Point,
    pub vectors: Vec<DVector<f64>>,
}

impl Frame {
    pub fn new(base: Point, vectors: Vec<DVector<f64>>) -> Self {
        Self { base, vectors }
    }

    pub fn from_tangents(tangents: Vec<Tangent>) -> Result<Self> {
        let Some(first) = tangents.first() else {
            return Err(GeomError::InvalidArgument("empty tuple".into()));
        };
        let base = first.base.clone();
        for t in &tangents {
            if !points_coincide(&t.base, &base) {
                return Err(GeomError::MismatchedBase);
            }
        }
        Ok(Self {
            base,
            vectors: tangents.into_iter().map(|t| t.components).collect(),
        })
    }

    pub fn k(&self) -> usize {
        self.vectors.len()
    }

    /// Slot `i` as a tangent vector. Panics if out of range, like indexing.
    pub fn tangent(&self, i: usize) -> Tangent {
        Tangent::new(self.base.clone(), self.vectors[i].clone())
    }

    /// Copy of the frame with slot `i` replaced.
    pub fn with_vector(&self, i: usize, components: DVector<f64>) -> Frame {
        let mut vectors = self.vectors.clone();
        vectors[i] = components;
        Frame {
            base: self.base.clone(),
            vectors,
        }
    }

    pub fn gram(&self, m: &ManifoldModel) -> Result<DMatrix<f64>> {
        let g = m.metric_at(&self.base)?;
        let k = self.k();
        let mut out = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in 0..k {
                out[(a, b)] = (self.vectors[a].transpose() * &g * &self.vectors[b])[(0, 0)];
            }
        }
        Ok(out)
    }

    /// Max deviation of the Gram matrix from the identity.
    pub fn gram_defect(&self, m: &ManifoldModel) -> Result<f64> {
        let k = self.k();
        Ok((self.gram(m)? - DMatrix::identity(k, k)).amax())
    }

    pub fn is_orthonormal(&self, m: &ManifoldModel) -> Result<bool> {
        Ok(self.gram_defect(m)? <= m.params().orthonormal_tol)
    }

    pub fn check_orthonormal(&self, m: &ManifoldModel) -> Result<()> {
        let defect = self.gram_defect(m)?;
        if defect <= m.params().orthonormal_tol {
            Ok(())
        } else {
            Err(GeomError::NotOrthonormal { defect })
        }
    }
}

/// A tangent vector to the tuple bundle at a frame: one horizontal component
/// (a tangent at the base) plus one vertical component per slot.
#[derive(Debug, Clone)]
pub struct BundleTangent {
    pub horizontal: Tangent,
    pub verticals: Vec<DVector<f64>>,
}

impl BundleTangent {
    /// For a frame on the orthonormal bundle, tangency to the fiber means the
    /// slot-pairing matrix `⟨vertical_i, v_j⟩ + ⟨vertical_j, v_i⟩` vanishes.
    /// Returns the max violation.
    pub fn fiber_defect(&self, m: &ManifoldModel, f: &Frame) -> Result<f64> {
        let k = f.k();
        if self.verticals.len() != k {
            return Err(GeomError::InvalidArgument(format!(
                "{} verticals for a {k}-tuple",
                self.verticals.len()
            )));
        }
        let mut worst: f64 = 0.0;
        for i in 0..k {
            for j in 0..k {
                let a = m.inner_raw(&f.base, &self.verticals[i], &f.vectors[j])?;
                let b = m.inner_raw(&f.base, &self.verticals[j], &f.vectors[i])?;
                worst = worst.max((a + b).abs());
            }
        }
        Ok(worst)
    }
}

/// Transport every slot of `f` along the geodesic leaving its base with chart
/// velocity `dir` for time `t`. This is the horizontal lift of the base
/// geodesic through `f`.
pub fn horizontal_lift(m: &ManifoldModel, f: &Frame, dir: &DVector<f64>, t: f64) -> Result<Frame> {
    let out = m.transport_many(&f.base, dir, t, &f.vectors, TransportOpts::default())?;
    Ok(Frame::new(out.end, out.vectors))
}

/// The i-th frame flow: transport the whole tuple along the geodesic of slot
/// `i`. Orthonormal frames stay orthonormal; for those, long flows are kept
/// clean by periodic re-orthonormalization pivoted on slot `i`, so the slot
/// vector never drifts off the geodesic velocity.
pub fn frame_flow(m: &ManifoldModel, f: &Frame, i: usize, t: f64) -> Result<Frame> {
    if i >= f.k() {
        return Err(GeomError::IndexOutOfRange { index: i, k: f.k() });
    }
    let reorth = f.gram_defect(m)? <= m.params().orthonormal_tol;
    let opts = TransportOpts {
        reorth,
        pivot: if reorth { Some(i) } else { None },
    };
    let dir = f.vectors[i].clone();
    let out = m.transport_many(&f.base, &dir, t, &f.vectors, opts)?;
    Ok(Frame::new(out.end, out.vectors))
}

/// Generator of the i-th frame flow applied to `phi`, by central difference
/// with step `h`.
pub fn generator(
    m: &ManifoldModel,
    phi: &dyn ScalarBundleFn,
    f: &Frame,
    i: usize,
    h: f64,
) -> Result<f64> {
    let plus = phi.eval(m, &frame_flow(m, f, i, h)?)?;
    let minus = phi.eval(m, &frame_flow(m, f, i, -h)?)?;
    Ok((plus - minus) / (2.0 * h))
}

/// Metric Gram-Schmidt in slot order. Fails on numerically dependent tuples.
///
/// Modified Gram-Schmidt with pivot normalization has positive diagonal in
/// the triangular factor by construction, so the output is the canonical
/// orthonormalization (no sign fix needed, unlike generic QR).
pub fn gram_schmidt(m: &ManifoldModel, f: &Frame) -> Result<Frame> {
    let gram = f.gram(m)?;
    let det = gram.determinant();
    if det <= m.params().gram_det_floor {
        return Err(GeomError::DegenerateTuple { det });
    }
    let g = m.metric_at(&f.base)?;
    let pair = |a: &DVector<f64>, b: &DVector<f64>| (a.transpose() * &g * b)[(0, 0)];
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(f.k());
    for v in &f.vectors {
        let mut w = v.clone();
        for e in &out {
            let c = pair(e, &w);
            w -= e * c;
        }
        let nrm2 = pair(&w, &w);
        if nrm2 <= m.params().gram_det_floor {
            return Err(GeomError::DegenerateTuple { det: nrm2 });
        }
        out.push(w / nrm2.sqrt());
    }
    Ok(Frame::new(f.base.clone(), out))
}

/// Keep the first `k` slots.
pub fn truncate_frame(f: &Frame, k: usize) -> Result<Frame> {
    if k == 0 || k > f.k() {
        return Err(GeomError::IndexOutOfRange { index: k, k: f.k() });
    }
    Ok(Frame::new(f.base.clone(), f.vectors[..k].to_vec()))
}

/// Draw a Haar-distributed orthonormal k-frame in the fiber over `p`.
///
/// Gaussian coefficients in a fixed metric-orthonormal basis, orthonormalized
/// by modified Gram-Schmidt; rotation invariance of the Gaussian makes the
/// result Haar on the orthonormal fiber.
pub fn sample_fiber<R: Rng>(m: &ManifoldModel, p: &Point, k: usize, rng: &mut R) -> Result<Frame> {
    let n = m.dim();
    if k == 0 || k > n {
        return Err(GeomError::IndexOutOfRange { index: k, k: n });
    }
    let basis = m.orthonormal_basis_at(p)?;
    'redraw: loop {
        let mut cols: Vec<DVector<f64>> = (0..k)
            .map(|_| DVector::from_fn(n, |_, _| rng.sample(StandardNormal)))
            .collect();
        for a in 0..k {
            for b in 0..a {
                let c = cols[b].dot(&cols[a]);
                let q = cols[b].clone();
                cols[a] -= q * c;
            }
            let nrm = cols[a].norm();
            // A ~1e-6-collinear draw is astronomically unlikely; redrawing
            // keeps the map measurable and exact rather than clamping.
            if nrm < 1e-6 {
                continue 'redraw;
            }
            cols[a] /= nrm;
        }
        let vectors = cols
            .iter()
            .map(|c| {
                let mut v = DVector::zeros(n);
                for (a, e) in basis.iter().enumerate() {
                    v += e * c[a];
                }
                v
            })
            .collect();
        return Ok(Frame::new(p.clone(), vectors));
    }
}

/// Which smooth step profile a cutoff extension uses. Both are flat at the
/// ends to all orders; results must not depend on the choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BumpKind {
    ExpReciprocal,
    ExpReciprocalSquare,
}

/// Smooth step: 0 at or below 1/2, 1 at or above 3/4, strictly increasing in
/// between, smooth everywhere.
pub fn smooth_step(kind: BumpKind, t: f64) -> f64 {
    let bump = |x: f64| -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            match kind {
                BumpKind::ExpReciprocal => (-1.0 / x).exp(),
                BumpKind::ExpReciprocalSquare => (-1.0 / (x * x)).exp(),
            }
        }
    };
    let s = 4.0 * t - 2.0;
    let a = bump(s);
    let b = bump(1.0 - s);
    if a == 0.0 {
        0.0
    } else if b == 0.0 {
        1.0
    } else {
        a / (a + b)
    }
}

/// Smooth extension of a function of orthonormal n-frames to all n-tuples:
/// orthonormalize the tuple, evaluate, and fade out by Gram determinant so
/// the extension vanishes identically near degenerate tuples.
pub struct CutoffExtension {
    inner: Arc<dyn ScalarBundleFn + Send + Sync>,
    bump: BumpKind,
}

impl CutoffExtension {
    pub fn new(inner: Arc<dyn ScalarBundleFn + Send + Sync>) -> Self {
        Self {
            inner,
            bump: BumpKind::ExpReciprocal,
        }
    }

    pub fn with_bump(inner: Arc<dyn ScalarBundleFn + Send + Sync>, bump: BumpKind) -> Self {
        Self { inner, bump }
    }
}

impl ScalarBundleFn for CutoffExtension {
    fn eval(&self, m: &ManifoldModel, f: &Frame) -> Result<f64> {
        if f.k() != m.dim() {
            return Err(GeomError::InvalidArgument(format!(
                "cutoff extension lives on full tuples: got {} slots in dimension {}",
                f.k(),
                m.dim()
            )));
        }
        let det = f.gram(m)?.determinant();
        let h = smooth_step(self.bump, det);
        if h == 0.0 {
            return Ok(0.0);
        }
        let on = gram_schmidt(m, f)?;
        Ok(h * self.inner.eval(m, &on)?)
    }
}
