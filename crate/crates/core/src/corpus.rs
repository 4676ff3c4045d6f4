//! Seeded families of smooth test functions on the tuple bundle.
//!
//! Corpus functions are built from the model's global smooth coordinates
//! (`ambient_point` / `ambient_tangent`), so one closed expression is valid
//! across every chart and every identity can be integrated over the whole
//! manifold. Base dependence enters through cosines of random ambient
//! frequencies, fiber dependence through linear pairings and Gaussian bumps
//! of the pushed slot vectors. Generation is deterministic per seed.

use crate::bundle::{Frame, ScalarBundleFn, SemiBasicFn};
use crate::error::{GeomError, Result};
use crate::manifold::{ManifoldModel, ModelKind, Tangent};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
struct Term {
    amp: f64,
    /// Base factor `cos(⟨omega, A(p)⟩ + phase)`; omitted for fiber-only terms.
    omega: Option<DVector<f64>>,
    phase: f64,
    /// Fiber linear factors `⟨push(v_slot), dir⟩`.
    lin: Vec<(usize, DVector<f64>)>,
    /// Gaussian factor `exp(−(⟨push(v_slot), dir⟩ − center)² / 2 width²)`.
    bump: Option<(usize, DVector<f64>, f64, f64)>,
}

/// One deterministic corpus function.
#[derive(Debug, Clone)]
pub struct CorpusFn {
    label: String,
    /// Raw chart components instead of ambient pushes for the fiber factors;
    /// only meaningful on single-chart flat models, where it makes the
    /// function exactly invariant under every frame flow.
    raw_fiber: bool,
    terms: Vec<Term>,
}

impl CorpusFn {
    pub fn label(&self) -> &str {
        &self.label
    }
}

impl ScalarBundleFn for CorpusFn {
    fn eval(&self, m: &ManifoldModel, f: &Frame) -> Result<f64> {
        let ambient = m.ambient_point(&f.base);
        let mut pushed: Vec<Option<DVector<f64>>> = vec![None; f.k()];
        let mut push = |slot: usize, vectors: &Vec<DVector<f64>>| -> DVector<f64> {
            if self.raw_fiber {
                return vectors[slot].clone();
            }
            pushed[slot]
                .get_or_insert_with(|| m.ambient_tangent(&f.base, &vectors[slot]))
                .clone()
        };
        let mut value = 0.0;
        for term in &self.terms {
            let mut t = term.amp;
            if let Some(omega) = &term.omega {
                t *= (omega.dot(&ambient) + term.phase).cos();
            }
            for (slot, dir) in &term.lin {
                t *= push(*slot, &f.vectors).dot(dir);
            }
            if let Some((slot, dir, center, width)) = &term.bump {
                let x = push(*slot, &f.vectors).dot(dir) - center;
                t *= (-x * x / (2.0 * width * width)).exp();
            }
            value += t;
        }
        Ok(value)
    }
}

/// Frequency scale for base factors. The torus ambient map carries its own
/// 2π, while sphere and half-space coordinates are order one, so those get
/// boosted to keep finite-difference truncation error well above rounding
/// noise in convergence studies.
fn frequency_scale(m: &ManifoldModel) -> f64 {
    match m.kind() {
        ModelKind::FlatTorus { .. } => 1.0,
        ModelKind::Sphere { .. } => 3.0,
        ModelKind::Hyperbolic { .. } => 2.0,
        ModelKind::Product { .. } => 2.5,
    }
}

fn unit_dir<R: Rng>(rng: &mut R, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-3 {
            return v / n;
        }
    }
}

/// Deterministic family of mixed base-and-fiber functions for `k`-tuples.
pub fn scalar_corpus(m: &ManifoldModel, k: usize, seed: u64, count: usize) -> Vec<CorpusFn> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ambient = m.ambient_dim();
    let freq = frequency_scale(m);
    (0..count)
        .map(|idx| {
            let n_terms = 2 + (idx % 2);
            let terms = (0..n_terms)
                .map(|_| {
                    let amp = 0.4 + rng.gen_range(0.0..0.8);
                    let omega = DVector::from_fn(ambient, |_, _| {
                        freq * rng.sample::<f64, _>(StandardNormal)
                    });
                    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                    let n_lin = rng.gen_range(0..=2usize);
                    let lin = (0..n_lin)
                        .map(|_| {
                            let slot = rng.gen_range(0..k);
                            (slot, unit_dir(&mut rng, ambient) * (0.5 + rng.gen_range(0.0..1.0)))
                        })
                        .collect();
                    let bump = if rng.gen_bool(0.5) {
                        let slot = rng.gen_range(0..k);
                        let dir = unit_dir(&mut rng, ambient);
                        let center = rng.gen_range(-0.4..0.4);
                        let width = rng.gen_range(0.8..1.6);
                        Some((slot, dir, center, width))
                    } else {
                        None
                    };
                    Term {
                        amp,
                        omega: Some(omega),
                        phase,
                        lin,
                        bump,
                    }
                })
                .collect();
            CorpusFn {
                label: format!("phi[{idx}]"),
                raw_fiber: false,
                terms,
            }
        })
        .collect()
}

/// Fiber-only functions of the raw slot components on a flat torus.
///
/// Single-chart flat transport leaves chart components untouched, so these
/// are exactly invariant under every frame flow: all generators vanish to
/// the last bit, which is what the invariant-function checks require.
pub fn invariant_fiber_corpus(
    m: &ManifoldModel,
    k: usize,
    seed: u64,
    count: usize,
) -> Result<Vec<CorpusFn>> {
    if !m.is_flat_torus() {
        return Err(GeomError::InvalidArgument(format!(
            "flow-invariant fiber corpus exists only on flat tori, not `{}`",
            m.name()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = m.dim();
    Ok((0..count)
        .map(|idx| {
            let n_terms = 2 + (idx % 2);
            let terms = (0..n_terms)
                .map(|_| {
                    let amp = 0.4 + rng.gen_range(0.0..0.8);
                    let n_lin = 1 + rng.gen_range(0..=1usize);
                    let lin = (0..n_lin)
                        .map(|_| {
                            let slot = rng.gen_range(0..k);
                            (slot, unit_dir(&mut rng, n) * (0.5 + rng.gen_range(0.0..1.0)))
                        })
                        .collect();
                    let bump = if rng.gen_bool(0.5) {
                        let slot = rng.gen_range(0..k);
                        Some((
                            slot,
                            unit_dir(&mut rng, n),
                            rng.gen_range(-0.4..0.4),
                            rng.gen_range(0.8..1.6),
                        ))
                    } else {
                        None
                    };
                    Term {
                        amp,
                        omega: None,
                        phase: 0.0,
                        lin,
                        bump,
                    }
                })
                .collect();
            CorpusFn {
                label: format!("inv[{idx}]"),
                raw_fiber: true,
                terms,
            }
        })
        .collect())
}

/// A semi-basic field with corpus scalars as coefficients on a family of
/// globally smooth base fields, each the metric dual of a fixed ambient
/// covector `v ↦ ⟨dir, push(v)⟩`. Chart-local bases would jump across chart
/// seams and leak spurious boundary terms into integration by parts.
#[derive(Debug, Clone)]
pub struct SemiBasicCorpusFn {
    label: String,
    coefs: Vec<CorpusFn>,
    dirs: Vec<DVector<f64>>,
}

impl SemiBasicCorpusFn {
    pub fn label(&self) -> &str {
        &self.label
    }
}

impl SemiBasicFn for SemiBasicCorpusFn {
    fn eval(&self, m: &ManifoldModel, f: &Frame) -> Result<Tangent> {
        let basis = m.orthonormal_basis_at(&f.base)?;
        let pushed: Vec<DVector<f64>> = basis
            .iter()
            .map(|e| m.ambient_tangent(&f.base, e))
            .collect();
        let mut out = DVector::zeros(m.dim());
        for (coef, dir) in self.coefs.iter().zip(&self.dirs) {
            // Expanding the dual of ⟨dir, push(·)⟩ in any orthonormal basis
            // gives the same vector, so the chart choice is invisible here.
            let mut field = DVector::zeros(m.dim());
            for (e, pe) in basis.iter().zip(&pushed) {
                field += e * pe.dot(dir);
            }
            out += field * coef.eval(m, f)?;
        }
        Ok(Tangent::new(f.base.clone(), out))
    }
}

/// Deterministic family of semi-basic vector fields for `k`-tuples.
pub fn semibasic_corpus(
    m: &ManifoldModel,
    k: usize,
    seed: u64,
    count: usize,
) -> Vec<SemiBasicCorpusFn> {
    (0..count)
        .map(|idx| {
            let coefs = scalar_corpus(m, k, seed.wrapping_add(1 + idx as u64), m.dim());
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(9000 + idx as u64));
            let dirs = (0..m.dim())
                .map(|_| {
                    let d = DVector::from_fn(m.ambient_dim(), |_, _| {
                        rng.sample::<f64, _>(StandardNormal)
                    });
                    let n = d.norm();
                    d / n
                })
                .collect();
            SemiBasicCorpusFn {
                label: format!("X[{idx}]"),
                coefs,
                dirs,
            }
        })
        .collect()
}
