//! Pointwise identity residuals on the tuple and frame bundles.
//!
//! Each check evaluates left and right sides of one differential identity at
//! a single frame with explicit finite-difference steps, and reports the
//! residual together with the magnitude of the largest participating term so
//! callers can judge it relative to scale. Nested derivatives use the
//! caller's step for the outer difference and `Params::inner_step` of it for
//! the inner ones; single-level checks use the step directly.

use crate::bundle::{generator, Frame, ScalarBundleFn};
use crate::diffops::{cov_h, cov_v, div_h, div_v, grad_h, grad_v, grad_v_all, grad_v_proj_all};
use crate::error::{GeomError, Result};
use crate::manifold::{points_coincide, ManifoldModel, Tangent};
use serde::{Deserialize, Serialize};

/// The pointwise identities this crate can check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IdentityId {
    /// Mixed vertical-then-horizontal versus horizontal-then-vertical second
    /// derivatives agree: `⟨∇^{v,i}_w grad_h φ, u⟩ = ⟨∇^h_u grad^{v,i} φ, w⟩`.
    SymGrad,
    /// Divergence form of the same symmetry:
    /// `div^{v,i} grad_h φ = div^h grad^{v,i} φ`.
    SymDiv,
    /// Horizontal second derivatives commute up to curvature paired with the
    /// vertical gradients:
    /// `⟨∇^h_w grad_h φ, u⟩ − ⟨∇^h_u grad_h φ, w⟩ = Σ_l ⟨R(g_l, v_l) w, u⟩`.
    Tensor,
    /// Flow generators commute up to curvature:
    /// `[G^i, G^j] φ = Σ_l ⟨R(g_l, v_l) v_i, v_j⟩`.
    SymFlow,
    /// Vertical gradients of a generator:
    /// `⟨grad^{v,i} G^j φ, v_l⟩ = G^j ⟨grad^{v,i} φ, v_l⟩ + δ_ij G^l φ`.
    GGradv,
    /// The pointwise energy identity for the pair `(i, j)`:
    /// `div^{v,j} Z^i + div^h Y^{j,i} + δ_ij ‖grad_h φ‖²
    ///    = Σ_l ⟨R(g_l, v_l) v_i, g_j⟩ + 2 ⟨grad_h φ, grad^{v,j} G^i φ⟩`
    /// with `Y^{j,i} = ⟨grad_h φ, g_j⟩ v_i − (G^i φ) g_j` and
    /// `Z^i = (G^i φ) grad_h φ`.
    Pestov,
    /// For functions of the span of the first `k` slots, the full wedge sum
    /// collapses: `Σ_{j≤n} w_j ∧ v_j = 2 Σ_{j≤k} w_j ∧ v_j`.
    Wedge,
    /// For the same functions the projected vertical gradients pair to zero
    /// inside the first `k` slots and inside the last `n − k` slots.
    GradvSpan,
}

impl IdentityId {
    pub fn as_str(self) -> &'static str {
        match self {
            IdentityId::SymGrad => "SYM_GRAD",
            IdentityId::SymDiv => "SYM_DIV",
            IdentityId::Tensor => "TENSOR",
            IdentityId::SymFlow => "SYM_FLOW",
            IdentityId::GGradv => "G_GRADV",
            IdentityId::Pestov => "PESTOV",
            IdentityId::Wedge => "WEDGE",
            IdentityId::GradvSpan => "GRADV_SPAN",
        }
    }

    pub const ALL_POINTWISE: [IdentityId; 6] = [
        IdentityId::SymGrad,
        IdentityId::SymDiv,
        IdentityId::Tensor,
        IdentityId::SymFlow,
        IdentityId::GGradv,
        IdentityId::Pestov,
    ];
}

/// Auxiliary data an identity needs beyond the frame: slot indices and test
/// directions.
#[derive(Debug, Clone)]
pub enum Aux {
    /// Directions `u`, `w` and one slot (SYM_GRAD).
    DirectionsSlot { u: Tangent, w: Tangent, i: usize },
    /// One slot index (SYM_DIV).
    Slot { i: usize },
    /// Two directions (TENSOR).
    Directions { u: Tangent, w: Tangent },
    /// Two slot indices (SYM_FLOW, PESTOV).
    SlotPair { i: usize, j: usize },
    /// Three slot indices (G_GRADV).
    SlotTriple { i: usize, j: usize, l: usize },
    /// Span size for full-frame checks (WEDGE, GRADV_SPAN).
    Span { k: usize },
}

impl Aux {
    /// Indices carried by the auxiliary data, for reporting.
    pub fn indices(&self) -> Vec<usize> {
        match self {
            Aux::DirectionsSlot { i, .. } | Aux::Slot { i } => vec![*i],
            Aux::Directions { .. } => vec![],
            Aux::SlotPair { i, j } => vec![*i, *j],
            Aux::SlotTriple { i, j, l } => vec![*i, *j, *l],
            Aux::Span { k } => vec![*k],
        }
    }
}

/// Residual of one pointwise check: the signed defect plus the magnitude of
/// the largest term that entered it.
#[derive(Debug, Clone, Copy)]
pub struct Residual {
    pub value: f64,
    pub scale: f64,
    pub fd_step: f64,
}

impl Residual {
    /// Defect relative to the terms that produced it, floored at scale 1 so
    /// identities between near-zero quantities are judged absolutely.
    pub fn relative(&self) -> f64 {
        self.value.abs() / self.scale.max(1.0)
    }
}

fn check_slot(id: IdentityId, idx: usize, k: usize) -> Result<()> {
    if idx >= k {
        return Err(GeomError::AuxMismatch {
            id: id.as_str().into(),
            detail: format!("slot {idx} out of range for a {k}-tuple"),
        });
    }
    Ok(())
}

fn check_direction(id: IdentityId, dir: &Tangent, f: &Frame) -> Result<()> {
    if !points_coincide(&dir.base, &f.base) {
        return Err(GeomError::AuxMismatch {
            id: id.as_str().into(),
            detail: "direction is not based at the frame's base point".into(),
        });
    }
    Ok(())
}

fn aux_mismatch(id: IdentityId) -> GeomError {
    GeomError::AuxMismatch {
        id: id.as_str().into(),
        detail: "wrong auxiliary variant for this identity".into(),
    }
}

fn max_abs(terms: &[f64]) -> f64 {
    terms.iter().fold(0.0, |acc, t| acc.max(t.abs()))
}

/// Evaluate the residual of `id` for `phi` at the frame `f`.
///
/// `fd_step` is the outermost finite-difference step; every derivative inside
/// the identity scales with it, so refining it refines the whole check.
pub fn pointwise_residual(
    m: &ManifoldModel,
    phi: &dyn ScalarBundleFn,
    f: &Frame,
    id: IdentityId,
    aux: &Aux,
    fd_step: f64,
) -> Result<Residual> {
    if !(fd_step.is_finite() && fd_step > 0.0) {
        return Err(GeomError::InvalidArgument(format!(
            "finite-difference step must be positive, got {fd_step}"
        )));
    }
    let h_o = fd_step;
    let h_i = m.params().inner_step(fd_step);
    let k = f.k();
    let (value, scale) = match (id, aux) {
        (IdentityId::SymGrad, Aux::DirectionsSlot { u, w, i }) => {
            let i = *i;
            check_slot(id, i, k)?;
            check_direction(id, u, f)?;
            check_direction(id, w, f)?;
            let gh_field = move |m: &ManifoldModel, fr: &Frame| grad_h(m, phi, fr, h_i);
            let gv_field = move |m: &ManifoldModel, fr: &Frame| grad_v(m, phi, fr, i, h_i);
            let t1 = m.inner(&cov_v(m, &gh_field, f, i, w, h_o)?, u)?;
            let t2 = m.inner(&cov_h(m, &gv_field, f, u, h_o)?, w)?;
            (t1 - t2, max_abs(&[t1, t2]))
        }
        (IdentityId::SymDiv, Aux::Slot { i }) => {
            let i = *i;
            check_slot(id, i, k)?;
            let gh_field = move |m: &ManifoldModel, fr: &Frame| grad_h(m, phi, fr, h_i);
            let gv_field = move |m: &ManifoldModel, fr: &Frame| grad_v(m, phi, fr, i, h_i);
            let t1 = div_v(m, &gh_field, f, i, h_o)?;
            let t2 = div_h(m, &gv_field, f, h_o)?;
            (t1 - t2, max_abs(&[t1, t2]))
        }
        (IdentityId::Tensor, Aux::Directions { u, w }) => {
            check_direction(id, u, f)?;
            check_direction(id, w, f)?;
            let gh_field = move |m: &ManifoldModel, fr: &Frame| grad_h(m, phi, fr, h_i);
            let t1 = m.inner(&cov_h(m, &gh_field, f, w, h_o)?, u)?;
            let t2 = m.inner(&cov_h(m, &gh_field, f, u, h_o)?, w)?;
            let mut t3 = 0.0;
            for l in 0..k {
                let g_l = grad_v(m, phi, f, l, h_i)?;
                let r = m.riemann(&f.base, &g_l, &f.tangent(l), w)?;
                t3 += m.inner(&r, u)?;
            }
            (t1 - t2 - t3, max_abs(&[t1, t2, t3]))
        }
        (IdentityId::SymFlow, Aux::SlotPair { i, j }) => {
            let (i, j) = (*i, *j);
            check_slot(id, i, k)?;
            check_slot(id, j, k)?;
            let gj = move |m: &ManifoldModel, fr: &Frame| generator(m, phi, fr, j, h_i);
            let gi = move |m: &ManifoldModel, fr: &Frame| generator(m, phi, fr, i, h_i);
            let t1 = generator(m, &gj, f, i, h_o)?;
            let t2 = generator(m, &gi, f, j, h_o)?;
            let mut t3 = 0.0;
            for l in 0..k {
                let g_l = grad_v(m, phi, f, l, h_i)?;
                let r = m.riemann(&f.base, &g_l, &f.tangent(l), &f.tangent(i))?;
                t3 += m.inner(&r, &f.tangent(j))?;
            }
            (t1 - t2 - t3, max_abs(&[t1, t2, t3]))
        }
        (IdentityId::GGradv, Aux::SlotTriple { i, j, l }) => {
            let (i, j, l) = (*i, *j, *l);
            check_slot(id, i, k)?;
            check_slot(id, j, k)?;
            check_slot(id, l, k)?;
            let gj = move |m: &ManifoldModel, fr: &Frame| generator(m, phi, fr, j, h_i);
            let lhs_grad = grad_v(m, &gj, f, i, h_o)?;
            let lhs = m.inner(&lhs_grad, &f.tangent(l))?;
            let beta = move |m: &ManifoldModel, fr: &Frame| -> Result<f64> {
                let gv = grad_v(m, phi, fr, i, h_i)?;
                m.inner_raw(&fr.base, &gv.components, &fr.vectors[l])
            };
            let rhs1 = generator(m, &beta, f, j, h_o)?;
            let rhs2 = if i == j {
                generator(m, phi, f, l, h_i)?
            } else {
                0.0
            };
            (lhs - rhs1 - rhs2, max_abs(&[lhs, rhs1, rhs2]))
        }
        (IdentityId::Pestov, Aux::SlotPair { i, j }) => {
            let (i, j) = (*i, *j);
            check_slot(id, i, k)?;
            check_slot(id, j, k)?;
            // Z^i = (G^i φ) grad_h φ, differentiated vertically in slot j.
            let z_field = move |m: &ManifoldModel, fr: &Frame| -> Result<Tangent> {
                let gi_val = generator(m, phi, fr, i, h_i)?;
                Ok(grad_h(m, phi, fr, h_i)?.scaled(gi_val))
            };
            // Y^{j,i} = ⟨grad_h φ, g_j⟩ v_i − (G^i φ) g_j, semi-basic.
            let y_field = move |m: &ManifoldModel, fr: &Frame| -> Result<Tangent> {
                let gh = grad_h(m, phi, fr, h_i)?;
                let gj = grad_v(m, phi, fr, j, h_i)?;
                let pairing = m.inner_raw(&fr.base, &gh.components, &gj.components)?;
                let gi_val = generator(m, phi, fr, i, h_i)?;
                Ok(Tangent::new(
                    fr.base.clone(),
                    &fr.vectors[i] * pairing - &gj.components * gi_val,
                ))
            };
            let t1 = div_v(m, &z_field, f, j, h_o)?;
            let t2 = div_h(m, &y_field, f, h_o)?;
            let gh = grad_h(m, phi, f, h_i)?;
            let t3 = if i == j { m.inner(&gh, &gh)? } else { 0.0 };
            let g_j = grad_v(m, phi, f, j, h_i)?;
            let mut t4 = 0.0;
            for l in 0..k {
                let g_l = grad_v(m, phi, f, l, h_i)?;
                let r = m.riemann(&f.base, &g_l, &f.tangent(l), &f.tangent(i))?;
                t4 += m.inner(&r, &g_j)?;
            }
            let gi = move |m: &ManifoldModel, fr: &Frame| generator(m, phi, fr, i, h_i);
            let t5 = 2.0 * m.inner(&gh, &grad_v(m, &gi, f, j, h_o)?)?;
            (t1 + t2 + t3 - t4 - t5, max_abs(&[t1, t2, t3, t4, t5]))
        }
        (IdentityId::Wedge, Aux::Span { k: span }) => {
            let pair = span_pairings(m, phi, f, id, *span, h_o)?;
            let n = f.k();
            let mut worst = 0.0f64;
            let mut scale = 0.0f64;
            for a in 0..n {
                for b in (a + 1)..n {
                    // Coefficient of the basis 2-form v_a ∧ v_b in
                    // Σ_j w_j ∧ v_j is M_ba − M_ab, truncated sums keep only
                    // the slots below the span size.
                    let full = pair[b][a] - pair[a][b];
                    let trunc = if b < *span { pair[b][a] } else { 0.0 }
                        - if a < *span { pair[a][b] } else { 0.0 };
                    worst = worst.max((full - 2.0 * trunc).abs());
                    scale = scale.max(full.abs()).max(2.0 * trunc.abs());
                }
            }
            (worst, scale)
        }
        (IdentityId::GradvSpan, Aux::Span { k: span }) => {
            let pair = span_pairings(m, phi, f, id, *span, h_o)?;
            let n = f.k();
            let grads = grad_v_all(m, phi, f, h_o)?;
            let mut raw_scale = 0.0f64;
            for g in &grads {
                for j in 0..n {
                    raw_scale = raw_scale
                        .max(m.inner_raw(&f.base, &g.components, &f.vectors[j])?.abs());
                }
            }
            let mut worst = 0.0f64;
            for a in 0..n {
                for b in 0..n {
                    let inside = a < *span && b < *span;
                    let outside = a >= *span && b >= *span;
                    if inside || outside {
                        worst = worst.max(pair[a][b].abs());
                    }
                }
            }
            (worst, raw_scale)
        }
        _ => return Err(aux_mismatch(id)),
    };
    Ok(Residual {
        value,
        scale,
        fd_step,
    })
}

/// Pairing matrix `M[i][j] = ⟨w_i, v_j⟩` of the projected vertical gradients
/// against the frame, for the full-frame span checks.
pub fn span_pairings(
    m: &ManifoldModel,
    phi: &dyn ScalarBundleFn,
    f: &Frame,
    id: IdentityId,
    span: usize,
    h: f64,
) -> Result<Vec<Vec<f64>>> {
    let n = m.dim();
    if f.k() != n {
        return Err(GeomError::AuxMismatch {
            id: id.as_str().into(),
            detail: format!("span checks need a full {n}-frame, got {} slots", f.k()),
        });
    }
    if span == 0 || span > n {
        return Err(GeomError::AuxMismatch {
            id: id.as_str().into(),
            detail: format!("span size {span} out of range 1..={n}"),
        });
    }
    let w = grad_v_proj_all(m, phi, f, h)?;
    let mut pair = vec![vec![0.0; n]; n];
    for (i, wi) in w.iter().enumerate() {
        for j in 0..n {
            pair[i][j] = m.inner_raw(&f.base, &wi.components, &f.vectors[j])?;
        }
    }
    Ok(pair)
}

/// Result of a convergence study over decreasing steps.
#[derive(Debug, Clone)]
pub struct ConvergenceEstimate {
    /// `(step, relative residual)` pairs in the order given.
    pub points: Vec<(f64, f64)>,
    /// Least-squares slope of log-residual against log-step; `None` when the
    /// residuals sit below the noise floor, where slopes mean nothing.
    pub slope: Option<f64>,
    pub noise_floor: bool,
}

/// Fit the convergence order of a pointwise check over the given steps.
pub fn convergence_order(
    m: &ManifoldModel,
    phi: &dyn ScalarBundleFn,
    f: &Frame,
    id: IdentityId,
    aux: &Aux,
    steps: &[f64],
) -> Result<ConvergenceEstimate> {
    if steps.len() < 2 {
        return Err(GeomError::InvalidArgument(
            "convergence fits need at least two steps".into(),
        ));
    }
    let mut points = Vec::with_capacity(steps.len());
    for &h in steps {
        let r = pointwise_residual(m, phi, f, id, aux, h)?;
        points.push((h, r.relative()));
    }
    // A log-log fit needs every point clear of the rounding floor; one
    // contaminated step (typically the finest) wrecks the slope even when
    // the earlier steps decay cleanly.
    let min_rel = points.iter().fold(f64::INFINITY, |acc, (_, r)| acc.min(*r));
    if min_rel < m.params().noise_floor {
        return Ok(ConvergenceEstimate {
            points,
            slope: None,
            noise_floor: true,
        });
    }
    let logs: Vec<(f64, f64)> = points
        .iter()
        .map(|(h, r)| (h.ln(), r.max(1e-300).ln()))
        .collect();
    let n = logs.len() as f64;
    let sx: f64 = logs.iter().map(|(x, _)| x).sum();
    let sy: f64 = logs.iter().map(|(_, y)| y).sum();
    let sxx: f64 = logs.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = logs.iter().map(|(x, y)| x * y).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    Ok(ConvergenceEstimate {
        points,
        slope: Some(slope),
        noise_floor: false,
    })
}
