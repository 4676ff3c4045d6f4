//! Horizontal and vertical calculus on the tuple bundle.
//!
//! Horizontal derivatives move the base along geodesics and carry the tuple
//! by parallel transport (values of semi-basic fields are transported back to
//! the foot point before differencing); vertical derivatives move one slot in
//! its linear fiber. Everything is discretized by central differences with an
//! explicit step: first derivatives of a field that is itself a finite
//! difference should use the caller's inner step (`Params::inner_step`) so
//! convergence studies scale the whole stack together.

use crate::bundle::{horizontal_lift, BundleTangent, Frame, ScalarBundleFn, SemiBasicFn};
use crate::error::{GeomError, Result};
use crate::manifold::{ManifoldModel, Tangent, TransportOpts};
use nalgebra::DVector;

/// How far a transported-back foot point may sit from the original base
/// before the operation is treated as broken rather than inaccurate.
const RETURN_GAP_TOL: f64 = 1e-6;

/// Horizontal gradient of `phi` at `f`: the unique base tangent with
/// `⟨grad_h, u⟩ = d/dt phi(lift of f along u)`.
pub fn grad_h(m: &ManifoldModel, phi: &dyn ScalarBundleFn, f: &Frame, h: f64) -> Result<Tangent> {
    let basis = m.orthonormal_basis_at(&f.base)?;
    let mut components = DVector::zeros(m.dim());
    for e in &basis {
        let plus = phi.eval(m, &horizontal_lift(m, f, e, h)?)?;
        let minus = phi.eval(m, &horizontal_lift(m, f, e, -h)?)?;
        let d = (plus - minus) / (2.0 * h);
        components += e * d;
    }
    Ok(Tangent::new(f.base.clone(), components))
}

/// Vertical gradient of `phi` in slot `i`: differentiate in the slot argument
/// with the base and the other slots frozen.
pub fn grad_v(m: &ManifoldModel, phi: &dyn ScalarBundleFn, f: &Frame, i: usize, h: f64) -> Result<Tangent> {
    if i >= f.k() {
        return Err(GeomError::IndexOutOfRange { index: i, k: f.k() });
    }
    let basis = m.orthonormal_basis_at(&f.base)?;
    let mut components = DVector::zeros(m.dim());
    for e in &basis {
        let plus = phi.eval(m, &f.with_vector(i, &f.vectors[i] + e * h))?;
        let minus = phi.eval(m, &f.with_vector(i, &f.vectors[i] - e * h))?;
        let d = (plus - minus) / (2.0 * h);
        components += e * d;
    }
    Ok(Tangent::new(f.base.clone(), components))
}

/// All `k` vertical gradients.
pub fn grad_v_all(m: &ManifoldModel, phi: &dyn ScalarBundleFn, f: &Frame, h: f64) -> Result<Vec<Tangent>> {
    (0..f.k()).map(|i| grad_v(m, phi, f, i, h)).collect()
}

/// Vertical gradients projected onto the tangent space of the orthonormal
/// frame fiber:
/// `w_i = g_i − ½ Σ_j (⟨g_i, v_j⟩ + ⟨g_j, v_i⟩) v_j`
/// where `g_i` are the free vertical gradients. The pairing matrix
/// `⟨w_i, v_j⟩` is skew, which is exactly tangency to the fiber.
pub fn grad_v_proj_all(
    m: &ManifoldModel,
    phi: &dyn ScalarBundleFn,
    f: &Frame,
    h: f64,
) -> Result<Vec<Tangent>> {
    f.check_orthonormal(m)?;
    let grads = grad_v_all(m, phi, f, h)?;
    let k = f.k();
    let mut pair = vec![vec![0.0; k]; k];
    for (i, g) in grads.iter().enumerate() {
        for j in 0..k {
            pair[i][j] = m.inner_raw(&f.base, &g.components, &f.vectors[j])?;
        }
    }
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let mut w = grads[i].components.clone();
        for j in 0..k {
            let c = 0.5 * (pair[i][j] + pair[j][i]);
            w -= &f.vectors[j] * c;
        }
        out.push(Tangent::new(f.base.clone(), w));
    }
    Ok(out)
}

/// Single projected vertical gradient; computes all of them internally
/// because the projection couples the slots.
pub fn grad_v_proj(m: &ManifoldModel, phi: &dyn ScalarBundleFn, f: &Frame, i: usize, h: f64) -> Result<Tangent> {
    if i >= f.k() {
        return Err(GeomError::IndexOutOfRange { index: i, k: f.k() });
    }
    Ok(grad_v_proj_all(m, phi, f, h)?.swap_remove(i))
}

/// Horizontal plus projected vertical gradients as one bundle tangent.
pub fn full_gradient(m: &ManifoldModel, phi: &dyn ScalarBundleFn, f: &Frame, h: f64) -> Result<BundleTangent> {
    Ok(BundleTangent {
        horizontal: grad_h(m, phi, f, h)?,
        verticals: grad_v_proj_all(m, phi, f, h)?
            .into_iter()
            .map(|t| t.components)
            .collect(),
    })
}

/// Horizontal covariant derivative of a semi-basic field along `u`:
/// lift `f` a step along the geodesic of `u`, evaluate, parallel transport
/// the values back, and difference at the foot point.
pub fn cov_h(
    m: &ManifoldModel,
    field: &dyn SemiBasicFn,
    f: &Frame,
    u: &Tangent,
    h: f64,
) -> Result<Tangent> {
    let pulled = |sign: f64| -> Result<DVector<f64>> {
        let out = m.transport_many(&f.base, &u.components, sign * h, &f.vectors, TransportOpts::default())?;
        let shifted = Frame::new(out.end.clone(), out.vectors);
        let value = field.eval(m, &shifted)?;
        let back = m.transport_many(
            &out.end,
            &out.velocity,
            -sign * h,
            std::slice::from_ref(&value.components),
            TransportOpts::default(),
        )?;
        let gap = m.location_gap(&back.end, &f.base);
        if gap > RETURN_GAP_TOL {
            return Err(GeomError::InvalidArgument(format!(
                "transport back missed the base point by {gap:e}"
            )));
        }
        Ok(back.vectors.into_iter().next().expect("one vector"))
    };
    let plus = pulled(1.0)?;
    let minus = pulled(-1.0)?;
    Ok(Tangent::new(f.base.clone(), (plus - minus) / (2.0 * h)))
}

/// Vertical covariant derivative of a semi-basic field: shift slot `i` along
/// `u` and difference the values, which already live at the fixed base.
pub fn cov_v(
    m: &ManifoldModel,
    field: &dyn SemiBasicFn,
    f: &Frame,
    i: usize,
    u: &Tangent,
    h: f64,
) -> Result<Tangent> {
    if i >= f.k() {
        return Err(GeomError::IndexOutOfRange { index: i, k: f.k() });
    }
    let plus = field.eval(m, &f.with_vector(i, &f.vectors[i] + &u.components * h))?;
    let minus = field.eval(m, &f.with_vector(i, &f.vectors[i] - &u.components * h))?;
    Ok(Tangent::new(
        f.base.clone(),
        (plus.components - minus.components) / (2.0 * h),
    ))
}

/// Horizontal divergence in an explicit orthonormal basis at the base.
pub fn div_h_in_basis(
    m: &ManifoldModel,
    field: &dyn SemiBasicFn,
    f: &Frame,
    h: f64,
    basis: &[DVector<f64>],
) -> Result<f64> {
    let mut acc = 0.0;
    for e in basis {
        let u = Tangent::new(f.base.clone(), e.clone());
        let d = cov_h(m, field, f, &u, h)?;
        acc += m.inner_raw(&f.base, &d.components, e)?;
    }
    Ok(acc)
}

/// Horizontal divergence `Σ_a ⟨∇^h_{E_a} X, E_a⟩` in the canonical basis.
pub fn div_h(m: &ManifoldModel, field: &dyn SemiBasicFn, f: &Frame, h: f64) -> Result<f64> {
    let basis = m.orthonormal_basis_at(&f.base)?;
    div_h_in_basis(m, field, f, h, &basis)
}

/// Vertical divergence in slot `i` in an explicit orthonormal basis.
pub fn div_v_in_basis(
    m: &ManifoldModel,
    field: &dyn SemiBasicFn,
    f: &Frame,
    i: usize,
    h: f64,
    basis: &[DVector<f64>],
) -> Result<f64> {
    let mut acc = 0.0;
    for e in basis {
        let u = Tangent::new(f.base.clone(), e.clone());
        let d = cov_v(m, field, f, i, &u, h)?;
        acc += m.inner_raw(&f.base, &d.components, e)?;
    }
    Ok(acc)
}

/// Vertical divergence `Σ_a ⟨∇^{v,i}_{E_a} X, E_a⟩` in the canonical basis.
pub fn div_v(m: &ManifoldModel, field: &dyn SemiBasicFn, f: &Frame, i: usize, h: f64) -> Result<f64> {
    let basis = m.orthonormal_basis_at(&f.base)?;
    div_v_in_basis(m, field, f, i, h, &basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{sample_fiber, Plain};
    use crate::manifold::Point;
    use crate::params::Params;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn model(name: &str) -> ManifoldModel {
        ManifoldModel::from_name(name, Params::default()).unwrap()
    }

    fn haar_frame(m: &ManifoldModel, p: &Point, k: usize, seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_fiber(m, p, k, &mut rng).unwrap()
    }

    /// Mixed base-and-fiber test function, globally smooth on any model.
    fn mixed_fn() -> impl ScalarBundleFn {
        Plain(|m: &ManifoldModel, f: &Frame| {
            let a = m.ambient_point(&f.base);
            let t0 = m.ambient_tangent(&f.base, &f.vectors[0]);
            let mut s = 0.0;
            for i in 0..a.len() {
                s += (0.7 + 0.1 * i as f64) * a[i];
            }
            (s).sin() * t0[0] + 0.3 * t0.iter().sum::<f64>()
        })
    }

    #[test]
    fn grad_h_matches_hand_gradient_on_flat_torus() {
        // φ(f) = sin(2π x_0) ⟨v_0, e_0⟩: the horizontal derivative along e_a
        // moves the base only, so grad_h = 2π cos(2π x_0) v_{0,0} e_0.
        let m = model("torus:2");
        let phi = Plain(|_: &ManifoldModel, f: &Frame| {
            (2.0 * PI * f.base.coords[0]).sin() * f.vectors[0][0]
        });
        let p = Point::from_slice(0, &[0.37, 0.81]);
        let f = haar_frame(&m, &p, 2, 3);
        let g = grad_h(&m, &phi, &f, 1e-4).unwrap();
        let want0 = 2.0 * PI * (2.0 * PI * 0.37).cos() * f.vectors[0][0];
        assert_relative_eq!(g.components[0], want0, epsilon = 1e-6);
        assert_relative_eq!(g.components[1], 0.0, epsilon = 1e-8);
    }

    #[test]
    fn grad_h_of_height_function_on_sphere() {
        // φ = z-coordinate of the embedding (base-only). The gradient of the
        // height function on the unit sphere pushes forward to e_z − z P.
        let m = model("sphere:2");
        let phi = Plain(|m: &ManifoldModel, f: &Frame| m.ambient_point(&f.base)[2]);
        let p = Point::from_slice(0, &[0.4, -0.3]);
        let f = haar_frame(&m, &p, 1, 5);
        let g = grad_h(&m, &phi, &f, 1e-4).unwrap();
        let emb = m.ambient_point(&p);
        let pushed = crate::manifold::ManifoldModel::ambient_tangent(&m, &p, &g.components);
        let want = DVector::from_column_slice(&[0.0, 0.0, 1.0]) - &emb * emb[2];
        assert!((pushed - want).amax() < 1e-7);
    }

    #[test]
    fn grad_v_is_exact_for_slotwise_linear_functions() {
        let m = model("torus:2");
        let phi = Plain(|_: &ManifoldModel, f: &Frame| {
            (2.0 * PI * f.base.coords[0]).sin() * f.vectors[0][0]
        });
        let p = Point::from_slice(0, &[0.37, 0.81]);
        let f = haar_frame(&m, &p, 2, 3);
        let g0 = grad_v(&m, &phi, &f, 0, 1e-4).unwrap();
        assert_relative_eq!(g0.components[0], (2.0 * PI * 0.37).sin(), epsilon = 1e-11);
        assert_relative_eq!(g0.components[1], 0.0, epsilon = 1e-11);
        let g1 = grad_v(&m, &phi, &f, 1, 1e-4).unwrap();
        assert!(g1.components.amax() < 1e-11);
    }

    #[test]
    fn generator_pairs_with_the_horizontal_gradient() {
        // G^i φ = ⟨grad_h φ, v_i⟩: the flow moves the base along v_i while
        // the slots ride parallel.
        for name in ["sphere:2", "hyperbolic:2"] {
            let m = model(name);
            let p = if name == "sphere:2" {
                Point::from_slice(0, &[0.4, -0.1])
            } else {
                Point::from_slice(0, &[0.2, 1.1])
            };
            let f = haar_frame(&m, &p, 2, 9);
            let phi = mixed_fn();
            for i in 0..2 {
                let lhs = crate::bundle::generator(&m, &phi, &f, i, 1e-5).unwrap();
                let gh = grad_h(&m, &phi, &f, 1e-5).unwrap();
                let rhs = m.inner_raw(&p, &gh.components, &f.vectors[i]).unwrap();
                assert_relative_eq!(lhs, rhs, epsilon = 1e-6, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn slot_fields_are_horizontally_parallel() {
        // X(f) = v_j is parallel along every horizontal lift, so ∇^h X = 0
        // and div_h X = 0.
        for name in ["sphere:3", "hyperbolic:2"] {
            let m = model(name);
            let p = if name == "sphere:3" {
                Point::from_slice(0, &[0.2, 0.4, -0.1])
            } else {
                Point::from_slice(0, &[0.2, 1.4])
            };
            let k = 2;
            let f = haar_frame(&m, &p, k, 11);
            for j in 0..k {
                let field = Plain(move |_: &ManifoldModel, fr: &Frame| fr.tangent(j));
                let u = Tangent::new(p.clone(), f.vectors[(j + 1) % k].clone());
                let d = cov_h(&m, &field, &f, &u, 1e-4).unwrap();
                assert!(d.components.amax() < 1e-8, "{name} slot {j}: {:?}", d.components);
                let div = div_h(&m, &field, &f, 1e-4).unwrap();
                assert!(div.abs() < 1e-7, "{name} slot {j}: div {div}");
            }
        }
    }

    #[test]
    fn vertical_divergence_of_slot_fields_counts_dimensions() {
        // ∇^{v,i}_u (v_j) = δ_ij u, so div^{v,i} v_j = δ_ij n.
        let m = model("sphere:3");
        let p = Point::from_slice(0, &[0.1, -0.2, 0.3]);
        let f = haar_frame(&m, &p, 2, 13);
        for i in 0..2 {
            for j in 0..2 {
                let field = Plain(move |_: &ManifoldModel, fr: &Frame| fr.tangent(j));
                let div = div_v(&m, &field, &f, i, 1e-4).unwrap();
                let want = if i == j { 3.0 } else { 0.0 };
                assert_relative_eq!(div, want, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn cov_h_satisfies_the_product_rule() {
        // ∇^h_u (ψ X) = ⟨grad_h ψ, u⟩ X + ψ ∇^h_u X.
        let m = model("sphere:2");
        let p = Point::from_slice(0, &[0.3, 0.2]);
        let f = haar_frame(&m, &p, 2, 17);
        let h = 1e-4;
        let psi = |m: &ManifoldModel, fr: &Frame| {
            let a = m.ambient_point(&fr.base);
            (1.3 * a[0] - 0.4 * a[2]).cos()
        };
        let x = |m: &ManifoldModel, fr: &Frame| {
            let t = m.ambient_tangent(&fr.base, &fr.vectors[1]);
            fr.tangent(0).scaled(t[1])
        };
        let combined = Plain(move |m: &ManifoldModel, fr: &Frame| {
            let t = x(m, fr);
            t.scaled(psi(m, fr))
        });
        let x_only = Plain(x);
        let psi_only = Plain(move |m: &ManifoldModel, fr: &Frame| psi(m, fr));
        let u = Tangent::new(p.clone(), f.vectors[1].clone());

        let lhs = cov_h(&m, &combined, &f, &u, h).unwrap();
        let dpsi = grad_h(&m, &psi_only, &f, h).unwrap();
        let du_psi = m.inner_raw(&p, &dpsi.components, &u.components).unwrap();
        let x_val = x(&m, &f);
        let dx = cov_h(&m, &x_only, &f, &u, h).unwrap();
        let rhs = &x_val.components * du_psi + &dx.components * psi(&m, &f);
        assert!((lhs.components - rhs).amax() < 1e-6);
    }

    #[test]
    fn cov_v_is_exact_for_slotwise_linear_fields() {
        let m = model("torus:3");
        let p = Point::from_slice(0, &[0.2, 0.5, 0.8]);
        let f = haar_frame(&m, &p, 2, 19);
        // X(f) = ⟨v_0, a⟩ c with constants a, c.
        let a = DVector::from_column_slice(&[0.3, -1.2, 0.5]);
        let c = DVector::from_column_slice(&[1.0, 2.0, -0.5]);
        let field = {
            let (a, c) = (a.clone(), c.clone());
            Plain(move |_: &ManifoldModel, fr: &Frame| {
                Tangent::new(fr.base.clone(), &c * fr.vectors[0].dot(&a))
            })
        };
        let u = Tangent::new(p.clone(), DVector::from_column_slice(&[0.4, 0.1, -0.7]));
        let d = cov_v(&m, &field, &f, 0, &u, 1e-4).unwrap();
        let want = &c * u.components.dot(&a);
        assert!((d.components - want).amax() < 1e-10);
        let zero = cov_v(&m, &field, &f, 1, &u, 1e-4).unwrap();
        assert!(zero.components.amax() < 1e-12);
    }

    #[test]
    fn divergences_are_basis_independent() {
        let m = model("sphere:2");
        let p = Point::from_slice(0, &[0.25, -0.4]);
        let f = haar_frame(&m, &p, 2, 23);
        let h = 1e-4;
        let phi = mixed_fn();
        let field = Plain(move |m: &ManifoldModel, fr: &Frame| {
            grad_h(m, &phi, fr, 1e-5).expect("lift stays in chart")
        });
        let canonical = m.orthonormal_basis_at(&p).unwrap();
        // Rotate the basis by an arbitrary orthogonal matrix.
        let angle = 0.73f64;
        let q = DMatrix::from_column_slice(2, 2, &[angle.cos(), angle.sin(), -angle.sin(), angle.cos()]);
        let rotated: Vec<DVector<f64>> = (0..2)
            .map(|col| &canonical[0] * q[(0, col)] + &canonical[1] * q[(1, col)])
            .collect();
        let d1 = div_h(&m, &field, &f, h).unwrap();
        let d2 = div_h_in_basis(&m, &field, &f, h, &rotated).unwrap();
        assert_relative_eq!(d1, d2, epsilon = 1e-6, max_relative = 1e-6);
        let dv1 = div_v(&m, &field, &f, 0, h).unwrap();
        let dv2 = div_v_in_basis(&m, &field, &f, 0, h, &rotated).unwrap();
        assert_relative_eq!(dv1, dv2, epsilon = 1e-6, max_relative = 1e-6);
    }

    #[test]
    fn projected_gradients_are_tangent_to_the_fiber() {
        for name in ["sphere:3", "torus:3"] {
            let m = model(name);
            let p = if name == "sphere:3" {
                Point::from_slice(0, &[0.2, 0.4, -0.1])
            } else {
                Point::from_slice(0, &[0.2, 0.4, 0.9])
            };
            let f = haar_frame(&m, &p, 2, 29);
            let phi = mixed_fn();
            let full = full_gradient(&m, &phi, &f, 1e-4).unwrap();
            let defect = full.fiber_defect(&m, &f).unwrap();
            assert!(defect < 1e-8, "{name}: {defect:e}");
        }
    }

    #[test]
    fn projection_requires_orthonormal_frames() {
        let m = model("torus:2");
        let p = Point::from_slice(0, &[0.1, 0.2]);
        let skewed = Frame::new(
            p,
            vec![
                DVector::from_column_slice(&[1.0, 0.0]),
                DVector::from_column_slice(&[0.9, 0.1]),
            ],
        );
        let phi = mixed_fn();
        assert!(matches!(
            grad_v_proj_all(&m, &phi, &skewed, 1e-4),
            Err(GeomError::NotOrthonormal { .. })
        ));
    }
}
