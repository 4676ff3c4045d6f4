//! Geodesics and parallel transport.
//!
//! The generic path integrates the first-order geodesic/transport system with
//! fixed-step RK4 in chart coordinates, folding points back into the atlas
//! after every step (torus wrap, stereographic chart switch) and failing with
//! `ChartExit` when a trajectory leaves the admissible region. Flat tori and
//! round spheres also have exact closed-form overrides, enabled by
//! `Params::use_closed_forms`; products recurse into their factors.

use super::{points_coincide, stack, ManifoldModel, ModelKind, Point, Tangent, SPHERE_SWITCH_RADIUS};
use crate::error::{GeomError, Result};
use nalgebra::DVector;

/// Result of transporting a velocity and a list of vectors along a geodesic.
#[derive(Debug, Clone)]
pub struct Transported {
    pub end: Point,
    /// Geodesic velocity at the end point, in end-chart components.
    pub velocity: DVector<f64>,
    /// Parallel-transported copies of the input vectors, same order.
    pub vectors: Vec<DVector<f64>>,
}

/// Options for long transports of orthonormal frames.
#[derive(Debug, Clone, Copy, Default)]
pub struct TransportOpts {
    /// Periodically re-orthonormalize the transported vectors (only sound
    /// when they started orthonormal).
    pub reorth: bool,
    /// Slot whose vector rides the geodesic velocity; after a
    /// re-orthonormalization the velocity is re-aligned to that slot so the
    /// two never drift apart.
    pub pivot: Option<usize>,
}

impl ManifoldModel {
    /// Transport a geodesic velocity and a set of tangent vectors for time
    /// `t` along the geodesic with initial data `(p, velocity)`.
    pub fn transport_many(
        &self,
        p: &Point,
        velocity: &DVector<f64>,
        t: f64,
        ws: &[DVector<f64>],
        opts: TransportOpts,
    ) -> Result<Transported> {
        self.check_contains(p)?;
        if let Some(i) = opts.pivot {
            if i >= ws.len() {
                return Err(GeomError::IndexOutOfRange { index: i, k: ws.len() });
            }
        }
        if t == 0.0 {
            return Ok(Transported {
                end: p.clone(),
                velocity: velocity.clone(),
                vectors: ws.to_vec(),
            });
        }
        match self.kind() {
            ModelKind::FlatTorus { .. } if self.params().use_closed_forms => {
                let end = self.canonical(&Point::new(0, &p.coords + velocity * t));
                Ok(Transported {
                    end,
                    velocity: velocity.clone(),
                    vectors: ws.to_vec(),
                })
            }
            ModelKind::Sphere { .. } if self.params().use_closed_forms => {
                Ok(self.sphere_closed_transport(p, velocity, t, ws))
            }
            ModelKind::Product { left, right } => {
                // A product geodesic is the pair of factor geodesics run for
                // the same time; factor integrators conserve factor inner
                // products separately, which already controls Gram drift, so
                // re-orthonormalization is not forwarded.
                let (pl, pr) = self.split_point(p);
                let (vl, vr) = self.split_vec(velocity);
                let (wl, wr): (Vec<_>, Vec<_>) = ws.iter().map(|w| self.split_vec(w)).unzip();
                let tl = left.transport_many(&pl, &vl, t, &wl, TransportOpts::default())?;
                let tr = right.transport_many(&pr, &vr, t, &wr, TransportOpts::default())?;
                Ok(Transported {
                    end: self.join_point(&tl.end, &tr.end),
                    velocity: stack(&tl.velocity, &tr.velocity),
                    vectors: tl
                        .vectors
                        .iter()
                        .zip(&tr.vectors)
                        .map(|(a, b)| stack(a, b))
                        .collect(),
                })
            }
            _ => self.rk4_transport(p, velocity, t, ws, opts),
        }
    }

    /// Flow the geodesic with initial data `(p, v)` for time `t`.
    pub fn geodesic_step(&self, p: &Point, v: &Tangent, t: f64) -> Result<(Point, Tangent)> {
        if !points_coincide(&v.base, p) {
            return Err(GeomError::MismatchedBase);
        }
        let tr = self.transport_many(p, &v.components, t, &[], TransportOpts::default())?;
        let end = tr.end;
        Ok((end.clone(), Tangent::new(end, tr.velocity)))
    }

    /// Parallel transport `w` along the geodesic `(p, v)` for time `t`.
    pub fn parallel_transport(&self, p: &Point, v: &Tangent, t: f64, w: &Tangent) -> Result<Tangent> {
        if !points_coincide(&v.base, p) || !points_coincide(&w.base, p) {
            return Err(GeomError::MismatchedBase);
        }
        let mut tr = self.transport_many(
            p,
            &v.components,
            t,
            std::slice::from_ref(&w.components),
            TransportOpts::default(),
        )?;
        let vec = tr.vectors.pop().expect("one vector in, one out");
        Ok(Tangent::new(tr.end, vec))
    }

    /// Chart-independent gap between two points (wrap-aware on tori, via the
    /// embedding on spheres). Zero iff they are the same manifold point.
    pub fn location_gap(&self, a: &Point, b: &Point) -> f64 {
        match self.kind() {
            ModelKind::FlatTorus { .. } => (&a.coords - &b.coords)
                .iter()
                .map(|d| (d - d.round()).abs())
                .fold(0.0, f64::max),
            ModelKind::Sphere { .. } => (self.ambient_point(a) - self.ambient_point(b)).amax(),
            ModelKind::Hyperbolic { .. } => (&a.coords - &b.coords).amax(),
            ModelKind::Product { left, right } => {
                let (al, ar) = self.split_point(a);
                let (bl, br) = self.split_point(b);
                left.location_gap(&al, &bl).max(right.location_gap(&ar, &br))
            }
        }
    }

    fn sphere_closed_transport(
        &self,
        p: &Point,
        velocity: &DVector<f64>,
        t: f64,
        ws: &[DVector<f64>],
    ) -> Transported {
        let p_emb = sphere_embed(p.chart, &p.coords);
        let v_emb = sphere_push(p.chart, &p.coords, velocity);
        let s = v_emb.norm();
        if s < 1e-300 {
            return Transported {
                end: p.clone(),
                velocity: velocity.clone(),
                vectors: ws.to_vec(),
            };
        }
        let u = &v_emb / s;
        let theta = s * t;
        let (sin, cos) = theta.sin_cos();
        let p_end = &p_emb * cos + &u * sin;
        // Unit tangent along the great circle at the end point.
        let dir_end = &p_emb * (-sin) + &u * cos;
        let v_end = &dir_end * s;
        let ws_end: Vec<DVector<f64>> = ws
            .iter()
            .map(|w| {
                let w_emb = sphere_push(p.chart, &p.coords, w);
                let a = w_emb.dot(&u);
                let b = w_emb.dot(&p_emb);
                // The component along the motion rotates with the circle; the
                // orthogonal component is constant. `b` is numerical dust.
                let perp = &w_emb - &u * a - &p_emb * b;
                &dir_end * a + perp
            })
            .collect();
        // Stay in the starting chart while the result is inside the switch
        // radius; this matches the generic integrator's hysteresis so round
        // trips come home to the chart they left.
        let x_keep = sphere_pull_point(p.chart, &p_end);
        let (chart, x_end) = if x_keep.norm() <= SPHERE_SWITCH_RADIUS {
            (p.chart, x_keep)
        } else {
            let other = 1 - p.chart;
            (other, sphere_pull_point(other, &p_end))
        };
        let end = Point::new(chart, x_end);
        Transported {
            velocity: sphere_pull_tangent(chart, &p_end, &v_end),
            vectors: ws_end
                .iter()
                .map(|w| sphere_pull_tangent(chart, &p_end, w))
                .collect(),
            end,
        }
    }

    fn rk4_transport(
        &self,
        p: &Point,
        velocity: &DVector<f64>,
        t: f64,
        ws: &[DVector<f64>],
        opts: TransportOpts,
    ) -> Result<Transported> {
        let h = self.params().ode_step;
        let n_steps = ((t.abs() / h).ceil() as usize).max(1);
        let dt = t / n_steps as f64;
        let mut chart = p.chart;
        let mut x = p.coords.clone();
        let mut vel = velocity.clone();
        let mut vs: Vec<DVector<f64>> = ws.to_vec();
        for step in 0..n_steps {
            let t_now = step as f64 * dt;
            let exit = |e: GeomError| match e {
                GeomError::OutsideChart { model, .. } => GeomError::ChartExit { model, t: t_now },
                other => other,
            };
            let (k1x, k1v, k1w) = self.geo_deriv(chart, &x, &vel, &vs).map_err(exit)?;
            let half = dt / 2.0;
            let (k2x, k2v, k2w) = self
                .geo_deriv(chart, &(&x + &k1x * half), &(&vel + &k1v * half), &shifted(&vs, &k1w, half))
                .map_err(exit)?;
            let (k3x, k3v, k3w) = self
                .geo_deriv(chart, &(&x + &k2x * half), &(&vel + &k2v * half), &shifted(&vs, &k2w, half))
                .map_err(exit)?;
            let (k4x, k4v, k4w) = self
                .geo_deriv(chart, &(&x + &k3x * dt), &(&vel + &k3v * dt), &shifted(&vs, &k3w, dt))
                .map_err(exit)?;
            let sixth = dt / 6.0;
            x += (k1x + &k2x * 2.0 + &k3x * 2.0 + k4x) * sixth;
            vel += (k1v + &k2v * 2.0 + &k3v * 2.0 + k4v) * sixth;
            for (j, w) in vs.iter_mut().enumerate() {
                *w += (&k1w[j] + &k2w[j] * 2.0 + &k3w[j] * 2.0 + &k4w[j]) * sixth;
            }
            // Fold back into the atlas.
            match self.kind() {
                ModelKind::FlatTorus { .. } => {
                    x = x.map(|c| c - c.floor());
                }
                ModelKind::Sphere { .. } => {
                    if x.norm() > SPHERE_SWITCH_RADIUS {
                        let r2 = x.norm_squared();
                        let jac = |v: &DVector<f64>| {
                            let xv = x.dot(v);
                            v / r2 - &x * (2.0 * xv / (r2 * r2))
                        };
                        vel = jac(&vel);
                        for w in vs.iter_mut() {
                            *w = jac(w);
                        }
                        x /= r2;
                        chart = 1 - chart;
                    }
                }
                _ => {}
            }
            let here = Point::new(chart, x.clone());
            self.check_contains(&here).map_err(exit)?;
            if opts.reorth && (step + 1) % self.params().reorth_interval == 0 {
                self.reorth_in_place(&here, &mut vel, &mut vs, opts.pivot)?;
            }
        }
        Ok(Transported {
            end: Point::new(chart, x),
            velocity: vel,
            vectors: vs,
        })
    }

    fn geo_deriv(
        &self,
        chart: usize,
        x: &DVector<f64>,
        vel: &DVector<f64>,
        vs: &[DVector<f64>],
    ) -> Result<(DVector<f64>, DVector<f64>, Vec<DVector<f64>>)> {
        let gamma = self.christoffel_at(&Point::new(chart, x.clone()))?;
        let dvel = -gamma.contract(vel, vel);
        let dvs = vs.iter().map(|w| -gamma.contract(vel, w)).collect();
        Ok((vel.clone(), dvel, dvs))
    }

    fn reorth_in_place(
        &self,
        here: &Point,
        vel: &mut DVector<f64>,
        vs: &mut [DVector<f64>],
        pivot: Option<usize>,
    ) -> Result<()> {
        let g = self.metric_unchecked(here);
        let pair = |a: &DVector<f64>, b: &DVector<f64>| (a.transpose() * &g * b)[(0, 0)];
        let mut drift: f64 = 0.0;
        for a in 0..vs.len() {
            for b in 0..=a {
                let want = if a == b { 1.0 } else { 0.0 };
                drift = drift.max((pair(&vs[a], &vs[b]) - want).abs());
            }
        }
        if drift <= self.params().reorth_drift_tol {
            return Ok(());
        }
        for a in 0..vs.len() {
            for b in 0..a {
                let c = pair(&vs[b], &vs[a]);
                let vb = vs[b].clone();
                vs[a] -= vb * c;
            }
            let nrm2 = pair(&vs[a], &vs[a]);
            if nrm2 <= 0.0 {
                return Err(GeomError::DegenerateTuple { det: nrm2 });
            }
            vs[a] /= nrm2.sqrt();
        }
        if let Some(i) = pivot {
            let speed = pair(vel, vel).max(0.0).sqrt();
            *vel = &vs[i] * speed;
        }
        Ok(())
    }
}

fn shifted(vs: &[DVector<f64>], dvs: &[DVector<f64>], c: f64) -> Vec<DVector<f64>> {
    vs.iter().zip(dvs).map(|(v, d)| v + d * c).collect()
}

/// Unit-sphere embedding of stereographic coordinates. Chart 0 projects from
/// the north pole (covers the south pole at x = 0), chart 1 from the south.
pub(crate) fn sphere_embed(chart: usize, x: &DVector<f64>) -> DVector<f64> {
    let n = x.len();
    let t = 1.0 + x.norm_squared();
    let mut out = DVector::zeros(n + 1);
    for i in 0..n {
        out[i] = 2.0 * x[i] / t;
    }
    let last = (x.norm_squared() - 1.0) / t;
    out[n] = if chart == 0 { last } else { -last };
    out
}

/// Differential of `sphere_embed` applied to chart components `v`.
pub(crate) fn sphere_push(chart: usize, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let n = x.len();
    let t = 1.0 + x.norm_squared();
    let xv = x.dot(v);
    let mut out = DVector::zeros(n + 1);
    for i in 0..n {
        out[i] = 2.0 * v[i] / t - 4.0 * xv * x[i] / (t * t);
    }
    let last = 4.0 * xv / (t * t);
    out[n] = if chart == 0 { last } else { -last };
    out
}

/// Stereographic coordinates of an embedded point in the requested chart.
pub(crate) fn sphere_pull_point(chart: usize, p: &DVector<f64>) -> DVector<f64> {
    let n = p.len() - 1;
    let denom = if chart == 0 { 1.0 - p[n] } else { 1.0 + p[n] };
    p.rows(0, n).into_owned() / denom
}

/// Differential of `sphere_pull_point` applied to an embedded tangent `w`.
pub(crate) fn sphere_pull_tangent(chart: usize, p: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
    let n = p.len() - 1;
    let sign = if chart == 0 { 1.0 } else { -1.0 };
    let denom = if chart == 0 { 1.0 - p[n] } else { 1.0 + p[n] };
    let head = w.rows(0, n).into_owned();
    let p_head = p.rows(0, n).into_owned();
    head / denom + p_head * (sign * w[n] / (denom * denom))
}
