/// Numerical tuning knobs shared by every operation.
///
/// The defaults are chosen so that second-order finite differences dominate
/// the error budget: derivative residuals scale like `fd_outer^2 ~ 1e-8`,
/// well above the `1e-11`-ish rounding noise of nested central differences,
/// and well below the `1e-3` pass tolerances.
#[derive(Debug, Clone)]
pub struct Params {
    /// Step for the outermost finite difference of a nested derivative.
    pub fd_outer: f64,
    /// Inner steps are `fd_outer * fd_inner_ratio` so that refining the outer
    /// step refines the whole stack and convergence orders stay clean.
    pub fd_inner_ratio: f64,
    /// Step for differencing the metric when Christoffel symbols or the
    /// curvature tensor are computed by finite differences.
    pub metric_fd_step: f64,
    /// Fixed step of the RK4 geodesic / transport integrator.
    pub ode_step: f64,
    /// Re-orthonormalize a transported frame every this many RK4 steps...
    pub reorth_interval: usize,
    /// ...but only if the Gram defect has drifted beyond this threshold.
    pub reorth_drift_tol: f64,
    /// Max Gram defect for a tuple to count as an orthonormal frame.
    pub orthonormal_tol: f64,
    /// Gram determinants at or below this are treated as degenerate.
    pub gram_det_floor: f64,
    /// Relative residuals below this are reported as noise rather than fed
    /// into convergence-order fits.
    pub noise_floor: f64,
    /// Allowance coefficient for finite-difference bias in Monte Carlo
    /// verdicts: a mean passes when |mean| <= 3*stderr + mc_bias_coeff*h^2.
    pub mc_bias_coeff: f64,
    /// Tolerance for plane-equality, rotation-invariance, and span probes.
    pub plane_tol: f64,
    /// Use closed-form geodesics, transports, and curvature where a model
    /// provides them; set false to force the generic chart-based paths.
    pub use_closed_forms: bool,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            fd_outer: 1e-4,
            fd_inner_ratio: 0.1,
            metric_fd_step: 1e-5,
            ode_step: 1e-3,
            reorth_interval: 100,
            reorth_drift_tol: 1e-10,
            orthonormal_tol: 1e-9,
            gram_det_floor: 1e-12,
            noise_floor: 1e-7,
            mc_bias_coeff: 10.0,
            plane_tol: 1e-9,
            use_closed_forms: true,
        }
    }
}

impl Params {
    /// Inner finite-difference step tied to a given outer step.
    pub fn inner_step(&self, outer: f64) -> f64 {
        outer * self.fd_inner_ratio
    }
}
