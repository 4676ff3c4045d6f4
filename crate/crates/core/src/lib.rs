//! Numerical verification of frame-bundle differential identities and
//! Grassmannian transport invariance over model Riemannian manifolds.
//!
//! The crate builds chart-based models (flat tori, round spheres, hyperbolic
//! half-spaces, and their products), lifts scalar functions to bundles of
//! orthonormal k-frames, realizes the horizontal and vertical calculus by
//! finite differences and geodesic transport, and checks a family of
//! pointwise and integrated identities with explicit residuals, convergence
//! orders, and Monte Carlo error bars.

pub mod bundle;
pub mod corpus;
pub mod diffops;
pub mod error;
pub mod grassmann;
pub mod identities;
pub mod integrate;
pub mod manifold;
pub mod params;
pub mod report;
pub mod suites;

pub use bundle::{
    generator, sample_fiber, BundleTangent, CutoffExtension, Frame, Plain, ScalarBundleFn,
    SemiBasicFn,
};
pub use corpus::{
    invariant_fiber_corpus, scalar_corpus, semibasic_corpus, CorpusFn, SemiBasicCorpusFn,
};
pub use diffops::{
    cov_h, cov_v, div_h, div_v, full_gradient, grad_h, grad_v, grad_v_all, grad_v_proj,
    grad_v_proj_all,
};
pub use error::{GeomError, Result};
pub use grassmann::{
    check_transport_invariance, flow_transport_chain, grassmann_corpus,
    invariance_curvature_balance, lift_function, plane_alignment, planes_equal, project_frame,
    random_rotation, raw_quadratic, rotate_plane, transport_plane, GrassmannCorpusFn, GrassmannFn,
    InvarianceOutcome, LiftedGrassmannFn, OrientedPlane,
};
pub use identities::{
    convergence_order, pointwise_residual, span_pairings, Aux, ConvergenceEstimate, IdentityId,
    Residual,
};
pub use integrate::{
    integrated_residual, mc_integral, sample_frame, IntegratedCheck, IntegratedId,
    IntegratedOutcome, McEstimate, MC_BLOCK,
};
pub use manifold::{
    Christoffel, CurvatureOperator, ManifoldModel, ModelKind, Point, Tangent, TransportOpts,
    Transported,
};
pub use params::Params;
pub use report::{CheckRecord, Report, ReportConfig, Verdict};
pub use suites::{
    pointwise_battery, run_grassmannian_suite, run_integrated_suite, run_pointwise_suite,
    run_suites, SuiteKind, SuiteOptions,
};
