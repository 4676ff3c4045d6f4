use thiserror::Error;

/// Errors raised by geometry, bundle, and check operations.
///
/// Every operation that can leave a chart, receive inconsistent bases, or be
/// asked for something the model cannot provide fails loudly with one of
/// these variants; nothing is silently clamped or extrapolated.
#[derive(Debug, Error)]
pub enum GeomError {
    #[error("point lies outside every chart domain of `{model}`: {detail}")]
    OutsideChart { model: String, detail: String },

    #[error("trajectory left the chart atlas of `{model}` near t = {t}")]
    ChartExit { model: String, t: f64 },

    #[error("tangent vectors are based at different points")]
    MismatchedBase,

    #[error("frame is not orthonormal (max Gram defect {defect:e})")]
    NotOrthonormal { defect: f64 },

    #[error("tuple is numerically degenerate (Gram determinant {det:e})")]
    DegenerateTuple { det: f64 },

    #[error("slot index {index} out of range for a {k}-tuple")]
    IndexOutOfRange { index: usize, k: usize },

    #[error("`{model}` has infinite volume; integrated checks need a compact model")]
    NonCompact { model: String },

    #[error("unknown manifold name `{0}`")]
    UnknownManifold(String),

    #[error("check `{id}` does not accept the supplied auxiliary data: {detail}")]
    AuxMismatch { id: String, detail: String },

    #[error("function failed the rotation-invariance probe (max deviation {deviation:e})")]
    NotInvariant { deviation: f64 },

    #[error("{0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, GeomError>;
