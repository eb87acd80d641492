use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A vector basis change was requested at a point on the z-axis, where
    /// `e_r` and `e_theta` are undefined.
    #[error("point lies on the axis (r = 0); cylindrical vector basis undefined")]
    AxisPoint,

    #[error("point at r = {r:e} is below the axis floor {floor:e}; field Jacobian not evaluable")]
    NearAxis { r: f64, floor: f64 },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("radius {r} outside the closed-form domain (0, 1)")]
    OutOfDomain { r: f64 },

    #[error("non-finite state at step {step} (t = {t})")]
    NonFinite { step: usize, t: f64 },

    #[error("inverse flow round-trip residual {residual:e} exceeds tolerance {tolerance:e}")]
    InverseVerificationFailed { residual: f64, tolerance: f64 },

    #[error("flow sample carries no Jacobian history")]
    MissingJacobian,

    #[error("time {t} is not on the path grid (dt = {dt}, horizon = {horizon})")]
    OffGrid { t: f64, dt: f64, horizon: f64 },

    #[error("vertex budget {budget} exceeded at snapshot t = {t}")]
    VertexBudgetExceeded { budget: usize, t: f64 },

    #[error("{samples} samples spanning {decades:.2} decades; need >= 5 samples over >= 2 decades")]
    InsufficientSpan { samples: usize, decades: f64 },

    #[error("quadrature under-resolved: refinement moved the residual from {coarse:e} to {fine:e}")]
    QuadratureUnderResolved { coarse: f64, fine: f64 },

    #[error("{failed} of {total} replicates failed (first: seed {first_seed}: {first_error})")]
    EnsembleFailed {
        failed: usize,
        total: usize,
        first_seed: u64,
        first_error: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl Error {
    /// Short machine-readable tag, stable across releases.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::AxisPoint => "axis_point",
            Error::NearAxis { .. } => "near_axis",
            Error::UnknownPreset(_) => "unknown_preset",
            Error::OutOfDomain { .. } => "out_of_domain",
            Error::NonFinite { .. } => "non_finite",
            Error::InverseVerificationFailed { .. } => "inverse_verification_failed",
            Error::MissingJacobian => "missing_jacobian",
            Error::OffGrid { .. } => "off_grid",
            Error::VertexBudgetExceeded { .. } => "vertex_budget_exceeded",
            Error::InsufficientSpan { .. } => "insufficient_span",
            Error::QuadratureUnderResolved { .. } => "quadrature_under_resolved",
            Error::EnsembleFailed { .. } => "ensemble_failed",
            Error::InvalidParameter(_) => "invalid_parameter",
        }
    }
}
