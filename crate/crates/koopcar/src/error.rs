//! Crate-wide error type.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("longitudinal speed {vx} m/s is at or below the {limit} m/s slip-angle guard")]
    LowSpeed { vx: f64, limit: f64 },

    #[error("state out of bounds: {0}")]
    StateBounds(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("training diverged: {0}")]
    NonFinite(String),

    #[error("eigenvalue computation failed")]
    EigenFailed,

    #[error("observer gain search infeasible: best spectral radius {best_rho} at (beta1={beta1}, beta2={beta2})")]
    GainsInfeasible { best_rho: f64, beta1: f64, beta2: f64 },

    #[error("observer gains unstable: spectral radius {rho} >= 1")]
    GainsUnstable { rho: f64 },

    #[error("QP infeasible: {0}")]
    QpInfeasible(String),

    #[error("QP exceeded {0} iterations")]
    QpMaxIterations(usize),

    #[error("QP solver failure: {0}")]
    QpFailure(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable kind tag, used by the CLI error line and exit codes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::LowSpeed { .. } => "low_speed",
            Error::StateBounds(_) => "divergence",
            Error::ShapeMismatch { .. } => "shape",
            Error::EmptyData(_) => "empty_data",
            Error::InvalidParam(_) => "invalid_param",
            Error::NonFinite(_) => "divergence",
            Error::EigenFailed => "eigen",
            Error::GainsInfeasible { .. } => "gains_infeasible",
            Error::GainsUnstable { .. } => "gains_unstable",
            Error::QpInfeasible(_) => "qp_infeasible",
            Error::QpMaxIterations(_) => "qp_max_iter",
            Error::QpFailure(_) => "qp_failure",
            Error::Config(_) => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
        }
    }
}
