use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not Hermitian (max |A - A^dagger| = {defect:.3e})")]
    NonHermitianInput { defect: f64 },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite entry in state at t = {time}")]
    NonFiniteState { time: f64 },

    #[error("dynamical map is singular or ill-conditioned (condition estimate {condition:.3e})")]
    SingularMap { condition: f64 },

    #[error("negative jump probability {probability:.3e} on branch {branch} at t = {time} (enable reverse jumps)")]
    NegativeProbability {
        branch: usize,
        probability: f64,
        time: f64,
    },

    #[error("time step too large: event probability {probability:.3e} exceeds {limit} at t = {time}")]
    StepTooLarge {
        probability: f64,
        limit: f64,
        time: f64,
    },

    #[error("state norm collapsed below {0:.1e}")]
    ZeroNorm(f64),

    #[error("no source state in the ensemble matches the reverse-jump target")]
    NoSourceState,

    #[error("source term has negative eigenvalue {0:.3e}")]
    NegativeSource(f64),

    #[error("initial decomposition is empty or has zero total weight")]
    EmptyDecomposition,

    #[error("Fock cutoff too small: top-level population {population:.3e} exceeds {limit:.1e}")]
    CutoffLeakage { population: f64, limit: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical method itself (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NegativeProbability { .. }
                | Error::StepTooLarge { .. }
                | Error::CutoffLeakage { .. }
                | Error::SingularMap { .. }
                | Error::NonFiniteState { .. }
                | Error::ZeroNorm(_)
                | Error::NegativeSource(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
