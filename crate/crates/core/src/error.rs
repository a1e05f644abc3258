use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric (asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("{0} did not converge")]
    NoConvergence(&'static str),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("kind mismatch: expected {expected} model, got {found}")]
    KindMismatch {
        expected: &'static str,
        found: &'static str,
    },

    /// Rank of `[E C(i)]` exceeds rank of `E`; no common restricted form exists.
    #[error("unsupported structure: rank [E C({mode})] > rank E")]
    AssumptionViolated { mode: usize },

    #[error("mode {mode} is impulsive (fast block A22 is singular)")]
    Impulsive { mode: usize },

    #[error("pencil (E, A) is not regular: det(sE - A) vanishes identically")]
    NonRegularPencil,

    #[error("no shift with det(aE - A) != 0 among the candidate list")]
    ShiftExhausted,

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),

    #[error("inconsistent initial state: {0}")]
    InconsistentInitialState(String),

    #[error("certificate does not match model: {0}")]
    CertificateMismatch(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
