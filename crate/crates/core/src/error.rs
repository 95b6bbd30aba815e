use thiserror::Error;

pub type Result<T> = std::result::Result<T, BnmmError>;

#[derive(Debug, Error)]
pub enum BnmmError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("subject {subject} has no connectomes")]
    NoConnectomes { subject: usize },

    #[error(
        "asymmetry above tolerance: subject {subject}, scan {scan}, entry ({row}, {col}) differs by {diff:e}"
    )]
    Asymmetry {
        subject: usize,
        scan: usize,
        row: usize,
        col: usize,
        diff: f64,
    },

    #[error("invalid covariates: {0}")]
    Covariates(String),

    #[error("block pair ({q}, {r}) out of range for {n_blocks} blocks")]
    BlockOutOfRange { q: usize, r: usize, n_blocks: usize },

    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid hyperparameters: {0}")]
    Hyperparams(String),

    #[error("singular posterior precision in {0}")]
    SingularPrecision(&'static str),

    #[error("numeric overflow at iteration {iteration}: {what}")]
    NumericOverflow { iteration: usize, what: String },

    #[error("no posterior draws available")]
    EmptyDraws,

    #[error("i/o: {0}")]
    Io(String),
}

impl BnmmError {
    /// True for failures raised by the numerics rather than by the input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            BnmmError::SingularPrecision(_) | BnmmError::NumericOverflow { .. }
        )
    }
}
