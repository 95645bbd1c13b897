use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Kernel mass at an evaluation point is zero, so a ratio estimator is undefined.
    #[error("kernel density vanishes at point {point:?}")]
    DensityUnderflow { point: Vec<f64> },

    /// Same as [`Error::DensityUnderflow`] but for a batch of sample rows.
    #[error("kernel density vanishes at {} sample row(s), first rows {:?}", rows.len(), &rows[..rows.len().min(8)])]
    DensityUnderflowRows { rows: Vec<usize> },

    #[error("local polynomial design is rank deficient at point {point:?}")]
    SingularLocalFit { point: Vec<f64> },

    #[error("least-squares design matrix is rank deficient")]
    RankDeficient,

    #[error("residual variance {0:e} is degenerate")]
    DegenerateVariance(f64),

    #[error("treatment must be strictly positive for the lognormal family (row {row})")]
    NonPositiveTreatment { row: usize },

    #[error("no observations remain after trimming")]
    EmptyTrimmedSample,

    #[error("every support density is zero at grid point t = {t}")]
    SupportDensityZero { t: f64 },

    #[error("quantile density {density:e} is below the floor at tau = {tau}")]
    QuantileDensityUnderflow { tau: f64, density: f64 },

    #[error("oracle query outside the model domain: {0}")]
    OracleDomain(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
