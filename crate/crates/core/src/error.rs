use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column {0} has zero variance")]
    ZeroVarianceColumn(usize),
    #[error("annotation column '{0}' is constant")]
    ConstantAnnotation(String),
    #[error("input contains a non-finite value")]
    NonFiniteInput,
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("dimension mismatch: {what} ({left} vs {right})")]
    DimensionMismatch {
        what: String,
        left: usize,
        right: usize,
    },
    #[error("duplicate SNP id '{0}'")]
    DuplicateSnpId(String),
    #[error("matrix is not positive definite{0}")]
    NotPositiveDefinite(String),
    #[error("objective became non-finite")]
    NonFiniteObjective,
    #[error("target FDR level q = {0} is outside (0, 1)")]
    InvalidQ(f64),
    #[error("cross-validation fold {fold} has {size} samples (need at least 2)")]
    DegenerateCv { fold: usize, size: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            line,
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(what: impl Into<String>, left: usize, right: usize) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            left,
            right,
        }
    }

    /// True for errors caused by malformed or inconsistent user input rather
    /// than a numerical failure during fitting.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::ZeroVarianceColumn(_)
                | Error::ConstantAnnotation(_)
                | Error::NonFiniteInput
                | Error::Parse { .. }
                | Error::DimensionMismatch { .. }
                | Error::DuplicateSnpId(_)
                | Error::InvalidQ(_)
                | Error::InvalidArgument(_)
        )
    }
}
