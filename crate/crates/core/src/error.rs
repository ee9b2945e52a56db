use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid array geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("numerical failure in {context}{}", iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    Numerical {
        context: String,
        iteration: Option<usize>,
    },

    #[error("pilot matrix is rank deficient: rank {rank} < {required} users")]
    RankDeficient { rank: usize, required: usize },

    #[error("no active components above the support threshold")]
    NoActiveComponents,

    #[error("reference channel has zero norm")]
    ZeroReference,
}

impl Error {
    pub(crate) fn numerical(context: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
            iteration: None,
        }
    }

    /// Attaches the loop iteration to a numerical error.
    pub(crate) fn at_iteration(self, iter: usize) -> Self {
        match self {
            Error::Numerical { context, .. } => Error::Numerical {
                context,
                iteration: Some(iter),
            },
            other => other,
        }
    }
}
