use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("chain is not unichain: {num_classes} closed classes {classes:?}")]
    NotUnichain {
        num_classes: usize,
        classes: Vec<Vec<usize>>,
    },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("overflow while evaluating {0}; use the log-sum-exp objective instead")]
    Overflow(&'static str),

    #[error("divergence after {iterations} iterations (last objectives: {trace:?})")]
    Divergence { iterations: usize, trace: Vec<f64> },

    #[error("no convergence within {0} iterations")]
    NoConvergence(usize),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("state {0} has zero count in the dataset")]
    ZeroCount(usize),

    #[error("support violation at (s={0}, a={1}): reference mass is zero")]
    Support(usize, usize),

    #[error("dataset lacks timestep tags")]
    MissingTimesteps,

    #[error("config error: {0}")]
    Config(String),

    #[error("schema mismatch, offending columns: {0:?}")]
    Schema(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotUnichain { .. }
                | Error::Singular(_)
                | Error::Overflow(_)
                | Error::Divergence { .. }
                | Error::NoConvergence(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
