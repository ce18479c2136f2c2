use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("backward called without a recorded forward pass")]
    NoForward,

    #[error("schema error: {0}")]
    Schema(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("ingestion error: {0}")]
    Ingest(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("cannot standardize column `{0}`: zero variance over the training range")]
    ZeroVariance(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("training diverged in epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("ensemble member {index} failed: {source}")]
    Member { index: usize, source: Box<Error> },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("schema fingerprint mismatch: model expects {expected}, data has {found}")]
    Fingerprint { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Schema(_)
            | Error::Format(_)
            | Error::Ingest(_)
            | Error::Validation(_)
            | Error::Input(_)
            | Error::ZeroVariance(_)
            | Error::Fingerprint { .. }
            | Error::Csv(_) => 3,
            Error::Training(_) | Error::Diverged { .. } | Error::Member { .. } => 4,
            Error::Checkpoint(_) => 5,
            Error::Shape { .. } | Error::NoForward => 4,
            Error::Io(_) => 3,
        }
    }
}
