use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. Variants are grouped by the pipeline stage that
/// raises them so the CLI can map them onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    // -- schema / configuration -------------------------------------------
    #[error("schema error: {0}")]
    Schema(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    // -- data ingestion ----------------------------------------------------
    #[error("csv error: {0}")]
    Csv(String),

    #[error("row {line}: {msg}")]
    Row { line: u64, msg: String },

    #[error("column '{column}' is constant; cannot standardize")]
    ConstantColumn { column: String },

    #[error("codec error: {0}")]
    Codec(String),

    // -- numerics ----------------------------------------------------------
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite {component} loss at step {step}")]
    NonFiniteLoss { component: &'static str, step: usize },

    #[error("sampler produced non-finite state at step {step}")]
    NonFiniteSample { step: usize },

    // -- evaluation --------------------------------------------------------
    #[error("evaluation error: {0}")]
    Eval(String),

    // -- artifacts ---------------------------------------------------------
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint schema hash {found} does not match expected {expected}")]
    SchemaMismatch { expected: String, found: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (config, schema, paths)
    /// rather than a runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Schema(_)
                | Error::Config(_)
                | Error::InvalidArgument(_)
                | Error::Io { .. }
                | Error::SchemaMismatch { .. }
        )
    }
}
