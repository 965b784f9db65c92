use std::path::PathBuf;

/// Errors raised across the crate. Each variant names the subsystem that
/// produced it so CLI messages can be prefixed accordingly.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("corpus: {0}")]
    Corpus(String),

    #[error("embedding: {0}")]
    Embedding(String),

    #[error("index build: {0}")]
    Build(String),

    #[error("index load: {0}")]
    Load(String),

    #[error("index format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("routing: {0}")]
    Routing(String),

    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error("generator: {0}")]
    Generator(String),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from bad user input (as opposed to a runtime
    /// failure). The CLI maps these to exit code 2.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Config(_) | Error::Version { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
