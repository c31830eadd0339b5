use std::path::PathBuf;

/// Errors produced anywhere in the offline/online pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid mesh: {0}")]
    Validation(String),

    #[error("region box {0} is not aligned with mesh cells")]
    Alignment(String),

    #[error("degenerate geometry: {0}")]
    Geometry(String),

    #[error("unknown label {0}")]
    UnknownLabel(i32),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("Newton iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("insufficient basis: {0}")]
    Capacity(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("archive error: {0}")]
    Archive(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
