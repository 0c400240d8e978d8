use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can report.
///
/// Variants are grouped by how the command line reports them: see
/// [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("trailing data: {0} unexpected bytes after payload")]
    TrailingData(u64),
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("invalid labels: {0}")]
    Labels(String),
    #[error("empty partition: {0}")]
    EmptyPartition(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid graph: {0}")]
    Graph(String),
    #[error("invalid pruning plan: {0}")]
    Plan(String),
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("layer {layer}: {source}")]
    Layer {
        layer: String,
        #[source]
        source: Box<Error>,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_layer(self, layer: &str) -> Self {
        Error::Layer {
            layer: layer.to_string(),
            source: Box::new(self),
        }
    }

    /// Process exit code for this failure: 2 usage, 3 input format, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Layer { source, .. } => source.exit_code(),
            Error::Config(_) => 2,
            Error::Numeric(_) => 4,
            _ => 3,
        }
    }
}
