use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("layer {layer}: {message}")]
    Shape { layer: usize, message: String },

    #[error("invalid network spec: {0}")]
    Spec(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("not a weights file (bad magic bytes)")]
    BadMagic,

    #[error("weights file truncated: needed bytes {start}..{end} but file ends at {len}")]
    Truncated { start: u64, end: u64, len: u64 },

    #[error("weights file corrupt at byte {offset}: {message}")]
    Corrupt { offset: u64, message: String },

    #[error("degenerate crop: source box has zero area")]
    DegenerateCrop,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("missing input file: {}", path.display())]
    MissingInput { path: PathBuf },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("could not place hand inside the frame after {attempts} attempts")]
    Placement { attempts: u32 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    ImageDecode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the CLI: 1 for usage/config errors, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            _ => 2,
        }
    }
}
