use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic { path: PathBuf, found: String, expected: &'static str },
    #[error("{path}: unsupported format version {found} (expected {expected})")]
    VersionMismatch { path: PathBuf, found: String, expected: String },
    #[error("{path}: truncated at byte {offset} while reading {what}")]
    Truncated { path: PathBuf, offset: usize, what: &'static str },
    #[error("{path}: {detail}")]
    Malformed { path: PathBuf, detail: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("duplicate video id `{0}`")]
    DuplicateId(String),
    #[error("video `{0}` not found")]
    MissingVideo(String),
    #[error("no cached feature for video `{0}`")]
    CacheMiss(String),
    #[error("frozen component `{component}` changed during training ({before:016x} -> {after:016x})")]
    FrozenChanged { component: String, before: u64, after: u64 },
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("unsupported layer kind `{0}`")]
    UnsupportedLayer(String),
    #[error("encoder: {0}")]
    Encoder(String),
    #[error("image {path}: {detail}")]
    Image { path: PathBuf, detail: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] mvfuse_nn::NnError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io { path: path.into(), source })
    }
}
