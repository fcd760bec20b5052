use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Anything wrong with the run configuration or command-line arguments.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Unwritable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed file: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("{manifest}:{line}: class `{class}` is not in the class list")]
    UnknownClass {
        manifest: PathBuf,
        line: usize,
        class: String,
    },

    #[error("{path}: mask is {found:?} but the image is {expected:?}")]
    MaskShape {
        path: PathBuf,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("{0}: no samples")]
    NoSamples(PathBuf),

    #[error("domain `{0}` not found")]
    UnknownDomain(String),

    #[error("evaluation targets include the source domain `{0}`")]
    SourceLeak(String),

    #[error(transparent)]
    Core(#[from] metadefa_core::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status: 1 for configuration problems, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn read(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Unreadable { path, source }
    }

    pub(crate) fn write(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Unwritable { path, source }
    }
}
