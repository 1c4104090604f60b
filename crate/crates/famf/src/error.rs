use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] famf_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Bad config document or flag value.
    #[error("{0}")]
    Config(String),

    /// Malformed feature file, manifest, checkpoint or report.
    #[error("{path}: byte {offset}{}: {msg}", episode.map(|id| format!(", episode {id}")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        offset: u64,
        episode: Option<u64>,
        msg: String,
    },

    #[error("checkpoint fingerprint {found} does not match config fingerprint {expected}")]
    Fingerprint { expected: String, found: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code: 1 for usage and config problems, 2 for everything
    /// that goes wrong while doing the work.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Core(famf_core::Error::Config(_)) => 1,
            _ => 2,
        }
    }
}
