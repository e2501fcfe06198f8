use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("{path}: unsupported WAV format: {detail}")]
    WavFormat { path: PathBuf, detail: String },
    #[error("archive: bad magic, expected NTAR1")]
    BadMagic,
    #[error("archive: truncated while reading {0}")]
    Truncated(&'static str),
    #[error("archive: unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("archive: {0}")]
    Archive(String),
    #[error("{path}:{line}: {detail}")]
    Parse { path: PathBuf, line: usize, detail: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Model(#[from] codecsep_core::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    /// Process exit code: 1 for usage errors, 2 for data and model errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
