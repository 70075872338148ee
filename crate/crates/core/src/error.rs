use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CdnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CdnError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("malformed example: {0}")]
    MalformedExample(String),

    #[error("unsupported dialogue: {0}")]
    UnsupportedDialogue(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CdnError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CdnError::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::error::CdnError::Dimension(format!($($arg)*))
    };
}
pub(crate) use dim_err;
