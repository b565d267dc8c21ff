use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label {label} at pixel (y={y}, x={x}) is outside [0, {classes})")]
    LabelOutOfRange {
        y: usize,
        x: usize,
        label: u32,
        classes: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("loss diverged (non-finite) at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("image has zero variance and cannot be normalized")]
    ConstantImage,

    #[error("could not place objects after {attempts} attempts")]
    Placement { attempts: usize },

    #[error("malformed data in {context}: {message}")]
    Format { context: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
