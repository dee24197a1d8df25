use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, VaiError>;

#[derive(Debug, Error)]
pub enum VaiError {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty keypoint set")]
    EmptyKeypoints,

    #[error("cross-episode sampling needs at least 2 episodes, store has {episodes}")]
    SingleEpisodeStore { episodes: usize },

    #[error("store is empty")]
    EmptyStore,

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f32 },

    #[error("environment failure at episode {episode}, step {step}: {source}")]
    Environment {
        episode: usize,
        step: usize,
        #[source]
        source: Box<VaiError>,
    },

    #[error("frame {index}: {source}")]
    Frame {
        index: usize,
        #[source]
        source: Box<VaiError>,
    },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("overlay augmentation selected but no overlay images are available")]
    EmptyOverlayDir,

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl VaiError {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        VaiError::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VaiError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        VaiError::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
