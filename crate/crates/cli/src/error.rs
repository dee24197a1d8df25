use std::path::PathBuf;

use thiserror::Error;
use vai_core::VaiError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error("missing artifact: {} ({what})", path.display())]
    MissingArtifact { path: PathBuf, what: &'static str },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: VaiError,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 1 usage/config, 2 missing artifact, 3 training divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingArtifact { .. } => 2,
            CliError::Stage { source, .. } if is_divergence(source) => 3,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

fn is_divergence(e: &VaiError) -> bool {
    match e {
        VaiError::Divergence { .. } => true,
        VaiError::Frame { source, .. } | VaiError::Environment { source, .. } => is_divergence(source),
        _ => false,
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> StageExt<T> for vai_core::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Stage { stage, source })
    }
}
