use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{0} stage failed: {1}")]
    Stage(&'static str, #[source] gaitcast_core::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// `map_err` helper tagging core errors with a stage name.
pub trait Stage<T> {
    fn stage(self, name: &'static str) -> CliResult<T>;
}

impl<T> Stage<T> for gaitcast_core::Result<T> {
    fn stage(self, name: &'static str) -> CliResult<T> {
        self.map_err(|e| match e {
            // already tagged by the core pipeline
            gaitcast_core::Error::Stage { stage, source } => CliError::Stage(stage, *source),
            e => CliError::Stage(name, e),
        })
    }
}
