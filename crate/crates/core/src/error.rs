use std::path::PathBuf;

/// Errors raised anywhere in the gaitcast pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("format error in column `{column}`: {message}")]
    Format { column: String, message: String },

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("index {index} out of range (must be < {bound})")]
    Range { index: usize, bound: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("signal length {len} too short: {message}")]
    Length { len: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("insufficient history at t={t}: lags require at least {required} past samples")]
    History { t: usize, required: usize },

    #[error("kernel matrix is not positive definite after {attempts} jitter escalations")]
    Conditioning { attempts: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Tags an error with the pipeline stage it came from.
pub trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
