use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("vocab error: token id {id} out of range for vocabulary of size {size}")]
    Vocab { id: usize, size: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("plan error: crop {crop} does not fit scaled side {side} at scale {scale}")]
    Plan { scale: f64, side: u32, crop: u32 },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("training error: non-finite gradient in block `{block}`")]
    NonFiniteGradient { block: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

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

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
