use std::path::PathBuf;

/// Errors surfaced by the simulator and learning stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{0}: non-finite value")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("stimulus set is empty")]
    EmptyStimulusSet,

    #[error("no decodable PNG images in {0}")]
    NoImages(PathBuf),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("unknown tensor name `{0}`")]
    UnknownTensor(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("parameter server unavailable: {0}")]
    Server(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Shape {
        op,
        detail: detail.into(),
    })
}
