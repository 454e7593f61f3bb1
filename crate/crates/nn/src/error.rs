use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("layer {layer} ({kind}): {msg}")]
    Shape { layer: usize, kind: &'static str, msg: String },
    #[error("tensor: {0}")]
    Tensor(String),
    #[error("stale tape: {0}")]
    StaleTape(String),
    #[error("parameters: {0}")]
    Params(String),
}

impl Error {
    pub(crate) fn shape(layer: usize, kind: &'static str, msg: impl Into<String>) -> Self {
        Error::Shape { layer, kind, msg: msg.into() }
    }
}
