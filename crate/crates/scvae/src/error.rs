use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] flowrecon_core::Error),
    #[error(transparent)]
    Nn(#[from] flowrecon_nn::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Diverged(String),
}

impl Error {
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Diverged(_) => true,
            Error::Core(e) => e.is_numerical(),
            _ => false,
        }
    }
}
