use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("gate failure: {0}")]
    Gate(String),
    #[error("blow-up in replica {replica} at step {step}: {detail}")]
    BlowUp { replica: u64, step: usize, detail: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
