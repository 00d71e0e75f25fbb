use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("non-finite loss at epoch {epoch}, step {step} (subnet {config_hash})")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        config_hash: String,
    },
    #[error("could not sample a subnet within {tol} MFLOPs of {target} after {tries} tries")]
    Sampling { target: f64, tol: f64, tries: usize },
    #[error("training budget exhausted")]
    BudgetExhausted,
    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
