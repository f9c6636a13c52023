use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid fleet: {0}")]
    InvalidFleet(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input too short: need at least {needed} samples, got {got}")]
    InputTooShort { needed: usize, got: usize },
    #[error("label error: {0}")]
    Label(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("data error: {0}")]
    Data(String),
    #[error("forget set is empty")]
    EmptyForgetSet,
    #[error("max over other classes is undefined with {0} class(es)")]
    DegenerateClasses(usize),
    #[error("frozen model was modified during unlearning")]
    Integrity,
    #[error("mode error: {0}")]
    Mode(String),
    #[error("coverage error: {0}")]
    Coverage(String),
    #[error("invalid probability distribution: {0}")]
    Distribution(String),
    #[error("unsupported architecture: {0}")]
    UnsupportedArch(String),
}

pub type Result<T> = core::result::Result<T, Error>;
