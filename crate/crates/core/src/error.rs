use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("degenerate tip state: L = X + W = 0")]
    EmptyTipSet,

    #[error("index {index} out of range 0..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("time {t} outside [{lo}, {hi}]")]
    TimeOutOfRange { t: f64, lo: f64, hi: f64 },

    #[error("b(s) is not positive on [{x}, {y}]")]
    NonPositiveB { x: f64, y: f64 },

    #[error("no member of F(alpha, lambda) found after {tries} tries")]
    SamplingExhausted { tries: usize },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("{0}")]
    Config(#[from] crate::config::ConfigErrors),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
