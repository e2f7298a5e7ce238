use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("truncated input: {0}")]
    TruncatedInput(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("inconsistent input: {0}")]
    InconsistentInput(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("gop size {0} is not a power of two")]
    InvalidGop(usize),
    #[error("schedule alignment: {0}")]
    ScheduleAlignment(String),
    #[error("schedule violation: {0}")]
    ScheduleViolation(String),
    #[error("invalid gain: {0}")]
    InvalidGain(String),
    #[error("no gains stored for level {0} and extrapolation is disabled")]
    MissingLevel(u8),
    #[error("gain fit needs at least two known levels, got {0}")]
    UnderdeterminedFit(usize),
    #[error("bitstream format: {0}")]
    Format(String),
    #[error("bitstream corruption: {0}")]
    Corruption(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("rd curves have no overlapping quality range")]
    NoOverlap,
    #[error("invalid pairing: {0}")]
    InvalidPairing(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
