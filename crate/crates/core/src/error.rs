use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("bad magic at byte {offset}: expected {expected:?}, found {found:?}")]
    BadMagic {
        offset: u64,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("truncated record at byte {offset}: {context}")]
    Truncated { offset: u64, context: String },

    #[error("out-of-bounds coordinate at byte {offset}: ({x}, {y}) outside {width}x{height}")]
    OutOfBounds {
        offset: u64,
        x: u16,
        y: u16,
        width: u16,
        height: u16,
    },

    #[error("bad polarity at byte {offset}: {value} (expected -1 or +1)")]
    BadPolarity { offset: u64, value: i8 },

    #[error("non-monotone timestamp at byte {offset}: {t} after {prev}")]
    NonMonotoneTimestamp { offset: u64, t: u64, prev: u64 },

    #[error("shape mismatch for {name}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    ChecksumMismatch { stored: u64, computed: u64 },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("state error: {0}")]
    State(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
