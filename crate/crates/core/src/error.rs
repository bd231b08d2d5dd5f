use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected:?}, got {actual:?}")]
    Dimension {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("empty partition: {0}")]
    EmptyPartition(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("decode error: {0}")]
    Decode(#[from] DecodeError),
}

impl Error {
    pub(crate) fn dim(op: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        Error::Dimension {
            op,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}

/// Failures while decoding one of the binary formats (weights, index, frames).
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("layout id mismatch: expected {expected:#018x}, found {found:#018x}")]
    LayoutMismatch { expected: u64, found: u64 },
    #[error("truncated input: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("truncated index file inside entry {entry}")]
    TruncatedEntry { entry: u64 },
    #[error("declared frame length {declared} does not match encoded size {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("unknown message type {0}")]
    UnknownMessageType(u8),
    #[error("invalid field {field}: {reason}")]
    InvalidField { field: &'static str, reason: String },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
}
