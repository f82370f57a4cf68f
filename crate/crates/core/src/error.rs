use thiserror::Error;

/// Errors produced anywhere in the link chain.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// An event stream handed to a merge or demodulator is not time-sorted.
    #[error("stream {stream} is not sorted at index {index}: t={t} follows t={prev}")]
    Unsorted {
        stream: usize,
        index: usize,
        t: u64,
        prev: u64,
    },

    /// Input has the wrong shape (length, emptiness, ...).
    #[error("structural error: {0}")]
    Structural(String),

    /// No frame sync pattern could be located.
    #[error("no frame sync found in {0} bits")]
    Alignment(usize),

    /// A text input could not be parsed.
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
