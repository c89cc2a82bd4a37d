use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("sequence length {len} exceeds the limit of {max}")]
    Length { len: usize, max: usize },

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("malformed output: {0}")]
    MalformedOutput(String),

    /// Generation ran out of budget before every `[blank]` was answered.
    /// `partial` holds the raw tokens produced so far.
    #[error("incomplete generation after {} tokens: {answered}/{expected} answers", partial.len())]
    IncompleteGeneration {
        partial: Vec<String>,
        answered: usize,
        expected: usize,
    },

    #[error("no embedding for {0:?}")]
    Lookup(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by bad caller input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::Degenerate(_)
                | Error::Length { .. }
                | Error::Lookup(_)
                | Error::Parse { .. }
                | Error::Config { .. }
        )
    }
}
