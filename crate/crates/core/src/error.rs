use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit codes:
/// validation failures exit 1, I/O failures exit 2, numeric failures exit 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("config parse error: {0}")]
    ConfigParse(String),
    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("numeric check failed: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Format { .. } => 2,
            Error::Numeric(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
