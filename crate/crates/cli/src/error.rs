use std::fmt;

use semsplat_core::Error;
use serde::Serialize;

/// Failure of a subcommand, mapped to a stable exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Config(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// `(exit code, machine-readable kind)`.
pub fn classify(e: &CliError) -> (i32, &'static str) {
    match e {
        CliError::Usage(_) => (2, "usage"),
        CliError::Config(_) => (2, "config"),
        CliError::Core(e) => match e {
            Error::InvalidConfig(_) => (2, "config"),
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => (3, "missing_file"),
            Error::Io { .. } => (3, "io"),
            Error::BadMagic { .. } => (4, "bad_magic"),
            Error::UnsupportedVersion(_) | Error::Malformed(_) | Error::Json(_) => (4, "malformed"),
            Error::DimensionMismatch(_) | Error::MissingLabel(_) => (5, "dimension_mismatch"),
            Error::NonFinite { .. } => (6, "non_finite"),
            Error::NoObjectFound(_) => (7, "no_object"),
            Error::Domain(_) | Error::DegenerateRegion { .. } | Error::EmptyMask => (8, "domain"),
        },
    }
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    exit_code: i32,
    message: String,
}

/// Writes the error JSON line to stderr and returns the exit code.
pub fn report(e: &CliError) -> i32 {
    let (code, kind) = classify(e);
    let r = ErrorReport {
        error: kind,
        exit_code: code,
        message: e.to_string(),
    };
    eprintln!("{}", serde_json::to_string(&r).expect("error report serializes"));
    code
}
