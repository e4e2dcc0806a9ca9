use std::io;

use thiserror::Error;

use crate::ingest::Service;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid arguments or inputs that cannot be combined.
    #[error("{0}")]
    Usage(String),

    /// Two inputs describe different (protocol, port) pairs.
    #[error("service mismatch: expected {expected}, found {found}")]
    ServiceMismatch { expected: Service, found: Service },

    /// A scan source line was rejected under the strict policy.
    #[error("ingest error at line {line}: {reason}")]
    Ingest { line: u64, reason: String },

    /// A structured input file (routes, stats, results, seeds, plans) is malformed.
    #[error("malformed input at line {line}: {reason}")]
    Format { line: u64, reason: String },

    /// Ground truth does not cover the plan being evaluated.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn format(line: u64, reason: impl Into<String>) -> Self {
        Error::Format {
            line,
            reason: reason.into(),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line()).unwrap_or(0);
        match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            kind => Error::Format {
                line,
                reason: csv_reason(kind),
            },
        }
    }
}

fn csv_reason(kind: csv::ErrorKind) -> String {
    match kind {
        csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => format!("expected {expected_len} fields, found {len}"),
        csv::ErrorKind::Utf8 { err, .. } => err.to_string(),
        other => format!("{other:?}"),
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        if err.is_io() {
            return Error::Io(err.into());
        }
        Error::Format {
            line: err.line() as u64,
            reason: err.to_string(),
        }
    }
}
