use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the modeling and optimization pipeline.
///
/// The variants are grouped so a front end can map them onto distinct exit
/// codes: configuration problems, data problems and out-of-range inputs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("{field} = {value} is outside [{lo}, {hi}]{}", location(.line))]
    Range {
        field: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
        line: Option<usize>,
    },

    #[error("empty leaf")]
    EmptyLeaf,

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("fidelity mismatch: {0}")]
    Fidelity(String),

    #[error("malformed data{}: {message}", location(.line))]
    Malformed { line: Option<usize>, message: String },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn location(line: &Option<usize>) -> String {
    match line {
        Some(n) => format!(" at line {n}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(line: usize, message: impl Into<String>) -> Self {
        Error::Malformed {
            line: Some(line),
            message: message.into(),
        }
    }

    /// Attach a 1-based line number to a range error.
    pub(crate) fn at_line(self, n: usize) -> Self {
        match self {
            Error::Range {
                field,
                value,
                lo,
                hi,
                ..
            } => Error::Range {
                field,
                value,
                lo,
                hi,
                line: Some(n),
            },
            Error::Malformed { message, .. } => Error::Malformed {
                line: Some(n),
                message,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
