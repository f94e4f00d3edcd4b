use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong in this crate.
///
/// Numerical failures, configuration errors and data errors are kept apart so
/// that the command-line front end can map them onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{what} is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { what: &'static str, asymmetry: f64 },

    #[error("matrix is not positive semi-definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemiDefinite { min_eigenvalue: f64 },

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("matrix is singular or ill-conditioned (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("degrees of freedom {dof} too small: {reason}")]
    DegreesOfFreedom { dof: f64, reason: String },

    #[error("outside distribution support: {0}")]
    Domain(String),

    #[error("config error{}: {message}", location(*line, *column))]
    Config {
        line: Option<usize>,
        column: Option<usize>,
        message: String,
    },

    #[error("config field `{field}`: {reason}")]
    ConfigField { field: String, reason: String },

    #[error("data error{}: {message}", location(*row, *column))]
    Data {
        row: Option<usize>,
        column: Option<usize>,
        message: String,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn location(a: Option<usize>, b: Option<usize>) -> String {
    match (a, b) {
        (Some(a), Some(b)) => format!(" at {a}:{b}"),
        (Some(a), None) => format!(" at {a}"),
        _ => String::new(),
    }
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// Process exit code used by the `pspp` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::ConfigField { .. } => 2,
            Error::Data { .. } | Error::Io { .. } => 3,
            _ => 4,
        }
    }
}
