use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure class, used by the command line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("missing column `{column}` in {path}")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}: row {row}, column `{column}`: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("singular design: column(s) {} are collinear with earlier columns", .columns.join(", "))]
    SingularDesign { columns: Vec<String> },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("balance infeasible for covariate(s): {}", .covariates.join(", "))]
    Infeasible { covariates: Vec<String> },

    #[error("pairing error: unmatched keys {}", .keys.join(", "))]
    Pairing { keys: Vec<String> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Argument(_) | Error::Config(_) => ErrorKind::Usage,
            Error::Schema(_)
            | Error::MissingColumn { .. }
            | Error::Parse { .. }
            | Error::Domain(_)
            | Error::Degenerate(_)
            | Error::Pairing { .. }
            | Error::Io { .. }
            | Error::Json(_) => ErrorKind::Data,
            Error::SingularDesign { .. } | Error::Infeasible { .. } | Error::Numerical(_) => {
                ErrorKind::Numerical
            }
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
