use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library. Numeric non-convergence is not an error;
/// it is reported through the `converged` flags on results.
#[derive(Debug, Error)]
pub enum TarcoError {
    #[error("newick parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("domain error at row {row}, column {col}: {message}")]
    Domain {
        row: usize,
        col: usize,
        message: String,
    },

    #[error("{}: line {line}: {message}", path.display())]
    Input {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("gram matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e}); project it first")]
    NotPsd { min_eigenvalue: f64 },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = TarcoError> = std::result::Result<T, E>;

pub(crate) fn dim_err(
    context: &'static str,
    expected: impl ToString,
    found: impl ToString,
) -> TarcoError {
    TarcoError::Dimension {
        context,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
