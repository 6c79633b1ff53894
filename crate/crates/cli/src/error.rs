use std::path::{Path, PathBuf};

use rpsf_core::Error as CoreError;

pub const EXIT_MISSING_INPUT: i32 = 2;
pub const EXIT_INVALID_CONFIG: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("missing input {}: {reason}", path.display())]
    MissingInput { path: PathBuf, reason: String },

    /// `path` is a JSON path (`mask.epsilon`) or a flag name (`--psis`).
    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{0}")]
    Other(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingInput { .. } => EXIT_MISSING_INPUT,
            CliError::Config { .. } => EXIT_INVALID_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Other(_) => 1,
        }
    }

    pub fn config(path: impl Into<String>, message: impl ToString) -> Self {
        CliError::Config { path: path.into(), message: message.to_string() }
    }
}

/// Classifies a library error. `at` names the config section or flag the
/// failing value came from, when known.
pub fn classify(err: CoreError, at: &str) -> CliError {
    match err {
        CoreError::Io(e) if e.kind() == std::io::ErrorKind::NotFound => {
            // the message carries "path: reason"
            let text = e.to_string();
            let (path, reason) = text.split_once(": ").unwrap_or((text.as_str(), "not found"));
            CliError::MissingInput { path: PathBuf::from(path), reason: reason.to_string() }
        }
        CoreError::Io(e) => CliError::Other(format!("I/O error: {e}")),
        e @ (CoreError::Config(_) | CoreError::Domain(_) | CoreError::Dimension(_) | CoreError::Sampling(_) | CoreError::Format(_)) => {
            CliError::config(at, e)
        }
        e @ (CoreError::Degenerate(_) | CoreError::Singular(_) | CoreError::NonFinite(_) | CoreError::Insufficient(_)) => {
            CliError::Numerical(e.to_string())
        }
    }
}

/// `.at("mask")` on a library result.
pub trait At<T> {
    fn at(self, path: &str) -> CliResult<T>;
}

impl<T> At<T> for rpsf_core::Result<T> {
    fn at(self, path: &str) -> CliResult<T> {
        self.map_err(|e| classify(e, path))
    }
}

pub fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingInput { path: path.to_path_buf(), reason: e.to_string() },
        _ => CliError::Other(format!("cannot read {}: {e}", path.display())),
    })
}
