use std::path::PathBuf;

use jackstraw_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Input {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

pub type CliResult<T> = Result<T, CliError>;

/// Exit codes, stable per error class.
pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const PARSE: i32 = 2;
    pub const NUMERIC: i32 = 3;
    pub const CONFIG: i32 = 4;
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::File { .. } => exit::IO,
            CliError::Input { .. } => exit::PARSE,
            CliError::Core(e) => match e {
                CoreError::Parse { .. } | CoreError::InvalidData(_) => exit::PARSE,
                CoreError::DegenerateRows(_)
                | CoreError::DecompositionFailure(_)
                | CoreError::SingularBasis
                | CoreError::PerfectFit => exit::NUMERIC,
                CoreError::Io(_) => exit::IO,
                _ => exit::CONFIG,
            },
        }
    }
}

pub(crate) fn with_path<T>(path: &std::path::Path, res: std::io::Result<T>) -> CliResult<T> {
    res.map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })
}
