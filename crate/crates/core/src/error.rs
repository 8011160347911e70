use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("unmapped labels: {}", labels.join(", "))]
    UnmappedLabels { labels: Vec<String> },

    #[error("duplicate household key `{key}` in {file}")]
    KeyCollision { file: String, key: String },

    #[error("malformed CSV in {file} at line {line}: {message}")]
    MalformedCsv {
        file: String,
        line: u64,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular design: term `{term}` is collinear with {}", if previous.is_empty() { "the intercept".to_string() } else { previous.join(", ") })]
    SingularDesign { term: String, previous: Vec<String> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("permutation index {index} out of range (n_perm = {n_perm})")]
    PermutationIndex { index: usize, n_perm: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse error category, mapped onto process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Io { .. } => ErrorKind::Config,
            Error::SingularDesign { .. } | Error::Numerical(_) => ErrorKind::Numerical,
            Error::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numerical => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
