use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config line {line}: expected key = value, got '{text}'")]
    Syntax { line: usize, text: String },
    #[error("unknown config key '{key}' (accepted: {known})")]
    UnknownKey { key: String, known: String },
    #[error("bad value '{value}' for key '{key}': {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] cnnlab::Error),
    #[error("thread pool: {0}")]
    Threads(String),
    #[error("{0} assertion(s) failed")]
    Failed(usize),
}
