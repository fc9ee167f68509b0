use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] vlasov_core::Error),
    #[error("parse error at line {line}, key `{key}`: {reason}")]
    Parse { line: usize, key: String, reason: String },
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("Picard iteration stopped contracting, residuals {residuals:?}")]
    NonContraction { residuals: Vec<f64> },
    #[error("{context}: {source}")]
    Context { context: String, source: Box<Error> },
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T, E: Into<Error>> Context<T> for std::result::Result<T, E> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| Error::Context {
            context: what(),
            source: Box::new(e.into()),
        })
    }
}
