use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = EfaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EfaError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("schema violation in record `{record}`, field `{field}`: {message}")]
    Schema { record: String, field: String, message: String },

    #[error("category {category_id} has no lexicon entry")]
    MissingLexicon { category_id: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("encoder provider `{0}` is not available")]
    ProviderUnavailable(String),

    #[error("token id {id} is outside the vocabulary of size {size}")]
    TokenOutOfVocabulary { id: usize, size: usize },

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("template slot `{0}` has no value")]
    MissingSlot(String),

    #[error("generation client `{client}` failed: {message}")]
    Transport { client: String, message: String },

    #[error("generation client `{client}` returned an empty response")]
    EmptyResponse { client: String },

    #[error("malformed model output after {attempts} attempt(s): {message}")]
    RetriesExhausted { attempts: usize, message: String },

    #[error("review item `{0}` does not exist")]
    UnknownReviewItem(String),

    #[error("review item `{id}` was already decided ({status})")]
    AlreadyDecided { id: String, status: String },
}

impl EfaError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Self::Parse { context: context.into(), message: message.to_string() }
    }

    pub fn schema(record: impl Into<String>, field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Schema { record: record.into(), field: field.into(), message: message.into() }
    }

    /// True for errors caused by user-supplied configuration rather than runtime failures.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Self::Config(_) | Self::InvalidArgument(_) | Self::MissingSlot(_))
    }
}

pub(crate) fn read_to_string(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| EfaError::io(path, e))
}

pub(crate) fn write_string(path: &std::path::Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| EfaError::io(parent, e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| EfaError::io(path, e))
}
