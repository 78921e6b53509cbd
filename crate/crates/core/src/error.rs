use std::path::PathBuf;

use crate::corpus::DocId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid document {doc}: {reason}")]
    InvalidDocument { doc: DocId, reason: String },

    #[error("store integrity error at record {record}: {reason}")]
    Integrity { record: String, reason: String },

    #[error("document {0} not found")]
    NotFound(DocId),

    #[error("link {src} -> {dst} references a document absent from the corpus")]
    DanglingOccurrence { src: DocId, dst: DocId },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("infeasible synthetic spec: {0}")]
    Infeasible(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
