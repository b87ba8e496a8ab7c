use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("need at least one positive and one negative label")]
    SingleClass,

    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),

    #[error("empty batch")]
    EmptyBatch,

    #[error("point lies outside the eps-ball: linf distance {dist} > {eps}")]
    OutsideBall { dist: f64, eps: f64 },

    #[error("unknown attack `{0}` (expected clean, fgsm or pgd-<K>)")]
    UnknownAttack(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("class {class} has {have} instances in the pool, need {need}")]
    InsufficientPool {
        class: usize,
        have: usize,
        need: usize,
    },

    #[error("history has {have} epochs, need at least {need}")]
    HistoryTooShort { have: usize, need: usize },

    #[error("{}: {cause}", path.display())]
    Io {
        path: PathBuf,
        cause: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause: source,
        }
    }
}
