use thiserror::Error;

use crate::model::Key;

/// Which integrity constraint a relation broke.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Uniqueness,
    Continuity,
}

impl std::fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConstraintKind::Uniqueness => f.write_str("uniqueness"),
            ConstraintKind::Continuity => f.write_str("continuity"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("index {index:?} out of bounds for array bound {bound:?}")]
    OutOfBounds { index: Vec<usize>, bound: Vec<usize> },
    #[error("kernel type error in `{kernel}`: {msg}")]
    KernelType { kernel: String, msg: String },
    #[error("unknown kernel `{0}`")]
    UnknownKernel(String),
    #[error("kernel `{0}` is already registered")]
    DuplicateKernel(String),
    #[error("{kind} constraint violated at key {witness:?}")]
    Constraint { kind: ConstraintKind, witness: Key },
    #[error("plan validation error at {path}: {msg}")]
    Validation { path: String, msg: String },
    #[error("ambiguous shuffle: key {0:?} carries different arrays on different sites")]
    Ambiguity(Key),
    #[error("unknown source `{0}`")]
    UnknownSource(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("execution error at node {node}, site {site}: {msg}")]
    Execution { node: usize, site: usize, msg: String },
    #[error("search budget must be positive")]
    ZeroBudget,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Validation { path: path.into(), msg: msg.into() }
    }

    pub fn kernel(kernel: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::KernelType { kernel: kernel.into(), msg: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
