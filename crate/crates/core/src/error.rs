use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: non-finite value in result")]
    NonFinite { op: &'static str },
    #[error("unbound leaf `{0}`")]
    UnboundLeaf(String),
    #[error("duplicate leaf name `{0}`")]
    DuplicateLeaf(String),
    #[error("gradient requested of a non-scalar output with shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("leaf `{0}` does not require a gradient")]
    NoGrad(String),
    #[error("{op}: every slot of a softmax row is masked")]
    AllMasked { op: &'static str },
    #[error("{op}: invalid argument ({detail})")]
    InvalidArgument { op: &'static str, detail: String },
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid parameters for {family}: {detail}")]
    InvalidParams { family: String, detail: String },
    #[error("unknown graph family `{0}`")]
    UnknownFamily(String),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("infeasible edit sequence: {0}")]
    InfeasibleEdit(String),
    #[error("empty graph list")]
    EmptyBatch,
    #[error("malformed graph: {0}")]
    Malformed(String),
    #[error("{path}:{line}: {detail}")]
    Parse { path: PathBuf, line: usize, detail: String },
    #[error("{path}: unsupported dataset header ({detail})")]
    Version { path: PathBuf, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PermError {
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("scores contain a non-finite value")]
    NonFiniteScores,
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix has a negative entry")]
    Negative,
    #[error("row or column {0} is all zero")]
    ZeroLine(usize),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
}

/// Crate-wide error for model, training and evaluation entry points.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Perm(#[from] PermError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite {what} at step {step}")]
    NonFinite { what: String, step: usize },
    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("evaluation: {0}")]
    Eval(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
