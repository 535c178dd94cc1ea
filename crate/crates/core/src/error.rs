use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("numerics: shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A documented precondition or invariant of `module` was violated.
    #[error("{module}: {msg}")]
    Contract { module: &'static str, msg: String },

    #[error("transformer: non-finite loss {loss} at step {step} (lr={lr})")]
    NonFinite { step: usize, loss: f64, lr: f64 },

    #[error("{module}: parse error at line {line}: {msg}")]
    Parse {
        module: &'static str,
        line: usize,
        msg: String,
    },

    #[error("model-io: {0}")]
    Format(#[from] FormatError),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(module: &'static str, msg: impl Into<String>) -> Self {
        Error::Contract {
            module,
            msg: msg.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn parse(module: &'static str, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            module,
            line,
            msg: msg.into(),
        }
    }
}

/// Container validation failures. Each variant names the offending field.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected \"HYDRAM1\\n\", found {found:?}")]
    BadMagic { found: Vec<u8> },

    #[error("payload length mismatch: manifest declares {expected} bytes, file holds {actual}")]
    PayloadLength { expected: u64, actual: u64 },

    #[error("tensor {tensor}: offset {offset} overlaps previous tensor ending at {previous_end}")]
    Overlap {
        tensor: String,
        offset: u64,
        previous_end: u64,
    },

    #[error("tensor {tensor}: offset {offset} leaves a gap after previous tensor ending at {previous_end}")]
    Gap {
        tensor: String,
        offset: u64,
        previous_end: u64,
    },

    #[error("tensor {tensor}: shape {shape:?} holds {expected} elements but manifest declares {declared}")]
    ElementCount {
        tensor: String,
        shape: Vec<usize>,
        expected: usize,
        declared: usize,
    },

    #[error("tensor {tensor}: shape {actual:?} does not match config-implied {expected:?}")]
    ShapeMismatch {
        tensor: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("missing tensor {0}")]
    MissingTensor(String),

    #[error("unexpected tensor {0}")]
    UnexpectedTensor(String),

    #[error("manifest: {0}")]
    Manifest(String),
}
