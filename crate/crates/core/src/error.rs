use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {dim} expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid argument to {op}: {reason}")]
    Invalid { op: &'static str, reason: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("node {0} does not belong to this graph")]
    MissingNode(usize),
    #[error("graph node {node} references later node {input}")]
    Cycle { node: usize, input: usize },
    #[error("backward already ran on this graph; call reset first")]
    AlreadyBackpropagated,
    #[error("backward requires a scalar loss, got {0} elements")]
    NotScalar(usize),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn shape_err<T>(
    op: &'static str,
    dim: &'static str,
    expected: usize,
    actual: usize,
) -> Result<T> {
    Err(Error::Shape {
        op,
        dim,
        expected,
        actual,
    })
}

pub(crate) fn invalid<T>(op: &'static str, reason: impl Into<String>) -> Result<T> {
    Err(Error::Invalid {
        op,
        reason: reason.into(),
    })
}
