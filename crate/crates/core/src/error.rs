use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: alloc::vec::Vec<usize>,
        rhs: alloc::vec::Vec<usize>,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("example {id}: invalid field `{field}`: {reason}")]
    Invariant {
        id: String,
        field: &'static str,
        reason: String,
    },
    #[error("{0}")]
    Precondition(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("{0}")]
    Numerics(String),
}

impl Error {
    pub(crate) fn invariant(id: &str, field: &'static str, reason: impl Into<String>) -> Self {
        Error::Invariant {
            id: id.into(),
            field,
            reason: reason.into(),
        }
    }
}
