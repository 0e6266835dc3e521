use thiserror::Error;

/// Crate-wide error type. The CLI maps these onto its exit-code contract:
/// `Config` → 2, `Io`/`Format` → 3.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents do not line up for an operation.
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A model or window configuration violates one of its invariants.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed manifest, blob sidecar, or report format.
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
