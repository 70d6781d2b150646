use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A parameter failed validation; `field` names the offending field.
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    /// `(c, v)` lies outside the Epstein-Zin aggregator domain.
    #[error("aggregator domain violation at c = {c}, v = {v}")]
    AggregatorDomain { c: f64, v: f64 },

    /// A non-finite number was produced where a finite one was required.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    /// Shapes of two operands disagree.
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape { context: &'static str, expected: usize, found: usize },

    /// Training diverged (a loss became non-finite).
    #[error("training diverged at iteration {iteration}: {what} is not finite")]
    Diverged { iteration: usize, what: &'static str },

    /// Statistics requested on an empty or degenerate sample.
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    /// A checkpoint or parameter buffer does not match the expected layout.
    #[error("incompatible network: {0}")]
    Incompatible(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { field, reason: reason.into() }
}
