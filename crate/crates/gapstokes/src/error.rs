use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A point or argument lies outside the chart where the geometry is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid user input (profile, configuration, fit samples, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// A wall-profile derivative above the configured cap was requested.
    #[error("capability error: derivative order {order} exceeds cap {cap}")]
    Capability { order: u32, cap: u32 },

    /// Adaptive quadrature failed to reach the requested tolerance.
    #[error("quadrature did not converge at {path}: {detail}")]
    Quadrature { path: String, detail: String },

    /// A structural assertion of a construction failed; this indicates a bug.
    #[error("construction error: {0}")]
    Construction(String),

    /// The linear solver failed.
    #[error("linear solver: {0}")]
    Solver(String),

    /// I/O failure with the path that caused it.
    #[error("{path}: {detail}")]
    Io { path: String, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
