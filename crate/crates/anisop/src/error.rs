use thiserror::Error;

/// Unified error type for construction, argument, and solver failures.
#[derive(Debug, Error)]
pub enum AnisopError {
    /// A value violates a constructor contract (weights, SPD-ness, exponents …).
    #[error("invalid construction: {0}")]
    Construction(String),

    /// Arguments are structurally valid but outside an operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The requested estimate/lemma does not apply to the given exponents.
    #[error("regime mismatch: {0}")]
    Regime(String),

    /// A variational problem is ill-posed as stated (e.g. identically zero weight).
    #[error("ill-posed problem: {0}")]
    IllPosed(String),

    /// The energy is unbounded below on the feasible set; carries the
    /// negative value the iteration reached.
    #[error("supercritical: the energy reached {0}, so the problem is unbounded below")]
    Supercritical(f64),

    /// Serialization / deserialization / IO failures.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// JSON encode/decode failures.
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    /// A stored artifact does not match the data it is being attached to.
    #[error("artifact mismatch: {0}")]
    Mismatch(String),
}

impl AnisopError {
    pub(crate) fn construction(msg: impl Into<String>) -> Self {
        AnisopError::Construction(msg.into())
    }
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        AnisopError::Argument(msg.into())
    }
    pub(crate) fn regime(msg: impl Into<String>) -> Self {
        AnisopError::Regime(msg.into())
    }
}
