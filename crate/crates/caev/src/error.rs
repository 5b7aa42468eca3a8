use thiserror::Error;

/// Errors raised while loading or validating a scenario.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    /// One entry per violated invariant, each carrying a field path like `battery.K_b`.
    #[error("invalid scenario:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
}

/// Errors raised while a simulation is running.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("non-finite state at step {step} (t = {t:.3} s): {what}")]
    NonFinite { step: usize, t: f64, what: String },
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Other(String),
}
