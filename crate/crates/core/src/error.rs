use thiserror::Error;

/// Scenario and configuration problems, reported before a run starts.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    /// Schema violation; the message carries the JSON path of the offending field.
    #[error("{0}")]
    Schema(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}
