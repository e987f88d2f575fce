//! Reproducible experiment runner for the `semiclassical` crate: TOML run
//! manifests, h-ladder sweeps, log-log slope fits and atomic CSV/JSON output.

pub mod experiments;
pub mod fit;
pub mod manifest;
pub mod outcome;
pub mod runner;

pub use fit::{fit_slope, SlopeFit};
pub use manifest::RunManifest;
pub use outcome::{Check, Outcome, Table};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid manifest:\n  {}", .0.join("\n  "))]
    Schema(Vec<String>),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("{experiment} failed in {module}: {source}")]
    Numerics {
        experiment: String,
        module: &'static str,
        #[source]
        source: semiclassical::Error,
    },

    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 2 for configuration errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Schema(_) => 2,
            _ => 1,
        }
    }
}
