use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A physical parameter is outside its admissible domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A required piece of configuration is missing or contradictory.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// A² < 4B: the rate generator has complex eigenvalues.
    #[error("oscillatory regime: A^2 - 4B = {discriminant:e} < 0")]
    Oscillatory { discriminant: f64 },

    /// τ₁ = τ₂, the bunching amplitude is undefined.
    #[error("degenerate decay constants: tau1 = tau2 = {0} ns")]
    Degenerate(f64),

    /// Asymptotic limits do not map onto positive rates.
    #[error("inconsistent limits: {0}")]
    InconsistentLimits(String),

    #[error("normalization error: {0}")]
    Normalization(String),

    #[error("rebin error: {0}")]
    Rebin(String),

    /// The normal equations are singular along the named direction.
    #[error("rank-deficient fit: unidentifiable direction dominated by `{direction}`")]
    RankDeficient { direction: String },

    #[error("fit did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("integration failure: {0}")]
    Integration(String),

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Deserializes TOML, reporting failures with 1-based line and column.
pub(crate) fn from_toml<T: serde::de::DeserializeOwned>(
    text: &str,
    origin: &std::path::Path,
) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let (line, column) = e
            .span()
            .map(|s| {
                let before = &text[..s.start.min(text.len())];
                let line = before.matches('\n').count() + 1;
                let column = before.len() - before.rfind('\n').map_or(0, |p| p + 1) + 1;
                (line, column)
            })
            .unwrap_or((0, 0));
        Error::Parse {
            path: origin.to_path_buf(),
            line,
            column,
            message: e.message().to_string(),
        }
    })
}
