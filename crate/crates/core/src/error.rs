use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the models, analysis routines, solver and experiment runners.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParam {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("outside model domain: {0}")]
    Domain(String),

    #[error("integration produced a non-finite state at step {step}")]
    NonFiniteStep { step: usize },

    #[error("leaning bicycle capsized at t = {t:.3} s (phi = {phi:.4} rad)")]
    Capsize { t: f64, phi: f64 },

    #[error("degenerate regression: {0}")]
    DegenerateFit(&'static str),

    #[error("usage error: {0}")]
    Usage(&'static str),

    #[error("scenario {index} (v = {v} m/s, kappa = {kappa} 1/m) failed: {source}")]
    Scenario {
        index: usize,
        v: f64,
        kappa: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed report: {0}")]
    Report(String),

    #[error("report serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_finite(value: f64, what: &'static str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
