use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("profile resolution too coarse: {samples_per_period} samples per period, need at least {required}")]
    Resolution {
        samples_per_period: usize,
        required: usize,
    },

    #[error("integration failed at t = {time:e} s{}: {reason}", detuning.map(|d| format!(" (detuning {d:e} Hz)")).unwrap_or_default())]
    Integration {
        time: f64,
        detuning: Option<f64>,
        reason: String,
    },

    #[error("fit did not converge after {iterations} iterations (residual norm {residual:e})")]
    FitNotConverged { residual: f64, iterations: usize },

    #[error("model is not identifiable from the data: {0}")]
    NonIdentifiable(String),

    #[error("scheduling constraint violated: {0}")]
    Schedule(String),

    #[error("{}", format_config(path, line, key, message))]
    Config {
        path: Option<PathBuf>,
        line: Option<usize>,
        key: Option<String>,
        message: String,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn format_config(
    path: &Option<PathBuf>,
    line: &Option<usize>,
    key: &Option<String>,
    message: &str,
) -> String {
    let mut out = String::from("config error");
    if let Some(p) = path {
        out.push_str(&format!(" in {}", p.display()));
    }
    if let Some(l) = line {
        out.push_str(&format!(" at line {l}"));
    }
    if let Some(k) = key {
        out.push_str(&format!(" (key `{k}`)"));
    }
    out.push_str(": ");
    out.push_str(message);
    out
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(key: Option<&str>, message: impl Into<String>) -> Self {
        Error::Config {
            path: None,
            line: None,
            key: key.map(str::to_owned),
            message: message.into(),
        }
    }

    /// Attaches a detuning to an integration failure raised deeper in a sweep.
    pub(crate) fn at_detuning(self, det: f64) -> Self {
        match self {
            Error::Integration { time, reason, .. } => Error::Integration {
                time,
                detuning: Some(det),
                reason,
            },
            other => other,
        }
    }
}

/// Rejects NaN and infinities early so downstream numerics never see them.
pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::invalid(format!("{name} must be finite, got {value}")))
    }
}

pub(crate) fn ensure_positive(name: &str, value: f64) -> Result<f64> {
    ensure_finite(name, value)?;
    if value > 0.0 {
        Ok(value)
    } else {
        Err(Error::invalid(format!("{name} must be > 0, got {value}")))
    }
}

pub(crate) fn ensure_non_negative(name: &str, value: f64) -> Result<f64> {
    ensure_finite(name, value)?;
    if value >= 0.0 {
        Ok(value)
    } else {
        Err(Error::invalid(format!("{name} must be >= 0, got {value}")))
    }
}
