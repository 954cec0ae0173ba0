//! TOML run configuration.
//!
//! Precedence, lowest to highest: built-in defaults, the `--config` file,
//! command-line flags. The output directory additionally falls back to
//! `MACT_LAB_OUT` when neither `--out` nor `[run].out` is given.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mact_core::experiments::SuiteConfig;
use mact_core::mpc::MpcConfig;
use mact_core::{LeanBikeParams, VehicleParams};
use serde::Deserialize;

pub const OUT_ENV: &str = "MACT_LAB_OUT";
pub const DEFAULT_OUT: &str = "results";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Experiment selection, `"all"` or a comma-separated list.
    pub exp: Option<String>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub run: RunSection,
    pub vehicle: VehicleParams,
    pub lean: LeanBikeParams,
    pub policy: mact_core::experiments::PolicyConfig,
    pub mpc: MpcConfig,
    pub exp7: mact_core::experiments::LeanExperimentConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn into_parts(self) -> (RunSection, SuiteConfig) {
        let suite = SuiteConfig {
            vehicle: self.vehicle,
            lean: self.lean,
            policy: self.policy,
            mpc: self.mpc,
            exp7: self.exp7,
        };
        (self.run, suite)
    }
}

/// `--out`, then `[run].out`, then `MACT_LAB_OUT`, then `./results`.
pub fn output_dir(flag: Option<PathBuf>, file: Option<PathBuf>) -> PathBuf {
    flag.or(file)
        .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}
