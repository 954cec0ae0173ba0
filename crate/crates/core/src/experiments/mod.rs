//! Deterministic runners for the eight experiments, their tables and summaries.
//!
//! Every report keeps its per-scenario records as [`Table`]s. Summaries and
//! acceptance checks are pure functions of those tables, so a report loaded back
//! from disk can be re-summarized and compared with what was written.

mod closed_loop;
mod lean;
mod open_loop;
mod report;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::ModelKind;
use crate::mpc::MpcConfig;
use crate::params::{LeanBikeParams, ModelParams, VehicleParams};
use crate::tightening::PolicyKind;

pub use closed_loop::{calibrate_a2_cl, run_exp8, CalibrationResult};
pub use lean::run_exp7;
pub use open_loop::{run_exp1, run_exp2, run_exp3, run_exp4, run_exp5, run_exp6};
pub use report::{Cell, Check, ExperimentReport, Provenance, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExperimentId {
    Exp1,
    Exp2,
    Exp3,
    Exp4,
    Exp5,
    Exp6,
    Exp7,
    Exp8,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 8] = [
        ExperimentId::Exp1,
        ExperimentId::Exp2,
        ExperimentId::Exp3,
        ExperimentId::Exp4,
        ExperimentId::Exp5,
        ExperimentId::Exp6,
        ExperimentId::Exp7,
        ExperimentId::Exp8,
    ];

    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    /// Output directory name, `exp1` .. `exp8`.
    pub fn dir_name(self) -> String {
        format!("exp{}", self.number())
    }

    pub fn title(self) -> &'static str {
        match self {
            ExperimentId::Exp1 => "existence of outward mismatch",
            ExperimentId::Exp2 => "speed sweep",
            ExperimentId::Exp3 => "curvature sweep",
            ExperimentId::Exp4 => "scaling-law fit",
            ExperimentId::Exp5 => "margin policy comparison",
            ExperimentId::Exp6 => "horizon scaling",
            ExperimentId::Exp7 => "leaning bicycle",
            ExperimentId::Exp8 => "closed-loop MPC",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.dir_name())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s.trim().trim_start_matches("exp");
        match digits.parse::<u8>() {
            Ok(n @ 1..=8) => Ok(ExperimentId::ALL[usize::from(n - 1)]),
            _ => Err(Error::Domain(format!("unknown experiment `{s}` (expected 1..8 or exp1..exp8)"))),
        }
    }
}

/// Coefficients of the margin policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    /// MACT coefficient quoted for the single experiment 1 scenario [s²].
    pub a2: f64,
    /// MACT coefficient for experiment 5; `None` calibrates `a2_safe` on the experiment 5 grid.
    pub exp5_a2: Option<f64>,
    /// Fixed margin for experiment 5 [m]; `None` uses the grid's worst eps*.
    pub fixed_margin: Option<f64>,
    /// Closed-loop coefficient; `None` runs the no-margin calibration pass.
    pub a2_cl: Option<f64>,
    pub safety_factor: f64,
    /// Start of the calibration window, excluding the entry transient [s].
    pub calibration_exclusion: f64,
    pub ema_alpha: f64,
    pub warmup: f64,
    /// Policies compared in experiment 8.
    pub exp8_policies: Vec<PolicyKind>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            a2: 0.404,
            exp5_a2: None,
            fixed_margin: None,
            a2_cl: None,
            safety_factor: 0.1,
            calibration_exclusion: 0.5,
            ema_alpha: 0.1,
            warmup: 0.5,
            exp8_policies: vec![PolicyKind::None, PolicyKind::Tube, PolicyKind::Adaptive, PolicyKind::Mact],
        }
    }
}

/// Leaning-bicycle sweep and lane demonstration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeanExperimentConfig {
    pub horizon: f64,
    pub lane_width: f64,
    pub demo_v: f64,
    pub demo_kappa: f64,
}

impl Default for LeanExperimentConfig {
    fn default() -> Self {
        Self {
            horizon: 3.5,
            lane_width: 0.75,
            demo_v: 3.5,
            demo_kappa: 0.03,
        }
    }
}

/// Everything that determines experiment results. Worker count is deliberately
/// absent: results do not depend on it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub vehicle: VehicleParams,
    pub lean: LeanBikeParams,
    pub policy: PolicyConfig,
    pub mpc: MpcConfig,
    pub exp7: LeanExperimentConfig,
}

impl SuiteConfig {
    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            vehicle: self.vehicle,
            lean: self.lean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_params().validate()?;
        let p = &self.policy;
        for (name, value) in [
            ("policy.a2", p.a2),
            ("policy.safety_factor", p.safety_factor),
            ("policy.calibration_exclusion", p.calibration_exclusion),
            ("policy.warmup", p.warmup),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::InvalidParam {
                    name,
                    value,
                    reason: "must be finite and non-negative",
                });
            }
        }
        for (name, value) in [("policy.exp5_a2", p.exp5_a2), ("policy.fixed_margin", p.fixed_margin), ("policy.a2_cl", p.a2_cl)] {
            if let Some(value) = value {
                if !(value.is_finite() && value >= 0.0) {
                    return Err(Error::InvalidParam {
                        name,
                        value,
                        reason: "must be finite and non-negative",
                    });
                }
            }
        }
        if !(p.ema_alpha > 0.0 && p.ema_alpha <= 1.0) {
            return Err(Error::InvalidParam {
                name: "policy.ema_alpha",
                value: p.ema_alpha,
                reason: "must lie in (0, 1]",
            });
        }
        if p.exp8_policies.is_empty() {
            return Err(Error::Domain("policy.exp8_policies is empty".into()));
        }
        if p.exp8_policies.contains(&PolicyKind::Fixed) {
            return Err(Error::Domain("the fixed policy is not part of the closed-loop comparison".into()));
        }
        let e = &self.exp7;
        for (name, value) in [
            ("exp7.horizon", e.horizon),
            ("exp7.lane_width", e.lane_width),
            ("exp7.demo_v", e.demo_v),
            ("exp7.demo_kappa", e.demo_kappa),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParam {
                    name,
                    value,
                    reason: "must be finite and positive",
                });
            }
        }
        self.mpc
            .problem(15.0, 0.01, crate::tightening::TighteningPolicy::None, &self.vehicle)
            .validate()
    }

    /// SHA-256 of the canonical JSON encoding, as lowercase hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Cartesian scenario grid, ordered speed-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGrid {
    pub speeds: Vec<f64>,
    pub curvatures: Vec<f64>,
    pub horizon: f64,
    pub model: ModelKind,
}

impl ScenarioGrid {
    pub fn new(speeds: Vec<f64>, curvatures: Vec<f64>, horizon: f64, model: ModelKind) -> Result<Self> {
        if speeds.is_empty() || curvatures.is_empty() {
            return Err(Error::Domain("scenario grid needs at least one speed and one curvature".into()));
        }
        if speeds.iter().chain(&curvatures).chain([&horizon]).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scenario grid"));
        }
        Ok(Self {
            speeds,
            curvatures,
            horizon,
            model,
        })
    }

    /// The experiment 4 / experiment 5 grid: v in {12, 14, 16, 18}, five curvatures over [0.005, 0.015].
    pub fn car_grid() -> Self {
        Self {
            speeds: vec![12.0, 14.0, 16.0, 18.0],
            curvatures: vec![0.005, 0.0075, 0.010, 0.0125, 0.015],
            horizon: 1.5,
            model: ModelKind::Dynamic,
        }
    }

    /// The experiment 7 grid: v in {2.5, 3, 3.5, 4}, kappa in {0.01, .., 0.04}.
    pub fn lean_grid(horizon: f64) -> Self {
        Self {
            speeds: vec![2.5, 3.0, 3.5, 4.0],
            curvatures: vec![0.01, 0.02, 0.03, 0.04],
            horizon,
            model: ModelKind::Leaning,
        }
    }

    /// The closed-loop 3×3 grid of experiment 8.
    pub fn closed_loop_grid(t_sim: f64) -> Self {
        Self {
            speeds: vec![13.0, 15.0, 17.0],
            curvatures: vec![0.010, 0.012, 0.015],
            horizon: t_sim,
            model: ModelKind::Dynamic,
        }
    }

    pub fn len(&self) -> usize {
        self.speeds.len() * self.curvatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(v, kappa)` pairs in speed-major order.
    pub fn scenarios(&self) -> Vec<(f64, f64)> {
        self.speeds
            .iter()
            .flat_map(|&v| self.curvatures.iter().map(move |&k| (v, k)))
            .collect()
    }

    pub fn v_max(&self) -> f64 {
        self.speeds.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn kappa_max(&self) -> f64 {
        self.curvatures.iter().map(|k| k.abs()).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Scenario-level parallelism with results merged in input order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Runner {
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
}

impl Runner {
    pub fn new(workers: usize) -> Self {
        Self { workers }
    }

    /// Evaluates `f` over `items` concurrently. Output order follows `items`, and
    /// errors are reported for the lowest failing index.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> Result<R> + Sync + Send,
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Domain(format!("cannot start worker pool: {e}")))?;
        let results: Vec<Result<R>> = pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect());
        results.into_iter().collect()
    }
}

pub(crate) fn scenario_error(index: usize, v: f64, kappa: f64) -> impl FnOnce(Error) -> Error {
    move |source| Error::Scenario {
        index,
        v,
        kappa,
        source: Box::new(source),
    }
}

/// Runs one experiment.
pub fn run_experiment(id: ExperimentId, cfg: &SuiteConfig, runner: &Runner) -> Result<ExperimentReport> {
    cfg.validate()?;
    match id {
        ExperimentId::Exp1 => run_exp1(cfg),
        ExperimentId::Exp2 => run_exp2(cfg, runner),
        ExperimentId::Exp3 => run_exp3(cfg, runner),
        ExperimentId::Exp4 => run_exp4(cfg, runner),
        ExperimentId::Exp5 => run_exp5(cfg, runner),
        ExperimentId::Exp6 => run_exp6(cfg, runner),
        ExperimentId::Exp7 => run_exp7(cfg, runner),
        ExperimentId::Exp8 => run_exp8(cfg, runner),
    }
}

/// Evenly spaced points over `[a, b]`, endpoints exact.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n)
            .map(|i| if i == n - 1 { b } else { a + (b - a) * i as f64 / (n - 1) as f64 })
            .collect(),
    }
}
