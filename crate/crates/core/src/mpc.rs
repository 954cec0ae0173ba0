//! Receding-horizon lane keeping on the dynamic bicycle.
//!
//! The controller re-solves the shooting problem every control period from the
//! measured plant state; the plant is integrated with a finer RK4 step while the
//! first steer of each solution is held.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis::signed_offset;
use crate::error::{Error, Result};
use crate::integrate::{rk4_step, step_count};
use crate::models::{dyn_derivative, DynState, ModelKind};
use crate::params::VehicleParams;
use crate::shooting::{solve, CostWeights, CurvatureSource, ShootingProblem, SolverSettings};
use crate::tightening::{adaptive_update, epsilon, AdaptiveEstimatorState, PolicyKind, TighteningPolicy};

/// Closed-loop setup shared by every scenario of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    pub horizon: usize,
    /// Control period, also the prediction step [s].
    pub dt_ctrl: f64,
    /// Plant integration step [s].
    pub plant_dt: f64,
    /// Simulated duration [s].
    pub t_sim: f64,
    pub delta_max: f64,
    pub ddelta_max: f64,
    pub lane_half_width: f64,
    /// Initial lateral position `y_0` [m]; negative is outside a left turn.
    pub entry_offset: f64,
    /// Prediction model inside the controller; the plant is always the dynamic bicycle.
    pub prediction_model: ModelKind,
    pub weights: CostWeights,
    pub settings: SolverSettings,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            dt_ctrl: 0.05,
            plant_dt: 0.005,
            t_sim: 3.0,
            delta_max: 0.35,
            ddelta_max: 1.5,
            lane_half_width: 0.16,
            entry_offset: -0.08,
            prediction_model: ModelKind::Dynamic,
            weights: CostWeights::default(),
            settings: SolverSettings::default(),
        }
    }
}

impl MpcConfig {
    /// Plant steps per control period.
    fn plant_substeps(&self) -> Result<usize> {
        let ratio = self.dt_ctrl / self.plant_dt;
        let n = ratio.round();
        if !(n >= 1.0) || (ratio - n).abs() > 1e-9 {
            return Err(Error::InvalidParam {
                name: "plant_dt",
                value: self.plant_dt,
                reason: "control period must be an integer multiple of the plant step",
            });
        }
        Ok(n as usize)
    }

    /// Shooting problem for scenario `(v, kappa)`, without policy-specific state.
    pub fn problem(&self, v: f64, kappa: f64, policy: TighteningPolicy, params: &VehicleParams) -> ShootingProblem {
        ShootingProblem {
            horizon: self.horizon,
            dt: self.dt_ctrl,
            substeps: 1,
            speed: v,
            kappa_ref: kappa,
            weights: self.weights,
            delta_max: self.delta_max,
            ddelta_max: self.ddelta_max,
            lane_half_width: self.lane_half_width,
            policy,
            estimator: (policy.kind() == PolicyKind::Adaptive).then(AdaptiveEstimatorState::default),
            curvature_source: CurvatureSource::Reference,
            model: self.prediction_model,
            params: *params,
            initial: DynState::default(),
            prev_steer: 0.0,
            settings: self.settings,
        }
    }
}

/// What the controller carries from one period to the next.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ControllerState {
    /// Steer currently applied to the plant.
    pub prev_steer: f64,
    /// Previous solution, used shifted by one step as the next warm start.
    pub last_solution: Option<Vec<f64>>,
    pub estimator: Option<AdaptiveEstimatorState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepStats {
    pub epsilon: f64,
    pub iterations: usize,
    pub converged: bool,
    pub solve_seconds: f64,
}

fn shifted(prev: &[f64]) -> Vec<f64> {
    let mut w: Vec<f64> = prev.iter().skip(1).copied().collect();
    if let Some(&last) = prev.last() {
        w.push(last);
    }
    w
}

/// Solves one receding-horizon problem from `plant` and returns the steer to hold.
pub fn mpc_step(
    ctrl: &ControllerState,
    plant: &DynState,
    template: &ShootingProblem,
    policy: &TighteningPolicy,
) -> Result<(f64, ControllerState, StepStats)> {
    let s = plant;
    if ![s.x, s.y, s.psi, s.v_y, s.r].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("plant state"));
    }
    let mut problem = template.clone();
    problem.policy = *policy;
    problem.initial = *plant;
    problem.prev_steer = ctrl.prev_steer;
    problem.estimator = match policy.kind() {
        PolicyKind::Adaptive => Some(ctrl.estimator.unwrap_or_default()),
        _ => None,
    };
    let warm = ctrl
        .last_solution
        .as_deref()
        .filter(|p| p.len() == problem.horizon)
        .map(shifted);
    let start = Instant::now();
    let sol = solve(&problem, warm.as_deref())?;
    let solve_seconds = start.elapsed().as_secs_f64();
    let eps = epsilon(policy, problem.speed, problem.kappa_ref, problem.estimator.as_ref())?;
    let steer = sol.steer[0];
    let next = ControllerState {
        prev_steer: steer,
        last_solution: Some(sol.steer),
        estimator: problem.estimator,
    };
    Ok((
        steer,
        next,
        StepStats {
            epsilon: eps,
            iterations: sol.iterations,
            converged: sol.converged,
            solve_seconds,
        },
    ))
}

/// Record of one closed-loop scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedLoopRun {
    pub v: f64,
    pub kappa: f64,
    pub policy: PolicyKind,
    /// Control instants [s].
    pub control_times: Vec<f64>,
    pub control_crosstrack: Vec<f64>,
    pub steer: Vec<f64>,
    pub stats: Vec<StepStats>,
    /// Estimate after each period (adaptive only, zero otherwise).
    pub a2_hat: Vec<f64>,
    /// Plant-rate samples, including `t = 0` and `t = t_sim`.
    pub plant_times: Vec<f64>,
    pub plant_crosstrack: Vec<f64>,
}

impl ClosedLoopRun {
    pub fn max_abs_crosstrack(&self) -> f64 {
        self.plant_crosstrack.iter().fold(0.0, |m, n| m.max(n.abs()))
    }

    /// Largest outward cross-track at or after `t_from`.
    pub fn peak_outward_after(&self, t_from: f64) -> f64 {
        self.plant_times
            .iter()
            .zip(&self.plant_crosstrack)
            .filter(|(t, _)| **t + 1e-9 >= t_from)
            .fold(0.0, |m, (_, n)| m.max(*n))
    }

    /// Largest |n| at or after `t_from`.
    pub fn peak_abs_after(&self, t_from: f64) -> f64 {
        self.plant_times
            .iter()
            .zip(&self.plant_crosstrack)
            .filter(|(t, _)| **t + 1e-9 >= t_from)
            .fold(0.0, |m, (_, n)| m.max(n.abs()))
    }

    pub fn mean_epsilon(&self) -> f64 {
        mean(self.stats.iter().map(|s| s.epsilon))
    }

    pub fn max_epsilon_before(&self, t_until: f64) -> f64 {
        self.control_times
            .iter()
            .zip(&self.stats)
            .filter(|(t, _)| **t < t_until - 1e-9)
            .fold(0.0, |m, (_, s)| m.max(s.epsilon))
    }

    pub fn safe(&self, lane_half_width: f64) -> bool {
        self.max_abs_crosstrack() <= lane_half_width
    }

    pub fn max_solve_seconds(&self) -> f64 {
        self.stats.iter().fold(0.0, |m, s| m.max(s.solve_seconds))
    }

    pub fn mean_solve_seconds(&self) -> f64 {
        mean(self.stats.iter().map(|s| s.solve_seconds))
    }
}

pub(crate) fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Runs one scenario: the vehicle enters the arc at `y = entry_offset`, heading +x.
pub fn run_closed_loop(
    cfg: &MpcConfig,
    v: f64,
    kappa: f64,
    policy: &TighteningPolicy,
    params: &VehicleParams,
) -> Result<ClosedLoopRun> {
    policy.validate()?;
    let substeps = cfg.plant_substeps()?;
    let periods = step_count(cfg.t_sim, cfg.dt_ctrl);
    let template = cfg.problem(v, kappa, *policy, params);
    template.validate()?;

    let mut plant = DynState {
        y: cfg.entry_offset,
        ..DynState::default()
    };
    let mut ctrl = ControllerState {
        estimator: template.estimator,
        ..ControllerState::default()
    };
    let offset = |s: &DynState| signed_offset(s.x, s.y, kappa);
    let mut run = ClosedLoopRun {
        v,
        kappa,
        policy: policy.kind(),
        control_times: Vec::with_capacity(periods),
        control_crosstrack: Vec::with_capacity(periods),
        steer: Vec::with_capacity(periods),
        stats: Vec::with_capacity(periods),
        a2_hat: Vec::with_capacity(periods),
        plant_times: vec![0.0],
        plant_crosstrack: vec![offset(&plant)],
    };

    for k in 0..periods {
        let t = k as f64 * cfg.dt_ctrl;
        let (steer, next, stats) = mpc_step(&ctrl, &plant, &template, policy)?;
        ctrl = next;
        run.control_times.push(t);
        run.control_crosstrack.push(offset(&plant));
        run.steer.push(steer);
        run.stats.push(stats);

        // The estimator sees outward drift only, like the calibration pass.
        let mut period_peak: f64 = 0.0;
        for i in 1..=substeps {
            plant = rk4_step(&plant, cfg.plant_dt, |s| dyn_derivative(s, v, steer, params))
                .map_err(|_| Error::NonFiniteStep { step: k * substeps + i })?;
            let n = offset(&plant);
            period_peak = period_peak.max(n);
            run.plant_times.push(t + i as f64 * cfg.plant_dt);
            run.plant_crosstrack.push(n);
        }
        if let (PolicyKind::Adaptive, Some(est)) = (policy.kind(), ctrl.estimator.as_ref()) {
            ctrl.estimator = Some(adaptive_update(policy, est, period_peak, v, kappa, cfg.dt_ctrl)?);
        }
        run.a2_hat.push(ctrl.estimator.map_or(0.0, |e| e.a2_hat));
    }
    Ok(run)
}
