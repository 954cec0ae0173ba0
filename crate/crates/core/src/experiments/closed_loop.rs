//! Experiment 8: receding-horizon control with no margin, tube, adaptive and MACT
//! tightening, and the no-margin calibration pass behind `a2_cl`.

use serde::Serialize;
use serde_json::{Map, Value};

use super::open_loop::obj;
use super::report::{flag, number, table, Check, ExperimentReport, Table};
use super::{scenario_error, ExperimentId, Runner, ScenarioGrid, SuiteConfig};
use crate::analysis::{fit_scaling, ScalingSample};
use crate::error::{Error, Result};
use crate::mpc::{mean, run_closed_loop, ClosedLoopRun, MpcConfig};
use crate::params::VehicleParams;
use crate::tightening::{PolicyKind, TighteningPolicy};

/// Solve-time budget per receding-horizon solve [s].
pub const SOLVE_BUDGET: f64 = 0.050;
const TRACE_SCENARIOS: [(f64, f64); 2] = [(15.0, 0.012), (17.0, 0.015)];
const FIRST_SECOND: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationResult {
    /// `(1 + safety_factor)` times the through-origin slope.
    pub a2_cl: f64,
    pub slope: f64,
    pub safety_factor: f64,
    /// Per scenario, speed-major: peak outward cross-track after the exclusion window.
    pub samples: Vec<ScalingSample>,
}

/// Through-origin fit of `samples` scaled by `1 + safety_factor`.
pub fn fit_closed_loop(samples: Vec<ScalingSample>, safety_factor: f64) -> Result<CalibrationResult> {
    if !(safety_factor.is_finite() && safety_factor >= 0.0) {
        return Err(Error::InvalidParam {
            name: "safety_factor",
            value: safety_factor,
            reason: "must be finite and non-negative",
        });
    }
    let slope = fit_scaling(&samples)?.a2;
    Ok(CalibrationResult {
        a2_cl: slope * (1.0 + safety_factor),
        slope,
        safety_factor,
        samples,
    })
}

/// Runs the no-margin controller on every grid scenario and fits `a2_cl`.
pub fn calibrate_a2_cl(
    grid: &ScenarioGrid,
    safety_factor: f64,
    exclusion: f64,
    mpc: &MpcConfig,
    params: &VehicleParams,
    runner: &Runner,
) -> Result<CalibrationResult> {
    let mpc = MpcConfig {
        t_sim: grid.horizon,
        ..*mpc
    };
    let samples = runner.map(&grid.scenarios(), |i, &(v, k)| {
        let run = run_closed_loop(&mpc, v, k, &TighteningPolicy::None, params).map_err(scenario_error(i, v, k))?;
        if !run.safe(mpc.lane_half_width) {
            return Err(scenario_error(i, v, k)(Error::Domain(format!(
                "no-margin calibration run left the lane (|n| = {:.4} m)",
                run.max_abs_crosstrack()
            ))));
        }
        Ok(ScalingSample {
            v,
            kappa: k,
            eps_star: run.peak_outward_after(exclusion),
        })
    })?;
    fit_closed_loop(samples, safety_factor)
}

fn policy_for(kind: PolicyKind, a2_cl: f64, grid: &ScenarioGrid, cfg: &SuiteConfig) -> TighteningPolicy {
    match kind {
        PolicyKind::None | PolicyKind::Fixed => TighteningPolicy::None,
        PolicyKind::Tube => TighteningPolicy::Tube {
            a2: a2_cl,
            v_max: grid.v_max(),
            kappa_max: grid.kappa_max(),
        },
        PolicyKind::Adaptive => TighteningPolicy::Adaptive {
            ema_alpha: cfg.policy.ema_alpha,
            warmup: cfg.policy.warmup,
        },
        PolicyKind::Mact => TighteningPolicy::Mact { a2: a2_cl },
    }
}

pub fn run_exp8(cfg: &SuiteConfig, runner: &Runner) -> Result<ExperimentReport> {
    let grid = ScenarioGrid::closed_loop_grid(cfg.mpc.t_sim);
    let exclusion = cfg.policy.calibration_exclusion;
    let mut tables = Vec::new();
    let (a2_cl, calibrated) = match cfg.policy.a2_cl {
        Some(a2) => (a2, false),
        None => {
            let cal = calibrate_a2_cl(&grid, cfg.policy.safety_factor, exclusion, &cfg.mpc, &cfg.vehicle, runner)?;
            let mut t = Table::new(
                "calibration",
                "no-margin closed-loop peak outward cross-track after the entry window",
                &[("scenario", "-"), ("v", "m/s"), ("kappa", "1/m"), ("load", "m/s^2"), ("peak_outward", "m")],
            );
            for (i, s) in cal.samples.iter().enumerate() {
                t.push(vec![i.into(), s.v.into(), s.kappa.into(), s.regressor().into(), s.eps_star.into()]);
            }
            tables.push(t);
            (cal.a2_cl, true)
        }
    };
    let tube_eps = a2_cl * grid.v_max().powi(2) * grid.kappa_max();
    let mut coeffs = Table::new(
        "coefficients",
        "closed-loop tightening coefficients",
        &[
            ("a2_cl", "s^2"),
            ("calibrated", "-"),
            ("safety_factor", "-"),
            ("exclusion", "s"),
            ("v_max", "m/s"),
            ("kappa_max", "1/m"),
            ("tube_eps", "m"),
            ("lane_half_width", "m"),
        ],
    );
    coeffs.push(vec![
        a2_cl.into(),
        calibrated.into(),
        cfg.policy.safety_factor.into(),
        exclusion.into(),
        grid.v_max().into(),
        grid.kappa_max().into(),
        tube_eps.into(),
        cfg.mpc.lane_half_width.into(),
    ]);
    tables.insert(0, coeffs);

    let jobs: Vec<(PolicyKind, usize, f64, f64)> = cfg
        .policy
        .exp8_policies
        .iter()
        .flat_map(|&p| grid.scenarios().into_iter().enumerate().map(move |(i, (v, k))| (p, i, v, k)))
        .collect();
    let runs: Vec<ClosedLoopRun> = runner.map(&jobs, |_, &(p, i, v, k)| {
        let policy = policy_for(p, a2_cl, &grid, cfg);
        run_closed_loop(&cfg.mpc, v, k, &policy, &cfg.vehicle).map_err(scenario_error(i, v, k))
    })?;

    let mut scen = Table::new(
        "scenarios",
        "per-policy closed-loop outcome per scenario",
        &[
            ("policy", "-"),
            ("scenario", "-"),
            ("v", "m/s"),
            ("kappa", "1/m"),
            ("load", "m/s^2"),
            ("mean_eps", "m"),
            ("min_eps", "m"),
            ("max_eps", "m"),
            ("max_eps_first_second", "m"),
            ("max_abs_n", "m"),
            ("required_peak", "m"),
            ("safe", "-"),
            ("max_iterations", "-"),
            ("all_converged", "-"),
        ],
    );
    let mut traces = Table::new(
        "traces",
        "control-rate cross-track and applied margin",
        &[
            ("policy", "-"),
            ("v", "m/s"),
            ("kappa", "1/m"),
            ("t", "s"),
            ("n", "m"),
            ("eps", "m"),
            ("steer", "rad"),
            ("a2_hat", "s^2"),
        ],
    );
    let mut plant = Table::new(
        "plant_traces",
        "plant-rate cross-track",
        &[("policy", "-"), ("v", "m/s"), ("kappa", "1/m"), ("t", "s"), ("n", "m")],
    );
    let mut timing = Map::new();
    let mut worst_solve: f64 = 0.0;
    for (&(p, i, v, k), run) in jobs.iter().zip(&runs) {
        let eps: Vec<f64> = run.stats.iter().map(|s| s.epsilon).collect();
        scen.push(vec![
            p.name().into(),
            i.into(),
            v.into(),
            k.into(),
            (v * v * k).into(),
            run.mean_epsilon().into(),
            eps.iter().copied().fold(f64::INFINITY, f64::min).into(),
            eps.iter().copied().fold(f64::NEG_INFINITY, f64::max).into(),
            run.max_epsilon_before(FIRST_SECOND).into(),
            run.max_abs_crosstrack().into(),
            run.peak_outward_after(exclusion).into(),
            run.safe(cfg.mpc.lane_half_width).into(),
            run.stats.iter().map(|s| s.iterations).max().unwrap_or(0).into(),
            run.stats.iter().all(|s| s.converged).into(),
        ]);
        if TRACE_SCENARIOS.contains(&(v, k)) {
            for (j, t) in run.control_times.iter().enumerate() {
                traces.push(vec![
                    p.name().into(),
                    v.into(),
                    k.into(),
                    (*t).into(),
                    run.control_crosstrack[j].into(),
                    run.stats[j].epsilon.into(),
                    run.steer[j].into(),
                    run.a2_hat[j].into(),
                ]);
            }
            for (t, n) in run.plant_times.iter().zip(&run.plant_crosstrack) {
                plant.push(vec![p.name().into(), v.into(), k.into(), (*t).into(), (*n).into()]);
            }
        }
        worst_solve = worst_solve.max(run.max_solve_seconds());
    }
    for &p in &cfg.policy.exp8_policies {
        let mine: Vec<&ClosedLoopRun> = jobs.iter().zip(&runs).filter(|(j, _)| j.0 == p).map(|(_, r)| r).collect();
        let all: Vec<f64> = mine.iter().flat_map(|r| r.stats.iter().map(|s| s.solve_seconds)).collect();
        let max = all.iter().copied().fold(0.0, f64::max);
        timing.insert(
            p.name().to_owned(),
            Value::Object(obj([
                ("mean_solve_ms", (1e3 * mean(all.iter().copied())).into()),
                ("max_solve_ms", (1e3 * max).into()),
                ("solves", all.len().into()),
            ])),
        );
    }
    timing.insert("max_solve_ms".into(), (1e3 * worst_solve).into());
    timing.insert("budget_ms".into(), (1e3 * SOLVE_BUDGET).into());

    tables.push(scen);
    let summary_tables = tables.clone();
    let table2 = table2(&summary_tables, &cfg.policy.exp8_policies)?;
    tables.extend([table2, traces, plant]);
    let budget = Check::new(
        "exp8.solve_budget",
        worst_solve <= SOLVE_BUDGET,
        format!("every solve within {:.0} ms (wall-clock in timing.json)", 1e3 * SOLVE_BUDGET),
    );
    ExperimentReport::assemble(ExperimentId::Exp8, tables, vec![budget], timing, cfg.hash())
}

/// Grid-averaged comparison, one row per policy.
fn table2(tables: &[Table], policies: &[PolicyKind]) -> Result<Table> {
    let scen = table(tables, "scenarios")?;
    let tube_eps = table(tables, "coefficients")?.floats("tube_eps")?[0];
    let mut t = Table::new(
        "table2",
        "grid-averaged closed-loop comparison",
        &[("method", "-"), ("safe_pct", "%"), ("mean_eps_cm", "cm"), ("ratio_to_tube_pct", "%")],
    );
    for p in policies {
        let rows = scen.filter("policy", p.name())?;
        let safe = rows.flags("safe")?;
        let mean_eps = mean(rows.floats("mean_eps")?);
        let pct = 100.0 * safe.iter().filter(|&&s| s).count() as f64 / safe.len().max(1) as f64;
        let ratio = if tube_eps > 0.0 { 100.0 * mean_eps / tube_eps } else { f64::NAN };
        t.push(vec![p.name().into(), pct.into(), (100.0 * mean_eps).into(), ratio.into()]);
    }
    Ok(t)
}

pub(crate) fn summarize_exp8(tables: &[Table]) -> Result<Map<String, Value>> {
    let coeffs = table(tables, "coefficients")?;
    let a2_cl = coeffs.floats("a2_cl")?[0];
    let calibrated = coeffs.flags("calibrated")?[0];
    let tube_eps = coeffs.floats("tube_eps")?[0];
    let scen = table(tables, "scenarios")?;
    let mut s = obj([
        ("a2_cl", a2_cl.into()),
        ("calibrated", calibrated.into()),
        ("tube_eps", tube_eps.into()),
        ("all_safe", scen.flags("safe")?.iter().all(|&b| b).into()),
        ("all_converged", scen.flags("all_converged")?.iter().all(|&b| b).into()),
        (
            "max_iterations",
            scen.floats("max_iterations")?.into_iter().fold(0.0, f64::max).into(),
        ),
    ]);
    if calibrated {
        let cal = table(tables, "calibration")?;
        let (v, k, e) = (cal.floats("v")?, cal.floats("kappa")?, cal.floats("peak_outward")?);
        let samples = (0..v.len())
            .map(|i| ScalingSample {
                v: v[i],
                kappa: k[i],
                eps_star: e[i],
            })
            .collect();
        let fit = fit_closed_loop(samples, coeffs.floats("safety_factor")?[0])?;
        s.insert("calibration_slope".into(), fit.slope.into());
        s.insert("a2_cl_recomputed".into(), fit.a2_cl.into());
    }

    let mut names: Vec<String> = scen.texts("policy")?;
    names.dedup();
    let mut policies = Map::new();
    let mut means = Map::new();
    for name in &names {
        let rows = scen.filter("policy", name)?;
        let safe = rows.flags("safe")?;
        let mean_eps = mean(rows.floats("mean_eps")?);
        means.insert(name.clone(), mean_eps.into());
        policies.insert(
            name.clone(),
            Value::Object(obj([
                (
                    "safe_pct",
                    (100.0 * safe.iter().filter(|&&b| b).count() as f64 / safe.len().max(1) as f64).into(),
                ),
                ("mean_eps", mean_eps.into()),
                ("mean_eps_cm", (100.0 * mean_eps).into()),
                (
                    "max_abs_n",
                    rows.floats("max_abs_n")?.into_iter().fold(0.0, f64::max).into(),
                ),
            ])),
        );
    }
    s.insert("policies".into(), Value::Object(policies));

    let load = scen.floats("load")?;
    let min_load = load.iter().copied().fold(f64::INFINITY, f64::min);
    let max_load = load.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean_of = |n: &str| means.get(n).and_then(Value::as_f64);

    if names.iter().any(|n| n == "tube") {
        let rows = scen.filter("policy", "tube")?;
        let same = |x: f64| (x - tube_eps).abs() <= 1e-12 * tube_eps.max(1e-300);
        let constant = rows.floats("min_eps")?.into_iter().all(same) && rows.floats("max_eps")?.into_iter().all(same);
        s.insert("tube_constant".into(), constant.into());
    }
    if names.iter().any(|n| n == "mact") {
        let rows = scen.filter("policy", "mact")?;
        let loads = rows.floats("load")?;
        let (lo, hi, avg) = (rows.floats("min_eps")?, rows.floats("max_eps")?, rows.floats("mean_eps")?);
        let exact = (0..loads.len()).all(|i| {
            let want = a2_cl * loads[i];
            (lo[i] - want).abs() <= 1e-9 && (hi[i] - want).abs() <= 1e-9
        });
        s.insert("mact_exact".into(), exact.into());
        let argmin = (0..avg.len()).min_by(|&a, &b| avg[a].total_cmp(&avg[b])).unwrap_or(0);
        s.insert("mact_min_v".into(), rows.floats("v")?[argmin].into());
        s.insert("mact_min_kappa".into(), rows.floats("kappa")?[argmin].into());
        s.insert("mact_min_at_lowest_load".into(), (loads[argmin] == min_load).into());
    }
    if let (Some(m), Some(t)) = (mean_of("mact"), mean_of("tube")) {
        s.insert("ratio_mact_tube".into(), (m / t).into());
    }
    if names.iter().any(|n| n == "adaptive") {
        let rows = scen.filter("policy", "adaptive")?;
        let loads = rows.floats("load")?;
        let i = (0..loads.len()).find(|&i| loads[i] == max_load).unwrap_or(0);
        let early = rows.floats("max_eps_first_second")?[i];
        let required = rows.floats("required_peak")?[i];
        s.insert("adaptive_hardest_eps_first_second".into(), early.into());
        s.insert("adaptive_hardest_required_peak".into(), required.into());
        s.insert("adaptive_shortfall".into(), (early < required).into());
    }
    if let (Some(a), Some(m), Some(t)) = (mean_of("adaptive"), mean_of("mact"), mean_of("tube")) {
        s.insert("ordering_adaptive_mact_tube".into(), (a < m && m < t).into());
    }
    Ok(s)
}

pub(crate) fn checks_exp8(s: &Map<String, Value>) -> Vec<Check> {
    let mut checks = vec![Check::new("exp8.all_safe", flag(s, "all_safe"), "|n| <= LANE_hw for every run".into())];
    if s.contains_key("tube_constant") {
        checks.push(Check::new(
            "exp8.tube_constant",
            flag(s, "tube_constant"),
            format!("tube eps = a2_cl v_max² kappa_max = {:.6} m at every step", number(s, "tube_eps")),
        ));
    }
    if s.contains_key("mact_exact") {
        checks.push(Check::new(
            "exp8.mact_exact",
            flag(s, "mact_exact"),
            "MACT eps = a2_cl v² kappa to 1e-9 at every step".into(),
        ));
        checks.push(Check::new(
            "exp8.mact_grid_minimum",
            flag(s, "mact_min_at_lowest_load"),
            format!(
                "smallest MACT margin at (v, kappa) = ({}, {})",
                number(s, "mact_min_v"),
                number(s, "mact_min_kappa")
            ),
        ));
    }
    if s.contains_key("ratio_mact_tube") {
        let r = number(s, "ratio_mact_tube");
        checks.push(Check::new(
            "exp8.ratio_mact_tube",
            (0.55..=0.75).contains(&r),
            format!("{r:.4} (band [0.55, 0.75])"),
        ));
    }
    if s.contains_key("adaptive_shortfall") {
        checks.push(Check::new(
            "exp8.adaptive_shortfall",
            flag(s, "adaptive_shortfall"),
            format!(
                "first-second eps {:.3e} m < required peak {:.3e} m at the hardest scenario",
                number(s, "adaptive_hardest_eps_first_second"),
                number(s, "adaptive_hardest_required_peak")
            ),
        ));
    }
    checks
}
