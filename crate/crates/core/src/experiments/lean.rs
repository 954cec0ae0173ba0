//! Experiment 7: the scaling law on the leaning bicycle, plus a lane demonstration.

use serde_json::{Map, Value};

use super::open_loop::{car_grid_table, obj};
use super::report::{flag, number, table, Check, ExperimentReport, Table};
use super::{scenario_error, ExperimentId, Runner, ScenarioGrid, SuiteConfig};
use crate::analysis::{fit_scaling, measure_peak_deviation, signed_offset, simulate_lean, ScalingSample, SIM_DT};
use crate::error::{Error, Result};
use crate::models::{LeanCommand, LeanState};
use crate::params::ModelParams;

fn fit_rows(t: &Table, skip_capsized: bool) -> Result<Vec<ScalingSample>> {
    let (v, k, e) = (t.floats("v")?, t.floats("kappa")?, t.floats("eps_star")?);
    let capsized = if skip_capsized {
        t.flags("capsized")?
    } else {
        vec![false; v.len()]
    };
    Ok((0..v.len())
        .filter(|&i| !capsized[i])
        .map(|i| ScalingSample {
            v: v[i],
            kappa: k[i],
            eps_star: e[i],
        })
        .collect())
}

/// Cross-track of a ride on the concentric arc at offset `n_plan` from the
/// reference of curvature `kappa`, starting upright on that arc.
pub(crate) fn lane_ride(v: f64, kappa: f64, n_plan: f64, horizon: f64, params: &ModelParams) -> Result<Vec<f64>> {
    let radius = 1.0 / kappa;
    let cmd = LeanCommand::for_curvature(v, 1.0 / (radius + n_plan), &params.lean);
    let initial = LeanState {
        y: -n_plan,
        ..LeanState::default()
    };
    let traj = simulate_lean(v, cmd, initial, horizon, params)?;
    Ok(traj.states.iter().map(|s| signed_offset(s.x, s.y, kappa)).collect())
}

pub fn run_exp7(cfg: &SuiteConfig, runner: &Runner) -> Result<ExperimentReport> {
    let params = cfg.model_params();
    let e7 = cfg.exp7;
    let grid = ScenarioGrid::lean_grid(e7.horizon);
    let outcomes = runner.map(&grid.scenarios(), |i, &(v, k)| {
        match measure_peak_deviation(v, k, grid.horizon, grid.model, &params) {
            Ok(e) => Ok(Some(e)),
            Err(Error::Capsize { .. }) => Ok(None),
            Err(e) => Err(scenario_error(i, v, k)(e)),
        }
    })?;
    let mut t = Table::new(
        "grid",
        "peak outward deviation of the leaning bicycle from upright entry",
        &[
            ("scenario", "-"),
            ("v", "m/s"),
            ("kappa", "1/m"),
            ("load", "m/s^2"),
            ("eps_star", "m"),
            ("capsized", "-"),
        ],
    );
    for (i, (&(v, k), e)) in grid.scenarios().iter().zip(&outcomes).enumerate() {
        t.push(vec![
            i.into(),
            v.into(),
            k.into(),
            (v * v * k).into(),
            e.unwrap_or(f64::NAN).into(),
            e.is_none().into(),
        ]);
    }
    let fit = fit_scaling(&fit_rows(&t, true)?)?;

    let (v, k) = (e7.demo_v, e7.demo_kappa);
    let hw = 0.5 * e7.lane_width;
    let eps_mact = fit.a2_safe * v * v * k;
    // The tightened outer bound n <= hw - eps is met as closely as possible.
    let n_plan = hw - eps_mact;
    let free = lane_ride(v, k, 0.0, e7.horizon, &params)?;
    let tightened = lane_ride(v, k, n_plan, e7.horizon, &params)?;
    let mut demo = Table::new(
        "demo",
        "lane demonstration setup",
        &[
            ("v", "m/s"),
            ("kappa", "1/m"),
            ("lane_half_width", "m"),
            ("a2_safe", "s^2"),
            ("eps_mact", "m"),
            ("n_plan", "m"),
        ],
    );
    demo.push(vec![v.into(), k.into(), hw.into(), fit.a2_safe.into(), eps_mact.into(), n_plan.into()]);
    let mut lane = Table::new(
        "lane_demo",
        "cross-track without margin and with the MACT-tightened plan",
        &[("t", "s"), ("n_no_margin", "m"), ("n_mact", "m")],
    );
    for (i, (a, b)) in free.iter().zip(&tightened).enumerate() {
        lane.push(vec![(i as f64 * SIM_DT).into(), (*a).into(), (*b).into()]);
    }
    let car = car_grid_table(cfg, runner, "car_grid")?;
    ExperimentReport::assemble(ExperimentId::Exp7, vec![t, demo, lane, car], Vec::new(), Map::new(), cfg.hash())
}

pub(crate) fn summarize_exp7(tables: &[Table]) -> Result<Map<String, Value>> {
    let grid = table(tables, "grid")?;
    let fit = fit_scaling(&fit_rows(grid, true)?)?;
    let car = fit_scaling(&fit_rows(table(tables, "car_grid")?, false)?)?;
    let demo = table(tables, "demo")?;
    let lane = table(tables, "lane_demo")?;
    let hw = demo.floats("lane_half_width")?[0];
    let free = lane.floats("n_no_margin")?;
    let tight = lane.floats("n_mact")?;
    let max = |xs: &[f64]| xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = |xs: &[f64]| xs.iter().copied().fold(f64::INFINITY, f64::min);
    let capsized = grid.flags("capsized")?.iter().filter(|&&c| c).count();
    Ok(obj([
        ("a2_bic", fit.a2.into()),
        ("r_squared", fit.r_squared.into()),
        ("a2_bic_safe", fit.a2_safe.into()),
        ("n_points", fit.n_points.into()),
        ("n_capsized", capsized.into()),
        ("a2_car", car.a2.into()),
        ("ratio_to_car", (fit.a2 / car.a2).into()),
        ("lane_half_width", hw.into()),
        ("demo_eps_mact", demo.floats("eps_mact")?[0].into()),
        ("demo_n_plan", demo.floats("n_plan")?[0].into()),
        ("demo_uses_grid_a2_safe", (demo.floats("a2_safe")?[0] == fit.a2_safe).into()),
        ("max_n_no_margin", max(&free).into()),
        ("max_n_mact", max(&tight).into()),
        ("min_n_mact", min(&tight).into()),
        ("no_margin_exits", (max(&free) > hw).into()),
        ("mact_inside", (max(&tight) <= hw && min(&tight) >= -hw).into()),
    ]))
}

pub(crate) fn checks_exp7(s: &Map<String, Value>) -> Vec<Check> {
    let r2 = number(s, "r_squared");
    let ratio = number(s, "ratio_to_car");
    vec![
        Check::new("exp7.fit_quality", r2 >= 0.90, format!("R² = {r2:.4} (limit 0.90)")),
        Check::new("exp7.ratio_to_car", ratio >= 2.0, format!("a2_bic / a2_car = {ratio:.3} (limit 2)")),
        Check::new(
            "exp7.demo_mact_inside",
            flag(s, "mact_inside"),
            format!(
                "n in [{:.3}, {:.3}] m, lane ±{:.3} m",
                number(s, "min_n_mact"),
                number(s, "max_n_mact"),
                number(s, "lane_half_width")
            ),
        ),
        Check::new(
            "exp7.demo_no_margin_exits",
            flag(s, "no_margin_exits"),
            format!("peak n = {:.3} m vs lane {:.3} m", number(s, "max_n_no_margin"), number(s, "lane_half_width")),
        ),
    ]
}
