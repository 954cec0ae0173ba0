//! `mact-lab`: runs the mismatch experiments, single-point analyses and
//! coefficient calibrations.
//!
//! Exit codes: 0 when every acceptance check of the run passes, 1 on a runtime
//! failure or a failed check, 2 on a configuration error.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mact_core::analysis::{
    a2_analytical, characteristic_speed, fit_scaling, measure_peak_deviation, regime, steady_state_coeff,
    steady_state_yaw_rate_gap, transient_coeff, MismatchConstants, ScalingSample,
};
use mact_core::experiments::{calibrate_a2_cl, run_experiment, ExperimentId, Runner, ScenarioGrid, SuiteConfig};
use mact_core::models::ModelKind;
use mact_core::tightening::PolicyKind;
use serde_json::{json, Value};

use config::{output_dir, FileConfig};

#[derive(Parser)]
#[command(name = "mact-lab", version, about = "Kinematic vs dynamic bicycle mismatch laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run experiments and write their reports.
    Run {
        /// `all` or a comma-separated list such as `1,4,8`.
        #[arg(long)]
        exp: Option<String>,
        /// Output directory (falls back to [run].out, then MACT_LAB_OUT, then ./results).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Closed-loop policies compared in experiment 8.
        #[arg(long, value_delimiter = ',')]
        policy: Option<Vec<PolicyKind>>,
        /// MACT coefficient for experiments 1 and 5 [s²].
        #[arg(long)]
        a2: Option<f64>,
        /// Closed-loop MACT coefficient; skips the calibration pass [s²].
        #[arg(long)]
        a2_cl: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Closed-form constants and the measured eps* at one operating point.
    Analyze {
        #[arg(long)]
        v: f64,
        #[arg(long)]
        kappa: f64,
        /// Open-loop horizon [s].
        #[arg(long, default_value_t = 1.5)]
        horizon: f64,
        /// Print the result as JSON.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Fit a2_safe (open loop) or a2_cl (closed loop) on a grid.
    Calibrate {
        #[arg(long, value_enum, default_value_t = Mode::Open)]
        mode: Mode,
        /// Grid speeds [m/s]; defaults to the experiment 4 or 8 grid.
        #[arg(long, value_delimiter = ',')]
        speeds: Option<Vec<f64>>,
        /// Grid curvatures [1/m].
        #[arg(long, value_delimiter = ',')]
        curvatures: Option<Vec<f64>>,
        /// Open-loop horizon or closed-loop duration [s].
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Open,
    Closed,
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
    Checks,
}

impl From<mact_core::Error> for Failure {
    fn from(e: mact_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Checks) => ExitCode::from(1),
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load(common: &Common) -> Result<(config::RunSection, SuiteConfig, Runner), Failure> {
    let (run, suite) = FileConfig::load(common.config.as_deref()).map_err(Failure::Config)?.into_parts();
    let runner = Runner::new(common.workers.or(run.workers).unwrap_or(0));
    Ok((run, suite, runner))
}

fn validated(suite: SuiteConfig) -> Result<SuiteConfig, Failure> {
    suite.validate().map_err(|e| Failure::Config(e.into()))?;
    Ok(suite)
}

fn parse_selection(s: &str) -> anyhow::Result<Vec<ExperimentId>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(ExperimentId::ALL.to_vec());
    }
    let mut ids = s
        .split(',')
        .map(|p| p.parse::<ExperimentId>().map_err(|e| anyhow!(e)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    ids.sort();
    ids.dedup();
    if ids.is_empty() {
        bail!("empty experiment selection");
    }
    Ok(ids)
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run {
            exp,
            out,
            policy,
            a2,
            a2_cl,
            common,
        } => {
            let (run, mut suite, runner) = load(&common)?;
            let selection = exp.or(run.exp).unwrap_or_else(|| "all".into());
            let ids = parse_selection(&selection).map_err(Failure::Config)?;
            if let Some(p) = policy {
                suite.policy.exp8_policies = p;
            }
            if let Some(a2) = a2 {
                suite.policy.a2 = a2;
                suite.policy.exp5_a2 = Some(a2);
            }
            if a2_cl.is_some() {
                suite.policy.a2_cl = a2_cl;
            }
            let suite = validated(suite)?;
            cmd_run(&ids, &suite, &runner, &output_dir(out, run.out))
        }
        Command::Analyze {
            v,
            kappa,
            horizon,
            json,
            common,
        } => {
            let (_, suite, _) = load(&common)?;
            let suite = validated(suite)?;
            let report = cmd_analyze(v, kappa, horizon, &suite)?;
            print_report(&report, json);
            Ok(())
        }
        Command::Calibrate {
            mode,
            speeds,
            curvatures,
            horizon,
            json,
            common,
        } => {
            let (_, suite, runner) = load(&common)?;
            let suite = validated(suite)?;
            let report = cmd_calibrate(mode, speeds, curvatures, horizon, &suite, &runner)?;
            print_report(&report, json);
            Ok(())
        }
    }
}

fn cmd_run(ids: &[ExperimentId], suite: &SuiteConfig, runner: &Runner, out: &Path) -> Result<(), Failure> {
    let mut all_passed = true;
    for &id in ids {
        let report = run_experiment(id, suite, runner).with_context(|| format!("{id}")).map_err(Failure::Runtime)?;
        let dir = report.emit(out)?;
        println!("{id}: {}", report.headline());
        if id == ExperimentId::Exp8 {
            let t = report.table("table2")?;
            println!("  {:<10} {:>8} {:>12}", "method", "safe_%", "mean_eps_cm");
            for ((m, s), e) in t.texts("method")?.iter().zip(t.floats("safe_pct")?).zip(t.floats("mean_eps_cm")?) {
                println!("  {m:<10} {s:>8.0} {e:>12.3}");
            }
        }
        for c in report.checks.iter().filter(|c| !c.passed) {
            println!("  FAIL {}: {}", c.name, c.detail);
        }
        println!("  -> {}", dir.display());
        all_passed &= report.passed();
    }
    if all_passed {
        Ok(())
    } else {
        Err(Failure::Checks)
    }
}

fn cmd_analyze(v: f64, kappa: f64, horizon: f64, suite: &SuiteConfig) -> Result<Value, Failure> {
    for (name, x) in [("v", v), ("kappa", kappa), ("horizon", horizon)] {
        if !(x.is_finite() && x > 0.0) {
            return Err(Failure::Config(anyhow!("--{name} must be finite and positive, got {x}")));
        }
    }
    let vehicle = &suite.vehicle;
    let consts = MismatchConstants::from_params(vehicle);
    let eps = measure_peak_deviation(v, kappa, horizon, ModelKind::Dynamic, &suite.model_params())?;
    let a2_anal = a2_analytical(v, horizon, &consts).ok();
    Ok(json!({
        "v": v,
        "kappa": kappa,
        "horizon": horizon,
        "v_c": characteristic_speed(vehicle),
        "k_u": consts.k_u,
        "regime": regime(v, &consts),
        "delta_r_ss": steady_state_yaw_rate_gap(v, kappa, &consts),
        "c_trans": transient_coeff(v, kappa, &consts),
        "c_ss": steady_state_coeff(v, kappa, &consts),
        "a2_anal": a2_anal,
        "eps_star": eps,
    }))
}

fn cmd_calibrate(
    mode: Mode,
    speeds: Option<Vec<f64>>,
    curvatures: Option<Vec<f64>>,
    horizon: Option<f64>,
    suite: &SuiteConfig,
    runner: &Runner,
) -> Result<Value, Failure> {
    let base = match mode {
        Mode::Open => ScenarioGrid::car_grid(),
        Mode::Closed => ScenarioGrid::closed_loop_grid(suite.mpc.t_sim),
    };
    let grid = ScenarioGrid::new(
        speeds.unwrap_or(base.speeds),
        curvatures.unwrap_or(base.curvatures),
        horizon.unwrap_or(base.horizon),
        base.model,
    )
    .map_err(|e| Failure::Config(e.into()))?;
    match mode {
        Mode::Open => {
            let params = suite.model_params();
            let samples = runner.map(&grid.scenarios(), |_, &(v, kappa)| {
                Ok(ScalingSample {
                    v,
                    kappa,
                    eps_star: measure_peak_deviation(v, kappa, grid.horizon, grid.model, &params)?,
                })
            })?;
            let fit = fit_scaling(&samples)?;
            Ok(json!({
                "mode": "open",
                "n_points": fit.n_points,
                "horizon": grid.horizon,
                "a2": fit.a2,
                "r_squared": fit.r_squared,
                "a2_safe": fit.a2_safe,
            }))
        }
        Mode::Closed => {
            let p = &suite.policy;
            let cal = calibrate_a2_cl(&grid, p.safety_factor, p.calibration_exclusion, &suite.mpc, &suite.vehicle, runner)?;
            Ok(json!({
                "mode": "closed",
                "n_points": cal.samples.len(),
                "t_sim": grid.horizon,
                "slope": cal.slope,
                "safety_factor": cal.safety_factor,
                "a2_cl": cal.a2_cl,
            }))
        }
    }
}

fn print_report(report: &Value, json: bool) {
    if json {
        println!("{}", serde_json::to_string_pretty(report).expect("JSON value serializes"));
        return;
    }
    if let Value::Object(map) = report {
        let line: Vec<String> = map
            .iter()
            .map(|(k, v)| match v {
                Value::Number(n) => match n.as_f64() {
                    Some(x) if n.is_f64() => format!("{k}={x:.6}"),
                    _ => format!("{k}={n}"),
                },
                Value::String(s) => format!("{k}={s}"),
                other => format!("{k}={other}"),
            })
            .collect();
        println!("{}", line.join(" "));
    }
}
