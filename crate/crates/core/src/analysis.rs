//! Closed-form mismatch quantities, deviation measurement and scaling-law fits.
//!
//! The outward deviation of a trajectory is measured against a reference circle of
//! curvature `kappa` centered at `(0, 1/kappa)`; vehicles start at the origin heading
//! along +x, so positive curvature is a left turn and outward means away from the
//! center.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::integrate::{simulate, Trajectory};
use crate::models::{
    eigenvalues_2x2, lateral_state_matrix, DynState, DynamicBicycle, KinState, KinematicBicycle,
    LeanCommand, LeanState, LeaningBicycle, ModelKind, PlanarPose,
};
use crate::params::{ModelParams, VehicleParams};

/// Integration step of every open-loop experiment [s].
pub const SIM_DT: f64 = 0.01;

/// Settling-time estimates from the slowest lateral eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SettlingTimes {
    /// Speed the lateral system was linearized at [m/s].
    pub speed: f64,
    /// `5 / |Re lambda|` [s].
    pub five_time_constants: f64,
    /// `2 / |Re lambda|` [s].
    pub two_time_constants: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MismatchConstants {
    /// Characteristic speed v_c [m/s].
    pub v_c: f64,
    /// Understeer gradient K_u [s²/m²].
    pub k_u: f64,
    pub tau_s_candidates: SettlingTimes,
}

impl MismatchConstants {
    /// Constants of `params`, with settling times evaluated at the characteristic speed.
    pub fn from_params(params: &VehicleParams) -> Self {
        let v_c = characteristic_speed(params);
        Self {
            v_c,
            k_u: understeer_gradient(params),
            tau_s_candidates: settling_times(params, v_c),
        }
    }
}

pub fn characteristic_speed(params: &VehicleParams) -> f64 {
    (params.avg_stiffness() * params.wheelbase() / params.mass).sqrt()
}

pub fn understeer_gradient(params: &VehicleParams) -> f64 {
    let l = params.wheelbase();
    params.mass
        * (params.dist_rear / params.stiffness_rear - params.dist_front / params.stiffness_front)
        / (l * l)
}

pub fn settling_times(params: &VehicleParams, speed: f64) -> SettlingTimes {
    let slowest = eigenvalues_2x2(lateral_state_matrix(params, speed))
        .iter()
        .map(|(re, _)| re.abs())
        .fold(f64::INFINITY, f64::min);
    SettlingTimes {
        speed,
        five_time_constants: 5.0 / slowest,
        two_time_constants: 2.0 / slowest,
    }
}

/// Dynamic-minus-kinematic lateral acceleration at t = 0⁺ from rest under the
/// kinematic-equivalent steer. Positive is inward.
pub fn initial_accel_deficit(v: f64, kappa: f64, params: &VehicleParams) -> f64 {
    let delta = (params.wheelbase() * kappa).atan();
    params.avg_stiffness() * delta / params.mass - v * v * kappa
}

/// Whether the initial response drifts inward or outward of the kinematic plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Inward,
    Outward,
}

pub fn regime(v: f64, consts: &MismatchConstants) -> Regime {
    if v > consts.v_c {
        Regime::Outward
    } else {
        Regime::Inward
    }
}

/// Steady-state yaw deficit `K_u v² kappa / (1 + K_u v²)`.
///
/// This is the shortfall of the steady path curvature (1/m); the yaw-rate gap
/// in rad/s is `v` times it, see [`steady_state_yaw_rate_gap`].
pub fn steady_state_yaw_deficit(v: f64, kappa: f64, consts: &MismatchConstants) -> f64 {
    consts.k_u * v * v * kappa / (1.0 + consts.k_u * v * v)
}

/// Kinematic yaw rate `v kappa` minus the converged dynamic yaw rate [rad/s].
pub fn steady_state_yaw_rate_gap(v: f64, kappa: f64, consts: &MismatchConstants) -> f64 {
    v * steady_state_yaw_deficit(v, kappa, consts)
}

/// Transient and steady-state limits of `eps* / T²`, plus the measured value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeCoeffs {
    pub c_trans: f64,
    pub c_ss: f64,
    pub c_eff_measured: f64,
}

pub fn transient_coeff(v: f64, kappa: f64, consts: &MismatchConstants) -> f64 {
    0.5 * (v * v - consts.v_c * consts.v_c) * kappa.abs()
}

pub fn steady_state_coeff(v: f64, kappa: f64, consts: &MismatchConstants) -> f64 {
    0.5 * v * steady_state_yaw_deficit(v, kappa.abs(), consts)
}

/// Envelope coefficients at `(v, kappa, horizon)`; only defined in the outward regime.
pub fn envelope_coeffs(v: f64, kappa: f64, horizon: f64, params: &VehicleParams) -> Result<EnvelopeCoeffs> {
    let consts = MismatchConstants::from_params(params);
    if !(v > consts.v_c) {
        return Err(Error::Domain(format!(
            "T² envelope needs v > v_c = {:.3} m/s, got {v}",
            consts.v_c
        )));
    }
    let models = ModelParams {
        vehicle: *params,
        ..ModelParams::default()
    };
    let eps = measure_peak_deviation(v, kappa, horizon, ModelKind::Dynamic, &models)?;
    Ok(EnvelopeCoeffs {
        c_trans: transient_coeff(v, kappa, &consts),
        c_ss: steady_state_coeff(v, kappa, &consts),
        c_eff_measured: eps / (horizon * horizon),
    })
}

/// Signed distance from `(x, y)` to the reference path of curvature `kappa`,
/// positive outward. A straight reference (`kappa == 0`) uses `-y`, the limit of
/// the left-turn convention.
pub fn signed_offset(x: f64, y: f64, kappa: f64) -> f64 {
    if kappa == 0.0 {
        return -y;
    }
    let radius = 1.0 / kappa;
    (x * x + (y - radius) * (y - radius)).sqrt() - radius.abs()
}

/// Heading of the reference path at the point closest to `(x, y)`.
pub fn reference_heading(x: f64, y: f64, kappa: f64) -> f64 {
    if kappa == 0.0 {
        return 0.0;
    }
    let radius = 1.0 / kappa;
    if kappa > 0.0 {
        x.atan2(radius - y)
    } else {
        -x.atan2(-radius + y)
    }
}

pub fn lateral_deviation<S: PlanarPose>(states: &[S], kappa: f64) -> Vec<f64> {
    states
        .iter()
        .map(|s| {
            let (x, y) = s.position();
            signed_offset(x, y, kappa)
        })
        .collect()
}

fn peak(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Simulates one open-loop scenario from rest under the constant kinematic-equivalent
/// command and returns the pose trajectory.
pub fn open_loop_poses(
    v: f64,
    kappa: f64,
    horizon: f64,
    kind: ModelKind,
    params: &ModelParams,
) -> Result<Vec<(f64, f64, f64)>> {
    fn poses<S: PlanarPose>(traj: Trajectory<S>) -> Vec<(f64, f64, f64)> {
        traj.states
            .iter()
            .map(|s| {
                let (x, y) = s.position();
                (x, y, s.heading())
            })
            .collect()
    }
    ensure_finite(v, "speed")?;
    ensure_finite(kappa, "curvature")?;
    let vehicle = params.vehicle;
    let delta = (vehicle.wheelbase() * kappa).atan();
    Ok(match kind {
        ModelKind::Kinematic => poses(simulate(
            &KinematicBicycle { params: vehicle, speed: v },
            KinState::default(),
            |_, _| delta,
            SIM_DT,
            horizon,
        )?),
        ModelKind::Dynamic => poses(simulate(
            &DynamicBicycle { params: vehicle, speed: v },
            DynState::default(),
            |_, _| delta,
            SIM_DT,
            horizon,
        )?),
        ModelKind::Leaning => {
            let cmd = LeanCommand::for_curvature(v, kappa, &params.lean);
            poses(simulate_lean(v, cmd, LeanState::default(), horizon, params)?)
        }
    })
}

/// Leaning-bicycle simulation that turns a capsize into an error carrying its time.
pub fn simulate_lean(
    v: f64,
    cmd: LeanCommand,
    initial: LeanState,
    horizon: f64,
    params: &ModelParams,
) -> Result<Trajectory<LeanState>> {
    let model = LeaningBicycle {
        params: params.lean,
        speed: v,
    };
    let traj = simulate(&model, initial, |_, _| cmd, SIM_DT, horizon).map_err(|e| match e {
        Error::Capsize { phi, .. } => Error::Capsize { t: f64::NAN, phi },
        other => other,
    })?;
    if let Some((t, s)) = traj.iter().find(|(_, s)| s.phi.abs() >= std::f64::consts::FRAC_PI_2) {
        return Err(Error::Capsize { t, phi: s.phi });
    }
    Ok(traj)
}

/// Peak outward deviation eps* over `[0, horizon]` of the open-loop execution.
pub fn measure_peak_deviation(
    v: f64,
    kappa: f64,
    horizon: f64,
    kind: ModelKind,
    params: &ModelParams,
) -> Result<f64> {
    let poses = open_loop_poses(v, kappa, horizon, kind, params)?;
    Ok(peak(poses.iter().map(|&(x, y, _)| signed_offset(x, y, kappa))))
}

/// Simulation-free MACT coefficient `½ (1 - v_c² / v_max²) T²`.
pub fn a2_analytical(v_max: f64, horizon: f64, consts: &MismatchConstants) -> Result<f64> {
    if !(v_max > consts.v_c) {
        return Err(Error::Domain(format!(
            "v_max = {v_max} m/s does not exceed v_c = {:.3} m/s; no outward regime",
            consts.v_c
        )));
    }
    Ok(0.5 * (1.0 - consts.v_c * consts.v_c / (v_max * v_max)) * horizon * horizon)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingSample {
    pub v: f64,
    pub kappa: f64,
    pub eps_star: f64,
}

impl ScalingSample {
    pub fn regressor(&self) -> f64 {
        self.v * self.v * self.kappa.abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    /// Through-origin least-squares slope of eps* on v²|kappa| [s²].
    pub a2: f64,
    pub r_squared: f64,
    /// Largest per-sample ratio eps* / (v²|kappa|) [s²].
    pub a2_safe: f64,
    pub n_points: usize,
}

/// Fits `eps* = a2 v² |kappa|` through the origin.
///
/// R² is `1 - SS_res / SS_tot` with `SS_tot` about the sample mean, clamped to
/// `[0, 1]`; it is 1 when there is nothing left to explain. Samples with a zero
/// regressor are ignored by `a2_safe`.
pub fn fit_scaling(samples: &[ScalingSample]) -> Result<ScalingFit> {
    if samples.is_empty() {
        return Err(Error::DegenerateFit("no samples"));
    }
    if samples.iter().any(|s| !(s.regressor().is_finite() && s.eps_star.is_finite())) {
        return Err(Error::DegenerateFit("non-finite sample"));
    }
    let sxx: f64 = samples.iter().map(|s| s.regressor().powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("every regressor v²|kappa| is zero"));
    }
    let sxy: f64 = samples.iter().map(|s| s.regressor() * s.eps_star).sum();
    let a2 = sxy / sxx;
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.eps_star).sum::<f64>() / n;
    let ss_res: f64 = samples.iter().map(|s| (s.eps_star - a2 * s.regressor()).powi(2)).sum();
    let ss_tot: f64 = samples.iter().map(|s| (s.eps_star - mean).powi(2)).sum();
    let scale = samples.iter().map(|s| s.eps_star * s.eps_star).sum::<f64>().max(f64::MIN_POSITIVE);
    let r_squared = if ss_res <= 1e-24 * scale {
        1.0
    } else if ss_tot == 0.0 {
        0.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    let a2_safe = samples
        .iter()
        .filter(|s| s.regressor() > 0.0)
        .map(|s| s.eps_star / s.regressor())
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ScalingFit {
        a2,
        r_squared,
        a2_safe,
        n_points: samples.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropagationBoundInput {
    pub lipschitz_f: f64,
    pub lipschitz_g: f64,
    pub per_step_mismatch_norms: Vec<f64>,
}

/// `bound_t = sum_{k<t} L_f^(t-1-k) |Delta_k|` for t = 0..=len, so `bound_0 = 0`.
pub fn horizon_mismatch_bound(input: &PropagationBoundInput) -> Result<Vec<f64>> {
    if !(input.lipschitz_f >= 0.0) || !input.lipschitz_f.is_finite() {
        return Err(Error::InvalidParam {
            name: "lipschitz_f",
            value: input.lipschitz_f,
            reason: "must be finite and non-negative",
        });
    }
    let mut bounds = Vec::with_capacity(input.per_step_mismatch_norms.len() + 1);
    let mut acc = 0.0;
    bounds.push(acc);
    for &d in &input.per_step_mismatch_norms {
        if !(d >= 0.0) {
            return Err(Error::InvalidParam {
                name: "per_step_mismatch_norms",
                value: d,
                reason: "norms must be non-negative",
            });
        }
        acc = input.lipschitz_f * acc + d;
        bounds.push(acc);
    }
    Ok(bounds)
}

/// Per-step constraint tightening `eps_t = L_g * bound_t`.
pub fn tightening_certificate(bounds: &[f64], lipschitz_g: f64) -> Result<Vec<f64>> {
    if !(lipschitz_g >= 0.0) || !lipschitz_g.is_finite() {
        return Err(Error::InvalidParam {
            name: "lipschitz_g",
            value: lipschitz_g,
            reason: "must be finite and non-negative",
        });
    }
    Ok(bounds.iter().map(|b| lipschitz_g * b).collect())
}

/// A kinematic plan and its dynamic execution over a short horizon, both in the
/// full `(x, y, psi, v_y, r)` state.
///
/// The planner map advances the pose kinematically and the lateral states with
/// the same linear-tire dynamics as the truth, so the step-wise mismatch lives in
/// the pose only and `e_0 = 0`.
#[derive(Debug, Clone)]
pub struct PlanExecutePair {
    pub plan: Vec<DynState>,
    pub executed: Vec<DynState>,
    /// `|f_t(x_k, u_k) - f_p(x_k, u_k)|` along the plan.
    pub step_mismatch: Vec<f64>,
    /// Pose Lipschitz constant of one truth step: `1 + dt * max |(v, v_y)|`, inflated by 5%.
    pub lipschitz_f: f64,
}

fn pose_distance(a: &DynState, b: &DynState) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.psi - b.psi).powi(2)).sqrt()
}

fn planner_step(s: &DynState, v: f64, delta: f64, dt: f64, params: &VehicleParams) -> Result<DynState> {
    let dynamic = DynamicBicycle { params: *params, speed: v };
    let kinematic = KinematicBicycle { params: *params, speed: v };
    let lateral = simulate(&dynamic, *s, |_, _| delta, dt, dt)?;
    let pose = simulate(&kinematic, KinState::from(*s), |_, _| delta, dt, dt)?;
    let (lat, pose) = (lateral.last().unwrap(), pose.last().unwrap());
    Ok(DynState {
        x: pose.x,
        y: pose.y,
        psi: pose.psi,
        v_y: lat.v_y,
        r: lat.r,
    })
}

fn truth_step(s: &DynState, v: f64, delta: f64, dt: f64, params: &VehicleParams) -> Result<DynState> {
    let dynamic = DynamicBicycle { params: *params, speed: v };
    Ok(*simulate(&dynamic, *s, |_, _| delta, dt, dt)?.last().unwrap())
}

pub fn plan_execute_pair(
    initial: DynState,
    v: f64,
    steer: &[f64],
    dt: f64,
    params: &VehicleParams,
) -> Result<PlanExecutePair> {
    let mut plan = vec![initial];
    let mut executed = vec![initial];
    let mut step_mismatch = Vec::with_capacity(steer.len());
    let mut max_speed: f64 = 0.0;
    for &delta in steer {
        let x = *plan.last().unwrap();
        let next_plan = planner_step(&x, v, delta, dt, params)?;
        step_mismatch.push(pose_distance(&truth_step(&x, v, delta, dt, params)?, &next_plan));
        plan.push(next_plan);
        let next_true = truth_step(executed.last().unwrap(), v, delta, dt, params)?;
        executed.push(next_true);
        for s in [&x, &next_plan] {
            max_speed = max_speed.max((v * v + s.v_y * s.v_y).sqrt());
        }
    }
    Ok(PlanExecutePair {
        plan,
        executed,
        step_mismatch,
        lipschitz_f: 1.0 + 1.05 * dt * max_speed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> VehicleParams {
        VehicleParams::default()
    }

    #[test]
    fn characteristic_speed_scaling() {
        let p = table();
        assert!((characteristic_speed(&p) - 12.0).abs() < 1e-12);
        let stiff = VehicleParams {
            stiffness_front: 4.0 * p.stiffness_front,
            stiffness_rear: 4.0 * p.stiffness_rear,
            ..p
        };
        assert!((characteristic_speed(&stiff) - 24.0).abs() < 1e-12);
        let heavy = VehicleParams { mass: 4.0 * p.mass, ..p };
        assert!((characteristic_speed(&heavy) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn understeer_gradient_table_value() {
        let k_u = understeer_gradient(&table());
        assert!((k_u - 7.716e-4).abs() < 1e-6, "{k_u}");
    }

    #[test]
    fn initial_deficit_sign_and_residual() {
        let p = table();
        let at_vc = initial_accel_deficit(12.0, 0.015, &p);
        let lk: f64 = 2.7 * 0.015;
        let residual = p.avg_stiffness() * (lk.atan() - lk) / p.mass;
        assert!((at_vc - residual).abs() < 1e-12);
        assert!(at_vc.abs() < 2e-3);
        assert!(initial_accel_deficit(15.0, 0.015, &p) < 0.0);
        assert!(initial_accel_deficit(10.0, 0.015, &p) > 0.0);
        assert_eq!(initial_accel_deficit(15.0, 0.0, &p), 0.0);
    }

    #[test]
    fn yaw_deficit_substitution() {
        let consts = MismatchConstants {
            k_u: 7.72e-4,
            ..MismatchConstants::from_params(&table())
        };
        let d = steady_state_yaw_deficit(15.0, 0.015, &consts);
        let expected = 7.72e-4 * 225.0 * 0.015 / (1.0 + 7.72e-4 * 225.0);
        assert!((d - expected).abs() < 1e-15);
        assert!((d - 2.22e-3).abs() < 0.01e-3);
        assert_eq!(steady_state_yaw_deficit(15.0, 0.0, &consts), 0.0);
        let neutral = MismatchConstants { k_u: 0.0, ..consts };
        assert_eq!(steady_state_yaw_deficit(15.0, 0.015, &neutral), 0.0);
    }

    #[test]
    fn yaw_deficit_matches_long_simulation() {
        let p = table();
        let consts = MismatchConstants::from_params(&p);
        let (v, kappa) = (15.0, 0.015);
        let delta = (p.wheelbase() * kappa).atan();
        let traj = simulate(&DynamicBicycle { params: p, speed: v }, DynState::default(), |_, _| delta, SIM_DT, 20.0)
            .unwrap();
        let kinematic_rate = v * delta.tan() / p.wheelbase();
        let gap = kinematic_rate - traj.last().unwrap().r;
        let predicted = steady_state_yaw_rate_gap(v, kappa, &consts);
        assert!((gap - predicted).abs() < 0.05 * predicted, "gap {gap} predicted {predicted}");
    }

    #[test]
    fn envelope_closed_forms() {
        let p = table();
        let consts = MismatchConstants::from_params(&p);
        assert!((transient_coeff(15.0, 0.015, &consts) - 0.6075).abs() < 1e-12);
        assert_eq!(transient_coeff(12.0, 0.015, &consts), 0.0);
        let c_ss = steady_state_coeff(15.0, 0.015, &consts);
        assert!((c_ss - 0.0167).abs() < 2e-4, "{c_ss}");
        assert!(matches!(envelope_coeffs(11.0, 0.015, 1.5, &p), Err(Error::Domain(_))));
        let env = envelope_coeffs(15.0, 0.015, 1.5, &p).unwrap();
        assert!(env.c_ss <= env.c_eff_measured && env.c_eff_measured <= env.c_trans * 1.05);
    }

    #[test]
    fn offsets_on_and_off_the_circle() {
        let kappa = 0.02;
        let r = 1.0 / kappa;
        let theta: f64 = 0.7;
        assert!(signed_offset(r * theta.sin(), r - r * theta.cos(), kappa).abs() < 1e-12);
        assert!((signed_offset(0.0, -0.3, kappa) - 0.3).abs() < 1e-12);
        assert!((signed_offset(0.0, 0.3, kappa) + 0.3).abs() < 1e-12);
        assert!((signed_offset(0.0, 0.3, -kappa) - 0.3).abs() < 1e-12);
        assert_eq!(signed_offset(3.0, 0.25, 0.0), -0.25);
        assert!((reference_heading(r * theta.sin(), r - r * theta.cos(), kappa) - theta).abs() < 1e-12);
        assert!((reference_heading(r * theta.sin(), -(r - r * theta.cos()), -kappa) + theta).abs() < 1e-12);
    }

    #[test]
    fn kinematic_circle_is_exact() {
        let params = ModelParams::default();
        for (v, kappa) in [(15.0, 0.015), (8.0, 0.04), (18.0, -0.01)] {
            let poses = open_loop_poses(v, kappa, 10.0, ModelKind::Kinematic, &params).unwrap();
            let worst = poses
                .iter()
                .map(|&(x, y, _)| signed_offset(x, y, kappa).abs())
                .fold(0.0, f64::max);
            assert!(worst < 1e-6, "v={v} kappa={kappa}: {worst}");
        }
    }

    #[test]
    fn peak_deviation_single_scenario() {
        let eps = measure_peak_deviation(15.0, 0.015, 1.5, ModelKind::Dynamic, &ModelParams::default()).unwrap();
        assert!((eps - 1.04).abs() < 0.05 * 1.04, "{eps}");
    }

    #[test]
    fn analytical_coefficient() {
        let consts = MismatchConstants::from_params(&table());
        assert!((a2_analytical(18.0, 1.5, &consts).unwrap() - 0.625).abs() < 1e-12);
        assert!((a2_analytical(1e9, 1.5, &consts).unwrap() - 1.125).abs() < 1e-9);
        let near = a2_analytical(12.0 + 1e-9, 1.5, &consts).unwrap();
        assert!(near > 0.0 && near < 1e-9);
        assert!(a2_analytical(12.0, 1.5, &consts).is_err());
        assert!(a2_analytical(10.0, 1.5, &consts).is_err());
    }

    #[test]
    fn fit_exact_and_degenerate() {
        let samples: Vec<_> = [(12.0, 0.005), (14.0, 0.01), (18.0, 0.015)]
            .iter()
            .map(|&(v, kappa)| ScalingSample { v, kappa, eps_star: 0.3 * v * v * kappa })
            .collect();
        let fit = fit_scaling(&samples).unwrap();
        assert!((fit.a2 - 0.3).abs() < 1e-14);
        assert_eq!(fit.r_squared, 1.0);
        assert!((fit.a2_safe - 0.3).abs() < 1e-14);

        let one = [ScalingSample { v: 15.0, kappa: 0.015, eps_star: 1.0 }];
        let fit = fit_scaling(&one).unwrap();
        assert!((fit.a2 - 1.0 / 3.375).abs() < 1e-15);
        assert_eq!(fit.r_squared, 1.0);
        assert_eq!(fit.n_points, 1);

        let zero = [ScalingSample { v: 15.0, kappa: 0.0, eps_star: 0.0 }; 3];
        assert!(matches!(fit_scaling(&zero), Err(Error::DegenerateFit(_))));
        assert!(fit_scaling(&[]).is_err());
    }

    #[test]
    fn propagation_bound_cases() {
        let input = |lf: f64, d: Vec<f64>| PropagationBoundInput {
            lipschitz_f: lf,
            lipschitz_g: 1.0,
            per_step_mismatch_norms: d,
        };
        assert_eq!(horizon_mismatch_bound(&input(1.7, vec![0.0; 4])).unwrap(), vec![0.0; 5]);
        assert_eq!(
            horizon_mismatch_bound(&input(1.0, vec![0.5; 4])).unwrap(),
            vec![0.0, 0.5, 1.0, 1.5, 2.0]
        );
        assert_eq!(
            horizon_mismatch_bound(&input(2.0, vec![1.0; 3])).unwrap(),
            vec![0.0, 1.0, 3.0, 7.0]
        );
        assert!(horizon_mismatch_bound(&input(-1.0, vec![1.0])).is_err());
        assert!(horizon_mismatch_bound(&input(1.0, vec![-1.0])).is_err());

        let bounds = [0.0, 1.0, 3.0];
        assert_eq!(tightening_certificate(&bounds, 0.0).unwrap(), vec![0.0; 3]);
        assert_eq!(tightening_certificate(&bounds, 1.0).unwrap(), bounds.to_vec());
        assert!(tightening_certificate(&bounds, -0.1).is_err());
    }

    #[test]
    fn settling_time_conventions() {
        let consts = MismatchConstants::from_params(&table());
        let tau = consts.tau_s_candidates;
        assert!((tau.five_time_constants / tau.two_time_constants - 2.5).abs() < 1e-12);
        assert!(tau.two_time_constants > 0.1 && tau.five_time_constants < 1.0);
    }
}
