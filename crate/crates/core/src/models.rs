//! Kinematic bicycle, linear-tire dynamic bicycle and point-mass leaning bicycle.
//!
//! All three share the planar pose `(x, y, psi)`; the dynamic model adds body-frame
//! lateral velocity and yaw rate, the leaning model adds lean angle, lean rate and
//! steer angle. Longitudinal speed is a constant parameter of every model.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::integrate::{Dynamics, StateVector};
use crate::params::{LeanBikeParams, VehicleParams};

/// Anything with a planar position and heading.
pub trait PlanarPose {
    fn position(&self) -> (f64, f64);
    fn heading(&self) -> f64;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KinState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DynState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    /// Body-frame lateral velocity [m/s].
    pub v_y: f64,
    /// Yaw rate [rad/s].
    pub r: f64,
}

/// Slip angles and linear lateral tire forces for one evaluation of the dynamic model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TireState {
    pub alpha_f: f64,
    pub alpha_r: f64,
    pub f_yf: f64,
    pub f_yr: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LeanState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    /// Lean angle [rad], positive into a left turn.
    pub phi: f64,
    pub phi_dot: f64,
    /// Steer angle [rad].
    pub delta: f64,
}

macro_rules! impl_state {
    ($ty:ident { $($field:ident),+ }) => {
        impl StateVector for $ty {
            fn axpy(&self, scale: f64, rate: &Self) -> Self {
                Self { $($field: self.$field + scale * rate.$field),+ }
            }

            fn is_finite(&self) -> bool {
                true $(&& self.$field.is_finite())+
            }
        }

        impl PlanarPose for $ty {
            fn position(&self) -> (f64, f64) {
                (self.x, self.y)
            }

            fn heading(&self) -> f64 {
                self.psi
            }
        }
    };
}

impl_state!(KinState { x, y, psi });
impl_state!(DynState { x, y, psi, v_y, r });
impl_state!(LeanState { x, y, psi, phi, phi_dot, delta });

impl From<DynState> for KinState {
    fn from(s: DynState) -> Self {
        Self { x: s.x, y: s.y, psi: s.psi }
    }
}

/// Rear-axle kinematic bicycle rates `(v cos psi, v sin psi, v tan(delta) / L)`.
pub fn kin_derivative(s: &KinState, v: f64, delta: f64, params: &VehicleParams) -> Result<KinState> {
    ensure_finite(v, "speed")?;
    ensure_finite(delta, "steer")?;
    if !s.is_finite() {
        return Err(Error::NonFinite("kinematic state"));
    }
    if v < 0.0 {
        return Err(Error::Domain(format!("kinematic speed must be >= 0, got {v}")));
    }
    if delta.abs() >= FRAC_PI_2 {
        return Err(Error::Domain(format!("steer {delta} rad outside (-pi/2, pi/2)")));
    }
    let (sin, cos) = s.psi.sin_cos();
    Ok(KinState {
        x: v * cos,
        y: v * sin,
        psi: v / params.wheelbase() * delta.tan(),
    })
}

pub fn slip_and_forces(s: &DynState, v_x: f64, delta: f64, params: &VehicleParams) -> Result<TireState> {
    ensure_finite(v_x, "speed")?;
    ensure_finite(delta, "steer")?;
    if !s.is_finite() {
        return Err(Error::NonFinite("dynamic state"));
    }
    if v_x <= 0.0 {
        return Err(Error::Domain(format!(
            "dynamic bicycle needs positive longitudinal speed, got {v_x}"
        )));
    }
    let alpha_f = delta - ((s.v_y + params.dist_front * s.r) / v_x).atan();
    let alpha_r = -((s.v_y - params.dist_rear * s.r) / v_x).atan();
    Ok(TireState {
        alpha_f,
        alpha_r,
        f_yf: params.stiffness_front * alpha_f,
        f_yr: params.stiffness_rear * alpha_r,
    })
}

/// 2-DOF lateral/yaw dynamics with the pose advanced by the body-to-world rotation.
pub fn dyn_derivative(s: &DynState, v_x: f64, delta: f64, params: &VehicleParams) -> Result<DynState> {
    let tire = slip_and_forces(s, v_x, delta, params)?;
    let (sin, cos) = s.psi.sin_cos();
    Ok(DynState {
        x: v_x * cos - s.v_y * sin,
        y: v_x * sin + s.v_y * cos,
        psi: s.r,
        v_y: (tire.f_yf + tire.f_yr) / params.mass - v_x * s.r,
        r: (params.dist_front * tire.f_yf - params.dist_rear * tire.f_yr) / params.yaw_inertia,
    })
}

/// Lean and steer commands for the balance controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeanCommand {
    pub phi_ref: f64,
    pub delta_tgt: f64,
}

impl LeanCommand {
    /// Steady lean and steer for riding a circle of curvature `kappa` at speed `v`.
    pub fn for_curvature(v: f64, kappa: f64, p: &LeanBikeParams) -> Self {
        let phi_ref = (v * v * kappa / p.gravity).atan();
        let delta_tgt = (p.wheelbase * kappa * phi_ref.cos()).atan();
        Self { phi_ref, delta_tgt }
    }
}

pub fn lean_derivative(s: &LeanState, v: f64, cmd: LeanCommand, p: &LeanBikeParams) -> Result<LeanState> {
    ensure_finite(v, "speed")?;
    ensure_finite(cmd.phi_ref, "lean reference")?;
    ensure_finite(cmd.delta_tgt, "steer target")?;
    if !s.is_finite() {
        return Err(Error::NonFinite("lean state"));
    }
    if s.phi.abs() >= FRAC_PI_2 {
        return Err(Error::Capsize { t: f64::NAN, phi: s.phi });
    }
    let (sin_psi, cos_psi) = s.psi.sin_cos();
    let (sin_phi, cos_phi) = s.phi.sin_cos();
    let tan_delta = s.delta.tan();
    let centripetal = v * v * tan_delta / p.wheelbase;
    Ok(LeanState {
        x: v * cos_psi,
        y: v * sin_psi,
        psi: v * tan_delta / (p.wheelbase * cos_phi),
        phi: s.phi_dot,
        phi_dot: (p.gravity * sin_phi - centripetal * cos_phi) / p.com_height,
        delta: p.k_lean * (s.phi - cmd.phi_ref)
            + p.k_lean_rate * s.phi_dot
            + p.k_steer * (s.delta - cmd.delta_tgt),
    })
}

/// Fixed point `(phi, delta)` of the lean subsystem under a constant command.
///
/// Solves `g sin(phi) = (v² tan(delta) / l) cos(phi)` together with the zero
/// steer-rate condition by Newton iteration from the command itself.
pub fn lean_equilibrium(v: f64, cmd: LeanCommand, p: &LeanBikeParams) -> Result<(f64, f64)> {
    let (mut phi, mut delta) = (cmd.phi_ref, cmd.delta_tgt);
    for _ in 0..50 {
        let c = v * v / p.wheelbase;
        let f1 = p.gravity * phi.sin() - c * delta.tan() * phi.cos();
        let f2 = p.k_lean * (phi - cmd.phi_ref) + p.k_steer * (delta - cmd.delta_tgt);
        let j11 = p.gravity * phi.cos() + c * delta.tan() * phi.sin();
        let j12 = -c * phi.cos() / (delta.cos() * delta.cos());
        let (j21, j22) = (p.k_lean, p.k_steer);
        let det = j11 * j22 - j12 * j21;
        if det.abs() < 1e-300 {
            break;
        }
        let d_phi = (f1 * j22 - f2 * j12) / det;
        let d_delta = (j11 * f2 - j21 * f1) / det;
        phi -= d_phi;
        delta -= d_delta;
        if d_phi.abs() + d_delta.abs() < 1e-15 {
            return Ok((phi, delta));
        }
    }
    Err(Error::Domain("lean equilibrium did not converge".into()))
}

pub struct KinematicBicycle {
    pub params: VehicleParams,
    pub speed: f64,
}

impl Dynamics for KinematicBicycle {
    type State = KinState;
    type Input = f64;

    fn derivative(&self, s: &KinState, delta: f64) -> Result<KinState> {
        kin_derivative(s, self.speed, delta, &self.params)
    }
}

pub struct DynamicBicycle {
    pub params: VehicleParams,
    pub speed: f64,
}

impl Dynamics for DynamicBicycle {
    type State = DynState;
    type Input = f64;

    fn derivative(&self, s: &DynState, delta: f64) -> Result<DynState> {
        dyn_derivative(s, self.speed, delta, &self.params)
    }
}

pub struct LeaningBicycle {
    pub params: LeanBikeParams,
    pub speed: f64,
}

impl Dynamics for LeaningBicycle {
    type State = LeanState;
    type Input = LeanCommand;

    fn derivative(&self, s: &LeanState, cmd: LeanCommand) -> Result<LeanState> {
        lean_derivative(s, self.speed, cmd, &self.params)
    }
}

/// Which vehicle model a scenario is simulated with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Kinematic,
    Dynamic,
    Leaning,
}

/// Linearized lateral system matrix of `(v_y, r)` at constant `v_x`.
pub fn lateral_state_matrix(params: &VehicleParams, v_x: f64) -> [[f64; 2]; 2] {
    let (cf, cr) = (params.stiffness_front, params.stiffness_rear);
    let (lf, lr) = (params.dist_front, params.dist_rear);
    let (m, iz) = (params.mass, params.yaw_inertia);
    [
        [-(cf + cr) / (m * v_x), -(cf * lf - cr * lr) / (m * v_x) - v_x],
        [-(lf * cf - lr * cr) / (iz * v_x), -(lf * lf * cf + lr * lr * cr) / (iz * v_x)],
    ]
}

/// Eigenvalues of a real 2×2 matrix as `(re, im)` pairs.
pub fn eigenvalues_2x2(a: [[f64; 2]; 2]) -> [(f64, f64); 2] {
    let tr = a[0][0] + a[1][1];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let disc = 0.25 * tr * tr - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        [(0.5 * tr + s, 0.0), (0.5 * tr - s, 0.0)]
    } else {
        let s = (-disc).sqrt();
        [(0.5 * tr, s), (0.5 * tr, -s)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::simulate;

    fn table() -> VehicleParams {
        VehicleParams::default()
    }

    #[test]
    fn kinematic_rates() {
        let p = table();
        let d = kin_derivative(&KinState::default(), 15.0, 0.0, &p).unwrap();
        assert_eq!(d, KinState { x: 15.0, y: 0.0, psi: 0.0 });

        let delta = (2.7_f64 * 0.015).atan();
        let d = kin_derivative(&KinState::default(), 15.0, delta, &p).unwrap();
        assert!((d.psi - 0.225).abs() < 1e-12);

        let s = KinState { psi: FRAC_PI_2, ..KinState::default() };
        let d = kin_derivative(&s, 10.0, 0.0, &p).unwrap();
        assert!(d.x.abs() < 1e-12 && (d.y - 10.0).abs() < 1e-12 && d.psi == 0.0);
    }

    #[test]
    fn kinematic_rejects_bad_inputs() {
        let p = table();
        let s = KinState::default();
        assert!(kin_derivative(&s, f64::NAN, 0.0, &p).is_err());
        assert!(kin_derivative(&s, -1.0, 0.0, &p).is_err());
        assert!(kin_derivative(&s, 1.0, 1.6, &p).is_err());
        let bad = KinState { x: f64::INFINITY, ..s };
        assert!(kin_derivative(&bad, 1.0, 0.0, &p).is_err());
    }

    #[test]
    fn tire_forces_from_rest() {
        let p = table();
        let t = slip_and_forces(&DynState::default(), 15.0, 0.04, &p).unwrap();
        assert_eq!(t.alpha_f, 0.04);
        assert_eq!(t.alpha_r, 0.0);
        assert!((t.f_yf - 3200.0).abs() < 1e-9);
        assert_eq!(t.f_yr, 0.0);

        let t = slip_and_forces(&DynState::default(), 15.0, 0.0, &p).unwrap();
        assert_eq!((t.alpha_f, t.alpha_r, t.f_yf, t.f_yr), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn tire_forces_reject_non_positive_speed() {
        let p = table();
        assert!(matches!(
            slip_and_forces(&DynState::default(), 0.0, 0.01, &p),
            Err(Error::Domain(_))
        ));
        assert!(dyn_derivative(&DynState::default(), -3.0, 0.01, &p).is_err());
    }

    #[test]
    fn dynamic_initial_lateral_acceleration() {
        let p = table();
        let delta = (p.wheelbase() * 0.015).atan();
        let d = dyn_derivative(&DynState::default(), 15.0, delta, &p).unwrap();
        // v_dot_y + v_x r = lateral acceleration; r = 0 at rest.
        assert!((d.v_y - p.stiffness_front * delta / p.mass).abs() < 1e-12);
        let eq = dyn_derivative(&DynState::default(), 15.0, 0.0, &p).unwrap();
        assert_eq!(eq, DynState { x: 15.0, ..DynState::default() });
    }

    #[test]
    fn lateral_system_is_hurwitz() {
        let p = table();
        for v in [5.0, 8.0, 12.0, 15.0, 20.0] {
            for (re, _) in eigenvalues_2x2(lateral_state_matrix(&p, v)) {
                assert!(re < 0.0, "v = {v}: eigenvalue real part {re}");
            }
        }
    }

    #[test]
    fn steady_circle_moment_balance() {
        let p = table();
        let v = 15.0;
        let delta = (p.wheelbase() * 0.015).atan();
        let model = DynamicBicycle { params: p, speed: v };
        let traj = simulate(&model, DynState::default(), |_, _| delta, 0.01, 20.0).unwrap();
        let s = traj.last().unwrap();
        let t = slip_and_forces(s, v, delta, &p).unwrap();
        let moment = p.dist_front * t.f_yf - p.dist_rear * t.f_yr;
        assert!(moment.abs() < 1e-6 * (p.dist_front * t.f_yf).abs(), "moment {moment}");
    }

    #[test]
    fn lean_equilibrium_is_a_fixed_point() {
        let p = LeanBikeParams::default();
        let (v, kappa) = (3.5, 0.03);
        let cmd = LeanCommand::for_curvature(v, kappa, &p);
        let (phi, delta) = lean_equilibrium(v, cmd, &p).unwrap();
        let s = LeanState { phi, delta, ..LeanState::default() };
        let d = lean_derivative(&s, v, cmd, &p).unwrap();
        assert!(d.phi.abs() < 1e-6 && d.phi_dot.abs() < 1e-6 && d.delta.abs() < 1e-6);
    }

    #[test]
    fn lean_capsize_is_reported() {
        let p = LeanBikeParams::default();
        let s = LeanState { phi: 1.6, ..LeanState::default() };
        let cmd = LeanCommand { phi_ref: 0.0, delta_tgt: 0.0 };
        assert!(matches!(lean_derivative(&s, 3.0, cmd, &p), Err(Error::Capsize { .. })));
    }

    #[test]
    fn straight_inputs_give_straight_lines() {
        let p = table();
        let kin = simulate(
            &KinematicBicycle { params: p, speed: 10.0 },
            KinState::default(),
            |_, _| 0.0,
            0.01,
            2.0,
        )
        .unwrap();
        let dynamic = simulate(
            &DynamicBicycle { params: p, speed: 10.0 },
            DynState::default(),
            |_, _| 0.0,
            0.01,
            2.0,
        )
        .unwrap();
        let bike = LeanBikeParams::default();
        let lean = simulate(
            &LeaningBicycle { params: bike, speed: 3.0 },
            LeanState::default(),
            |_, _| LeanCommand::for_curvature(3.0, 0.0, &bike),
            0.01,
            2.0,
        )
        .unwrap();
        assert!(kin.states.iter().all(|s| s.y == 0.0 && s.psi == 0.0));
        assert!(dynamic.states.iter().all(|s| s.y == 0.0 && s.psi == 0.0));
        assert!(lean.states.iter().all(|s| s.y == 0.0 && s.phi == 0.0));
        assert!((kin.last().unwrap().x - 20.0).abs() < 1e-9);
    }
}
