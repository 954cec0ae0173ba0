//! Direct single-shooting optimizer with a tightened lane corridor.
//!
//! The decision variables are steering increments `z_k = delta_k - delta_{k-1}`
//! boxed by `|z_k| <= ddelta_max * dt`; the accumulated steer is clamped to
//! `±delta_max`. Both steering constraints are therefore satisfied by every
//! iterate. The lane slack is eliminated in closed form,
//! `S_k = max(0, |n_k| - (hw - eps_k))`, leaving a box-constrained nonlinear
//! least-squares problem that is solved by projected Gauss-Newton.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::analysis::{reference_heading, signed_offset};
use crate::error::{Error, Result};
use crate::models::{dyn_derivative, DynState, ModelKind};
use crate::params::VehicleParams;
use crate::tightening::{epsilon, AdaptiveEstimatorState, TighteningPolicy};

type State5 = SVector<f64, 5>;
type Jac5 = SMatrix<f64, 5, 5>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    pub w_n: f64,
    pub w_psi: f64,
    pub w_u: f64,
    pub w_du: f64,
    pub w_s: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            w_n: 10.0,
            w_psi: 1.0,
            w_u: 0.1,
            w_du: 1.0,
            w_s: 1000.0,
        }
    }
}

/// Where the tightening reads its curvature from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurvatureSource {
    /// `tan(delta_k) / L` of the rolled-out command.
    Commanded,
    /// The constant reference curvature of the scenario.
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    /// Projected-gradient infinity norm at which the solver stops.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShootingProblem {
    /// Number of control steps N.
    pub horizon: usize,
    pub dt: f64,
    /// RK4 sub-steps per control step.
    pub substeps: usize,
    /// Constant longitudinal speed [m/s].
    pub speed: f64,
    /// Reference path curvature (0 = straight along +x).
    pub kappa_ref: f64,
    pub weights: CostWeights,
    pub delta_max: f64,
    pub ddelta_max: f64,
    pub lane_half_width: f64,
    pub policy: TighteningPolicy,
    /// Estimator state for the adaptive policy; ignored otherwise.
    pub estimator: Option<AdaptiveEstimatorState>,
    pub curvature_source: CurvatureSource,
    /// Rollout model: kinematic planner or dynamic truth.
    pub model: ModelKind,
    pub params: VehicleParams,
    pub initial: DynState,
    /// Steer applied before the horizon starts.
    pub prev_steer: f64,
    pub settings: SolverSettings,
}

impl ShootingProblem {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParam {
                name: "horizon",
                value: 0.0,
                reason: "need at least one step",
            });
        }
        if self.substeps == 0 {
            return Err(Error::InvalidParam {
                name: "substeps",
                value: 0.0,
                reason: "need at least one sub-step",
            });
        }
        let positive = [
            ("dt", self.dt),
            ("delta_max", self.delta_max),
            ("ddelta_max", self.ddelta_max),
            ("speed", self.speed),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParam {
                    name,
                    value,
                    reason: "must be finite and positive",
                });
            }
        }
        let w = self.weights;
        for (name, value) in [("w_n", w.w_n), ("w_psi", w.w_psi), ("w_u", w.w_u), ("w_du", w.w_du), ("w_s", w.w_s)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::InvalidParam {
                    name,
                    value,
                    reason: "weights must be non-negative",
                });
            }
        }
        if !self.kappa_ref.is_finite() || !self.lane_half_width.is_finite() {
            return Err(Error::NonFinite("reference"));
        }
        if self.model == ModelKind::Leaning {
            return Err(Error::Domain("shooting rollout supports the kinematic and dynamic models".into()));
        }
        if self.policy.kind() == crate::tightening::PolicyKind::Adaptive && self.estimator.is_none() {
            return Err(Error::Usage("adaptive tightening needs estimator state"));
        }
        self.policy.validate()
    }

    /// Box bound on every steering increment.
    pub fn increment_bound(&self) -> f64 {
        self.ddelta_max * self.dt
    }
}

/// States and tightening inputs produced by one roll-out.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rollout {
    /// `x_0 ..= x_N`.
    pub states: Vec<DynState>,
    /// Speed read by the tightening at each state.
    pub speeds: Vec<f64>,
    /// Curvature read by the tightening at each state.
    pub curvatures: Vec<f64>,
    /// Signed cross-track error, outward positive.
    pub crosstrack: Vec<f64>,
    /// Applied tightening per state.
    pub epsilon: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShootingSolution {
    pub steer: Vec<f64>,
    pub rollout: Rollout,
    pub cost: f64,
    pub iterations: usize,
    /// Projected gradient below tolerance, or no decrease left above rounding level.
    pub converged: bool,
    /// Final projected-gradient infinity norm.
    pub projected_gradient: f64,
    /// Costs of the accepted iterates, starting with the initial guess.
    pub cost_history: Vec<f64>,
}

fn to_vec(s: &DynState) -> State5 {
    State5::new(s.x, s.y, s.psi, s.v_y, s.r)
}

fn from_vec(v: &State5) -> DynState {
    DynState {
        x: v[0],
        y: v[1],
        psi: v[2],
        v_y: v[3],
        r: v[4],
    }
}

/// Continuous-time rate and its Jacobians `(f, df/dx, df/ddelta)` on the 5-state.
fn rate_and_jacobian(model: ModelKind, p: &VehicleParams, v: f64, x: &State5, delta: f64) -> Result<(State5, Jac5, State5)> {
    let (sin, cos) = x[2].sin_cos();
    let mut a = Jac5::zeros();
    let mut b = State5::zeros();
    match model {
        ModelKind::Kinematic => {
            let l = p.wheelbase();
            let f = State5::new(v * cos, v * sin, v * delta.tan() / l, 0.0, 0.0);
            a[(0, 2)] = -v * sin;
            a[(1, 2)] = v * cos;
            b[2] = v / (l * delta.cos().powi(2));
            Ok((f, a, b))
        }
        ModelKind::Dynamic => {
            let d = dyn_derivative(&from_vec(x), v, delta, p)?;
            let (vy, r) = (x[3], x[4]);
            let (lf, lr) = (p.dist_front, p.dist_rear);
            let (cf, cr) = (p.stiffness_front, p.stiffness_rear);
            let af = (vy + lf * r) / v;
            let ar = (vy - lr * r) / v;
            let gf = 1.0 / (v * (1.0 + af * af));
            let gr = 1.0 / (v * (1.0 + ar * ar));
            // d alpha / d(v_y, r)
            let (dfa_vy, dfa_r) = (-gf, -lf * gf);
            let (dra_vy, dra_r) = (-gr, lr * gr);
            a[(0, 2)] = -v * sin - vy * cos;
            a[(0, 3)] = -sin;
            a[(1, 2)] = v * cos - vy * sin;
            a[(1, 3)] = cos;
            a[(2, 4)] = 1.0;
            a[(3, 3)] = (cf * dfa_vy + cr * dra_vy) / p.mass;
            a[(3, 4)] = (cf * dfa_r + cr * dra_r) / p.mass - v;
            a[(4, 3)] = (lf * cf * dfa_vy - lr * cr * dra_vy) / p.yaw_inertia;
            a[(4, 4)] = (lf * cf * dfa_r - lr * cr * dra_r) / p.yaw_inertia;
            b[3] = cf / p.mass;
            b[4] = lf * cf / p.yaw_inertia;
            Ok((to_vec(&d), a, b))
        }
        ModelKind::Leaning => Err(Error::Domain("no shooting rollout for the leaning model".into())),
    }
}

/// One RK4 step with its state and input sensitivities.
fn rk4_with_sensitivity(
    model: ModelKind,
    p: &VehicleParams,
    v: f64,
    x: &State5,
    delta: f64,
    h: f64,
) -> Result<(State5, Jac5, State5)> {
    let eye = Jac5::identity();
    let (k1, a1, b1) = rate_and_jacobian(model, p, v, x, delta)?;
    let (dk1x, dk1u) = (a1, b1);

    let x2 = x + k1 * (0.5 * h);
    let (k2, a2, b2) = rate_and_jacobian(model, p, v, &x2, delta)?;
    let dk2x = a2 * (eye + dk1x * (0.5 * h));
    let dk2u = a2 * (dk1u * (0.5 * h)) + b2;

    let x3 = x + k2 * (0.5 * h);
    let (k3, a3, b3) = rate_and_jacobian(model, p, v, &x3, delta)?;
    let dk3x = a3 * (eye + dk2x * (0.5 * h));
    let dk3u = a3 * (dk2u * (0.5 * h)) + b3;

    let x4 = x + k3 * h;
    let (k4, a4, b4) = rate_and_jacobian(model, p, v, &x4, delta)?;
    let dk4x = a4 * (eye + dk3x * h);
    let dk4u = a4 * (dk3u * h) + b4;

    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    let phi = eye + (dk1x + dk2x * 2.0 + dk3x * 2.0 + dk4x) * (h / 6.0);
    let gamma = (dk1u + dk2u * 2.0 + dk3u * 2.0 + dk4u) * (h / 6.0);
    if !next.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("shooting rollout"));
    }
    Ok((next, phi, gamma))
}

fn wrap_angle(a: f64) -> f64 {
    let mut w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Internal roll-out with everything needed for residuals and Jacobians.
struct Expansion {
    rollout: Rollout,
    /// `dx_k / d delta_j` for `j < k`, stored as `sens[k][j]`.
    sens: Vec<Vec<State5>>,
    /// `d eps_k / d delta_k` style derivative: eps at state k depends on this command index.
    eps_input: Vec<Option<(usize, f64)>>,
}

fn curvature_index(k: usize, n: usize) -> usize {
    k.min(n - 1)
}

/// `(v, kappa, eps, optional (steer index, d eps / d delta))` at stage `k`.
type Tightening = (f64, f64, f64, Option<(usize, f64)>);

fn tightening_at(problem: &ShootingProblem, steer: &[f64], k: usize) -> Result<Tightening> {
    let n = problem.horizon;
    let v = problem.speed;
    let l = problem.params.wheelbase();
    let (kappa, dkappa) = match problem.curvature_source {
        CurvatureSource::Reference => (problem.kappa_ref, None),
        CurvatureSource::Commanded => {
            let j = curvature_index(k, n);
            let d = steer[j];
            (d.tan() / l, Some((j, 1.0 / (l * d.cos().powi(2)))))
        }
    };
    let eps = epsilon(&problem.policy, v, kappa, problem.estimator.as_ref())?;
    let load_coeff = match problem.policy {
        TighteningPolicy::Mact { a2 } => a2,
        TighteningPolicy::Adaptive { .. } => problem.estimator.map_or(0.0, |e| e.a2_hat),
        _ => 0.0,
    };
    let deps = dkappa.map(|(j, dk)| {
        let sign = if kappa > 0.0 {
            1.0
        } else if kappa < 0.0 {
            -1.0
        } else {
            0.0
        };
        (j, load_coeff * v * v * sign * dk)
    });
    Ok((v, kappa, eps, deps))
}

fn expand(problem: &ShootingProblem, steer: &[f64], with_sensitivity: bool) -> Result<Expansion> {
    let n = problem.horizon;
    if steer.len() != n {
        return Err(Error::Domain(format!("steer sequence has {} entries, horizon is {n}", steer.len())));
    }
    if steer.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("steer sequence"));
    }
    let h = problem.dt / problem.substeps as f64;
    let mut x = to_vec(&problem.initial);
    let mut xs = vec![x];
    let mut sens: Vec<Vec<State5>> = vec![Vec::new()];
    for (k, &delta) in steer.iter().enumerate() {
        let mut phi_total = Jac5::identity();
        let mut gamma_total = State5::zeros();
        for _ in 0..problem.substeps {
            let (next, phi, gamma) = rk4_with_sensitivity(problem.model, &problem.params, problem.speed, &x, delta, h)?;
            if with_sensitivity {
                gamma_total = phi * gamma_total + gamma;
                phi_total = phi * phi_total;
            }
            x = next;
        }
        xs.push(x);
        if with_sensitivity {
            let prev = &sens[k];
            let mut row: Vec<State5> = prev.iter().map(|s| phi_total * s).collect();
            row.push(gamma_total);
            debug_assert_eq!(row.len(), k + 1);
            sens.push(row);
        }
    }
    let mut rollout = Rollout {
        states: Vec::with_capacity(n + 1),
        speeds: Vec::with_capacity(n + 1),
        curvatures: Vec::with_capacity(n + 1),
        crosstrack: Vec::with_capacity(n + 1),
        epsilon: Vec::with_capacity(n + 1),
    };
    let mut eps_input = Vec::with_capacity(n + 1);
    for (k, xv) in xs.iter().enumerate() {
        let s = from_vec(xv);
        let (v, kappa, eps, deps) = tightening_at(problem, steer, k)?;
        rollout.crosstrack.push(signed_offset(s.x, s.y, problem.kappa_ref));
        rollout.states.push(s);
        rollout.speeds.push(v);
        rollout.curvatures.push(kappa);
        rollout.epsilon.push(eps);
        eps_input.push(deps);
    }
    Ok(Expansion { rollout, sens, eps_input })
}

/// Rolls `steer` out from the problem's initial state.
pub fn rollout(problem: &ShootingProblem, steer: &[f64]) -> Result<Rollout> {
    Ok(expand(problem, steer, false)?.rollout)
}

/// Weighted residual vector and, optionally, its Jacobian with respect to the steer sequence.
fn residuals(problem: &ShootingProblem, steer: &[f64], jacobian: bool) -> Result<(DVector<f64>, Option<DMatrix<f64>>, Rollout)> {
    let n = problem.horizon;
    let ex = expand(problem, steer, jacobian)?;
    let w = problem.weights;
    let (sn, spsi, ss, su, sdu) = (w.w_n.sqrt(), w.w_psi.sqrt(), w.w_s.sqrt(), w.w_u.sqrt(), w.w_du.sqrt());
    let rows = 3 * (n + 1) + 2 * n;
    let mut r = DVector::zeros(rows);
    let mut jac = jacobian.then(|| DMatrix::zeros(rows, n));
    let kappa = problem.kappa_ref;

    for k in 0..=n {
        let s = &ex.rollout.states[k];
        let nk = ex.rollout.crosstrack[k];
        let psi_ref = reference_heading(s.x, s.y, kappa);
        let heading_err = wrap_angle(s.psi - psi_ref);
        let bound = problem.lane_half_width - ex.rollout.epsilon[k];
        let slack = (nk.abs() - bound).max(0.0);
        let (row_n, row_psi, row_s) = (3 * k, 3 * k + 1, 3 * k + 2);
        r[row_n] = sn * nk;
        r[row_psi] = spsi * heading_err;
        r[row_s] = ss * slack;

        if let Some(j) = jac.as_mut() {
            // Gradients of n and psi_ref with respect to (x, y).
            let (dn, dref) = if kappa == 0.0 {
                ([0.0, -1.0], [0.0, 0.0])
            } else {
                let radius = 1.0 / kappa;
                let (dx, dy) = (s.x, s.y - radius);
                let dist = (dx * dx + dy * dy).sqrt();
                let q = dx * dx + dy * dy;
                // Same expression for atan2(x, R - y) and -atan2(x, y - R).
                ([dx / dist, dy / dist], [-dy / q, dx / q])
            };
            let sign_n = if nk > 0.0 {
                1.0
            } else if nk < 0.0 {
                -1.0
            } else {
                0.0
            };
            let active = slack > 0.0;
            for (col, sv) in ex.sens[k].iter().enumerate() {
                let dn_d = dn[0] * sv[0] + dn[1] * sv[1];
                let dpsi_d = sv[2] - (dref[0] * sv[0] + dref[1] * sv[1]);
                j[(row_n, col)] = sn * dn_d;
                j[(row_psi, col)] = spsi * dpsi_d;
                if active {
                    j[(row_s, col)] = ss * sign_n * dn_d;
                }
            }
            if active {
                if let Some((col, deps)) = ex.eps_input[k] {
                    j[(row_s, col)] += ss * deps;
                }
            }
        }
    }
    let base = 3 * (n + 1);
    for k in 0..n {
        let prev = if k == 0 { problem.prev_steer } else { steer[k - 1] };
        r[base + 2 * k] = su * steer[k];
        r[base + 2 * k + 1] = sdu * (steer[k] - prev);
        if let Some(j) = jac.as_mut() {
            j[(base + 2 * k, k)] = su;
            j[(base + 2 * k + 1, k)] = sdu;
            if k > 0 {
                j[(base + 2 * k + 1, k - 1)] = -sdu;
            }
        }
    }
    Ok((r, jac, ex.rollout))
}

/// Closed-loop stage cost summed over the horizon, with the slack substituted.
pub fn cost(problem: &ShootingProblem, steer: &[f64]) -> Result<f64> {
    let (r, _, _) = residuals(problem, steer, false)?;
    Ok(r.norm_squared())
}

/// Cost and its gradient with respect to the steer sequence.
pub fn cost_gradient(problem: &ShootingProblem, steer: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (r, j, _) = residuals(problem, steer, true)?;
    let j = j.expect("jacobian requested");
    let g = j.transpose() * &r * 2.0;
    Ok((r.norm_squared(), g.iter().copied().collect()))
}

/// Steer sequence from increments, clamped to `±delta_max`, and the chain-rule
/// mask `d delta_k / d z_j` (1 when no clamp is active between j and k).
fn accumulate(problem: &ShootingProblem, z: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let mut steer = Vec::with_capacity(z.len());
    let mut free = Vec::with_capacity(z.len());
    let mut prev = problem.prev_steer;
    for &dz in z {
        let raw = prev + dz;
        let clamped = raw.clamp(-problem.delta_max, problem.delta_max);
        free.push(clamped == raw);
        steer.push(clamped);
        prev = clamped;
    }
    (steer, free)
}

/// Increments reproducing `steer` as closely as the boxes allow.
pub fn increments_from_steer(problem: &ShootingProblem, steer: &[f64]) -> Vec<f64> {
    let bound = problem.increment_bound();
    let mut prev = problem.prev_steer;
    steer
        .iter()
        .map(|&d| {
            let target = d.clamp(-problem.delta_max, problem.delta_max);
            let dz = (target - prev).clamp(-bound, bound);
            prev = (prev + dz).clamp(-problem.delta_max, problem.delta_max);
            dz
        })
        .collect()
}

/// Increment-space Jacobian `J_z = J_delta * D` with `D[k][j] = d delta_k / d z_j`.
fn chain_to_increments(j_delta: &DMatrix<f64>, free: &[bool]) -> DMatrix<f64> {
    let n = free.len();
    let mut j_z = DMatrix::zeros(j_delta.nrows(), n);
    for jcol in 0..n {
        // delta_k depends on z_j for k >= j while every clamp in j..=k is inactive.
        for k in (jcol..n).take_while(|&k| free[k]) {
            j_z.column_mut(jcol).axpy(1.0, &j_delta.column(k), 1.0);
        }
    }
    j_z
}

fn projected_gradient_norm(z: &[f64], g: &DVector<f64>, bound: f64) -> f64 {
    z.iter()
        .zip(g.iter())
        .map(|(&zi, &gi)| ((zi - gi).clamp(-bound, bound) - zi).abs())
        .fold(0.0, f64::max)
}

/// Minimizes the Gauss-Newton model `q(p) = ½ p'Hp + ½ g'p` subject to `z + p`
/// staying in the box, by projected Newton iterations on the quadratic (`g` is the
/// gradient of the sum of squares, so the model gradient at `p = 0` is `g / 2`).
fn box_qp_step(hessian: &DMatrix<f64>, g: &DVector<f64>, z: &[f64], bound: f64) -> Vec<f64> {
    let n = z.len();
    let lower: Vec<f64> = z.iter().map(|zi| -bound - zi).collect();
    let upper: Vec<f64> = z.iter().map(|zi| bound - zi).collect();
    let model = |p: &DVector<f64>| 0.5 * p.dot(&(hessian * p)) + 0.5 * g.dot(p);
    let mut p = DVector::zeros(n);
    let mut q = 0.0;
    for _ in 0..50 {
        let grad = hessian * &p + g * 0.5;
        let tol = 1e-13;
        let free: Vec<usize> = (0..n)
            .filter(|&i| !((p[i] <= lower[i] + tol && grad[i] > 0.0) || (p[i] >= upper[i] - tol && grad[i] < 0.0)))
            .collect();
        if free.is_empty() {
            break;
        }
        let m = free.len();
        let reduced = DMatrix::from_fn(m, m, |a, b| hessian[(free[a], free[b])]);
        let rhs = DVector::from_fn(m, |a, _| -grad[free[a]]);
        let Some(chol) = reduced.cholesky() else {
            break;
        };
        let d = chol.solve(&rhs);
        let mut newton = DVector::zeros(n);
        for (a, &i) in free.iter().enumerate() {
            newton[i] = d[a];
        }
        let project = |trial: DVector<f64>| DVector::from_fn(n, |i, _| trial[i].clamp(lower[i], upper[i]));
        let mut moved = false;
        // Newton on the free face first, then a projected steepest-descent step.
        let curvature = grad.dot(&(hessian * &grad));
        let cauchy = if curvature > 0.0 { grad.norm_squared() / curvature } else { 1.0 };
        for (direction, start) in [(newton, 1.0), (-grad.clone(), cauchy)] {
            let mut alpha = start;
            while alpha > 1e-14 * start.max(1.0) {
                let trial = project(&p + &direction * alpha);
                let tq = model(&trial);
                let decrease = grad.dot(&(&trial - &p));
                if decrease < 0.0 && tq <= q + 1e-4 * decrease {
                    p = trial;
                    q = tq;
                    moved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if moved {
                break;
            }
        }
        if !moved {
            break;
        }
    }
    p.iter().copied().collect()
}

const STAGNATION: f64 = 1e-12;

/// Solves the tightened shooting problem, optionally warm-started from a steer sequence.
pub fn solve(problem: &ShootingProblem, warm_start: Option<&[f64]>) -> Result<ShootingSolution> {
    problem.validate()?;
    let n = problem.horizon;
    let bound = problem.increment_bound();
    let mut z: Vec<f64> = match warm_start {
        Some(ws) if ws.len() == n => increments_from_steer(problem, ws),
        Some(ws) => {
            return Err(Error::Domain(format!("warm start has {} entries, horizon is {n}", ws.len())));
        }
        None => vec![0.0; n],
    };

    let (steer, free) = accumulate(problem, &z);
    let (mut r, j, _) = residuals(problem, &steer, true)?;
    let mut j_z = chain_to_increments(&j.expect("jacobian"), &free);
    let mut f = r.norm_squared();
    let mut g = j_z.transpose() * &r * 2.0;
    let mut history = vec![f];
    let mut iterations = 0;
    let mut pg = projected_gradient_norm(&z, &g, bound);
    let mut damping = 1e-9;
    let mut stagnated = false;

    while pg >= problem.settings.tolerance && iterations < problem.settings.max_iterations {
        iterations += 1;
        let mut hessian = j_z.transpose() * &j_z;
        for i in 0..n {
            hessian[(i, i)] += damping * (1.0 + hessian[(i, i)]);
        }
        let step = box_qp_step(&hessian, &g, &z, bound);
        // Predicted first-order decrease at the level of the cost's rounding error:
        // the remaining gradient sits in directions too stiff to resolve further.
        let predicted: f64 = -step.iter().zip(g.iter()).map(|(p, gi)| p * gi).sum::<f64>();
        if damping <= 1e-6 && predicted <= STAGNATION * f {
            stagnated = true;
            break;
        }

        let gmax = g.amax();
        let steepest: Vec<f64> = g.iter().map(|gi| -gi).collect();
        let steepest_start = if gmax > 0.0 { 2.0 * bound / gmax } else { 0.0 };
        let mut accepted = None;
        for (direction, start) in [(&step, 1.0), (&steepest, steepest_start)] {
            let mut alpha = start;
            while alpha > 1e-10 * start {
                let trial: Vec<f64> = z
                    .iter()
                    .zip(direction)
                    .map(|(&zi, &di)| (zi + alpha * di).clamp(-bound, bound))
                    .collect();
                let decrease: f64 = trial.iter().zip(&z).zip(g.iter()).map(|((t, zi), gi)| gi * (t - zi)).sum();
                if decrease < 0.0 {
                    let (trial_steer, _) = accumulate(problem, &trial);
                    if let Ok(tf) = cost(problem, &trial_steer) {
                        if tf <= f + 1e-4 * decrease {
                            accepted = Some((trial, tf, alpha / start));
                            break;
                        }
                    }
                }
                alpha *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }

        let Some((trial, tf, alpha)) = accepted else {
            if damping < 1e6 {
                damping = (damping * 100.0).max(1e-6);
                continue;
            }
            break;
        };
        if alpha == 1.0 {
            damping = (damping * 0.1).max(1e-12);
        }
        z = trial;
        f = tf;
        history.push(f);
        let (steer, free) = accumulate(problem, &z);
        let (nr, nj, _) = residuals(problem, &steer, true)?;
        r = nr;
        j_z = chain_to_increments(&nj.expect("jacobian"), &free);
        g = j_z.transpose() * &r * 2.0;
        pg = projected_gradient_norm(&z, &g, bound);
    }

    let (steer, _) = accumulate(problem, &z);
    let rollout = rollout(problem, &steer)?;
    Ok(ShootingSolution {
        steer,
        rollout,
        cost: f,
        iterations,
        converged: pg < problem.settings.tolerance || stagnated,
        projected_gradient: pg,
        cost_history: history,
    })
}

#[cfg(test)]
mod tests {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    use super::*;

    pub(crate) fn problem(kappa: f64, model: ModelKind) -> ShootingProblem {
        ShootingProblem {
            horizon: 20,
            dt: 0.05,
            substeps: 1,
            speed: 15.0,
            kappa_ref: kappa,
            weights: CostWeights::default(),
            delta_max: 0.35,
            ddelta_max: 1.5,
            lane_half_width: 0.16,
            policy: TighteningPolicy::None,
            estimator: None,
            curvature_source: CurvatureSource::Commanded,
            model,
            params: VehicleParams::default(),
            initial: DynState::default(),
            prev_steer: 0.0,
            settings: SolverSettings::default(),
        }
    }

    #[test]
    fn straight_zero_steer_rollout_keeps_offset() {
        let mut p = problem(0.0, ModelKind::Kinematic);
        p.initial.y = -0.05;
        let ro = rollout(&p, &[0.0; 20]).unwrap();
        assert!(ro.crosstrack.iter().all(|&n| n == 0.05));
        p.initial.y = 0.0;
        assert_eq!(cost(&p, &[0.0; 20]).unwrap(), 0.0);
    }

    #[test]
    fn kinematic_arc_rollout_stays_on_arc() {
        let p = problem(0.012, ModelKind::Kinematic);
        let delta = (p.params.wheelbase() * 0.012).atan();
        let ro = rollout(&p, &[delta; 20]).unwrap();
        assert!(ro.crosstrack.iter().all(|n| n.abs() < 1e-9));
    }

    #[test]
    fn dynamic_rollout_drifts_outward_above_vc() {
        let p = problem(0.015, ModelKind::Dynamic);
        let delta = (p.params.wheelbase() * 0.015).atan();
        let ro = rollout(&p, &[delta; 20]).unwrap();
        assert!(ro.crosstrack.last().unwrap() > &0.3);
    }

    #[test]
    fn inactive_corridor_adds_nothing() {
        let mut p = problem(0.0, ModelKind::Kinematic);
        p.initial.y = -0.05;
        let steer = [0.0; 20];
        let base = cost(&p, &steer).unwrap();
        p.weights.w_s = 1e6;
        assert_eq!(cost(&p, &steer).unwrap(), base);
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-15);
        assert!((wrap_angle(2.0 * PI + 0.1) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn straight_lane_solution_is_trivial() {
        let p = problem(0.0, ModelKind::Dynamic);
        let sol = solve(&p, None).unwrap();
        assert!(sol.converged);
        assert!(sol.steer.iter().all(|d| d.abs() < 1e-9));
        assert!(sol.cost < 1e-12);
    }

    fn fd_gradient(p: &ShootingProblem, steer: &[f64], h: f64) -> Vec<f64> {
        (0..steer.len())
            .map(|i| {
                let mut plus = steer.to_vec();
                let mut minus = steer.to_vec();
                plus[i] += h;
                minus[i] -= h;
                (cost(p, &plus).unwrap() - cost(p, &minus).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = StdRng::seed_from_u64(7);
        let mut checked = 0;
        while checked < 20 {
            let model = if checked % 2 == 0 { ModelKind::Dynamic } else { ModelKind::Kinematic };
            let kappa = [0.012, -0.01, 0.0][checked % 3];
            let mut p = problem(kappa, model);
            p.policy = TighteningPolicy::Mact { a2: 0.05 };
            p.curvature_source = if checked % 4 < 2 { CurvatureSource::Commanded } else { CurvatureSource::Reference };
            p.initial = DynState { y: rng.random_range(-0.15..0.15), v_y: rng.random_range(-0.2..0.2), r: rng.random_range(-0.05..0.05), ..DynState::default() };
            p.prev_steer = rng.random_range(-0.05..0.05);
            let center = (p.params.wheelbase() * kappa).atan();
            let steer: Vec<f64> = (0..p.horizon).map(|_| center + rng.random_range(-0.02..0.02)).collect();
            let ro = rollout(&p, &steer).unwrap();
            // Skip draws that sit on the |n| or max(0, .) kinks.
            let near_kink = ro.crosstrack.iter().zip(&ro.epsilon).skip(1).any(|(n, e)| {
                n.abs() < 1e-4 || (n.abs() - (p.lane_half_width - e)).abs() < 1e-4
            });
            if near_kink {
                continue;
            }
            let (_, g) = cost_gradient(&p, &steer).unwrap();
            let fd = fd_gradient(&p, &steer, 1e-6);
            let scale = g.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-8);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() / scale < 1e-5, "analytic {a} vs numeric {b} (scale {scale})");
            }
            checked += 1;
        }
    }

    #[test]
    fn arc_tracking_on_the_planner_model() {
        let p = problem(0.012, ModelKind::Kinematic);
        let sol = solve(&p, None).unwrap();
        assert!(sol.rollout.crosstrack.last().unwrap().abs() < 0.01);
        let kin_steer = (p.params.wheelbase() * 0.012).atan();
        assert!((sol.steer.last().unwrap() - kin_steer).abs() < 0.01);
    }

    #[test]
    fn boxes_hold_and_cost_descends() {
        let mut p = problem(0.015, ModelKind::Dynamic);
        p.initial.y = -0.12;
        p.speed = 17.0;
        let sol = solve(&p, None).unwrap();
        let mut prev = p.prev_steer;
        for &d in &sol.steer {
            assert!(d.abs() <= p.delta_max);
            assert!((d - prev).abs() <= p.ddelta_max * p.dt + 1e-15);
            prev = d;
        }
        assert!(sol.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn tight_corridor_pushes_inward() {
        let mut p = problem_with_offset(-0.1);
        p.curvature_source = CurvatureSource::Reference;
        // eps ~ 0.135 m, so the tightened bound 0.025 m is inside |n_0| = 0.1 m.
        p.policy = TighteningPolicy::Mact { a2: 0.05 };
        let sol = solve(&p, None).unwrap();
        let untightened = solve(&problem_with_offset(-0.1), None).unwrap();
        let sum = |s: &ShootingSolution| s.rollout.crosstrack.iter().sum::<f64>();
        assert!(sum(&sol) < sum(&untightened));
        let expected = epsilon(&p.policy, p.speed, p.kappa_ref, None).unwrap();
        assert!(sol.rollout.epsilon.iter().all(|&e| e == expected));
    }

    #[test]
    fn commanded_margins_recompute_exactly() {
        let mut p = problem_with_offset(-0.1);
        p.policy = TighteningPolicy::Mact { a2: 0.05 };
        let sol = solve(&p, None).unwrap();
        for (k, eps) in sol.rollout.epsilon.iter().enumerate() {
            let j = k.min(p.horizon - 1);
            let kappa = sol.steer[j].tan() / p.params.wheelbase();
            assert_eq!(*eps, epsilon(&p.policy, p.speed, kappa, None).unwrap());
            assert_eq!(sol.rollout.curvatures[k], kappa);
        }
    }

    fn problem_with_offset(y: f64) -> ShootingProblem {
        let mut p = problem(0.012, ModelKind::Dynamic);
        p.initial.y = y;
        p
    }

    #[test]
    fn none_and_zero_coefficient_mact_are_identical() {
        let mut a = problem_with_offset(-0.1);
        a.policy = TighteningPolicy::None;
        let mut b = a.clone();
        b.policy = TighteningPolicy::Mact { a2: 0.0 };
        let (sa, sb) = (solve(&a, None).unwrap(), solve(&b, None).unwrap());
        assert_eq!(sa.steer, sb.steer);
        assert_eq!(sa.cost, sb.cost);
    }

    #[test]
    fn warm_start_from_solution_is_a_fixed_point() {
        let p = problem_with_offset(-0.08);
        let first = solve(&p, None).unwrap();
        assert!(first.converged, "pg {} it {} {:?}", first.projected_gradient, first.iterations, first.cost_history);
        let again = solve(&p, Some(&first.steer)).unwrap();
        assert!(again.iterations <= 2, "{} iterations", again.iterations);
    }

    #[test]
    fn rejects_bad_problems() {
        let mut p = problem(0.0, ModelKind::Kinematic);
        p.horizon = 0;
        assert!(solve(&p, None).is_err());
        let mut p = problem(0.0, ModelKind::Kinematic);
        p.policy = TighteningPolicy::Adaptive { ema_alpha: 0.1, warmup: 0.5 };
        assert!(matches!(solve(&p, None), Err(Error::Usage(_))));
        let p = problem(0.0, ModelKind::Leaning);
        assert!(solve(&p, None).is_err());
        let p = problem(0.0, ModelKind::Kinematic);
        assert!(solve(&p, Some(&[0.0; 3])).is_err());
    }
}
