//! Fixed-step classical Runge-Kutta integration and trajectory sampling.

use serde::Serialize;

use crate::error::{Error, Result};

/// A state that can be advanced by an explicit integrator.
pub trait StateVector: Copy {
    /// `self + scale * rate`
    fn axpy(&self, scale: f64, rate: &Self) -> Self;
    fn is_finite(&self) -> bool;
}

impl StateVector for f64 {
    fn axpy(&self, scale: f64, rate: &Self) -> Self {
        self + scale * rate
    }

    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

impl<const N: usize> StateVector for nalgebra::SVector<f64, N> {
    fn axpy(&self, scale: f64, rate: &Self) -> Self {
        self + rate * scale
    }

    fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

/// Continuous-time dynamics `ds/dt = f(s, u)`.
pub trait Dynamics {
    type State: StateVector;
    type Input: Copy;

    fn derivative(&self, state: &Self::State, input: Self::Input) -> Result<Self::State>;
}

/// One classical RK4 step with the input held constant over the step.
pub fn rk4_step<S, F>(state: &S, dt: f64, mut rate: F) -> Result<S>
where
    S: StateVector,
    F: FnMut(&S) -> Result<S>,
{
    if !(dt > 0.0) {
        return Err(Error::InvalidParam {
            name: "dt",
            value: dt,
            reason: "step must be positive",
        });
    }
    let half = 0.5 * dt;
    let k1 = rate(state)?;
    let s2 = state.axpy(half, &k1);
    let k2 = rate(&s2)?;
    let s3 = state.axpy(half, &k2);
    let k3 = rate(&s3)?;
    let s4 = state.axpy(dt, &k3);
    let k4 = rate(&s4)?;
    let next = state
        .axpy(dt / 6.0, &k1)
        .axpy(dt / 3.0, &k2)
        .axpy(dt / 3.0, &k3)
        .axpy(dt / 6.0, &k4);
    for s in [&k1, &k2, &k3, &k4, &next] {
        if !s.is_finite() {
            return Err(Error::NonFinite("rk4 stage"));
        }
    }
    Ok(next)
}

/// Time-indexed samples of a simulated state, `states[i]` at `times[i] = i * dt`.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory<S> {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<S>,
}

impl<S> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> Option<&S> {
        self.states.last()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &S)> {
        self.times.iter().copied().zip(self.states.iter())
    }
}

/// Number of RK4 steps that fit in `horizon` (tolerant to `1.5 / 0.01` style rounding).
pub fn step_count(horizon: f64, dt: f64) -> usize {
    (horizon / dt + 1e-9).floor() as usize
}

/// Integrates `model` from `initial` for `horizon` seconds at fixed step `dt`.
///
/// `inputs(t, state)` is sampled at the start of each step and held for its
/// duration. The result holds `floor(horizon / dt) + 1` samples including t = 0.
pub fn simulate<M, F>(
    model: &M,
    initial: M::State,
    mut inputs: F,
    dt: f64,
    horizon: f64,
) -> Result<Trajectory<M::State>>
where
    M: Dynamics,
    F: FnMut(f64, &M::State) -> M::Input,
{
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParam {
            name: "dt",
            value: dt,
            reason: "step must be positive",
        });
    }
    if !(horizon >= dt) {
        return Err(Error::InvalidParam {
            name: "horizon",
            value: horizon,
            reason: "horizon must be at least one step",
        });
    }
    if !initial.is_finite() {
        return Err(Error::NonFinite("initial state"));
    }
    let steps = step_count(horizon, dt);
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(initial);
    let mut state = initial;
    for step in 0..steps {
        let t = step as f64 * dt;
        let u = inputs(t, &state);
        state = rk4_step(&state, dt, |s| model.derivative(s, u)).map_err(|e| match e {
            Error::NonFinite(_) => Error::NonFiniteStep { step },
            other => other,
        })?;
        times.push((step + 1) as f64 * dt);
        states.push(state);
    }
    Ok(Trajectory { dt, times, states })
}
