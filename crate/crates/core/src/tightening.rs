//! Constraint-tightening policies: none, fixed, tube, online-adaptive and MACT.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regressor values below this carry no information for the adaptive estimate.
pub const MIN_REGRESSOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    None,
    Fixed,
    Tube,
    Adaptive,
    Mact,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::None,
        PolicyKind::Fixed,
        PolicyKind::Tube,
        PolicyKind::Adaptive,
        PolicyKind::Mact,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::None => "none",
            PolicyKind::Fixed => "fixed",
            PolicyKind::Tube => "tube",
            PolicyKind::Adaptive => "adaptive",
            PolicyKind::Mact => "mact",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown policy `{s}` (expected none, fixed, tube, adaptive or mact)"))
    }
}

/// A margin policy together with its coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TighteningPolicy {
    None,
    Fixed {
        margin: f64,
    },
    /// Constant worst-case margin `a2 v_max² kappa_max`.
    Tube {
        a2: f64,
        v_max: f64,
        kappa_max: f64,
    },
    /// `a2_hat(t) v² |kappa|` with an EMA estimate of `a2`.
    Adaptive {
        ema_alpha: f64,
        warmup: f64,
    },
    /// `a2 v² |kappa|`.
    Mact {
        a2: f64,
    },
}

impl TighteningPolicy {
    pub fn kind(&self) -> PolicyKind {
        match self {
            TighteningPolicy::None => PolicyKind::None,
            TighteningPolicy::Fixed { .. } => PolicyKind::Fixed,
            TighteningPolicy::Tube { .. } => PolicyKind::Tube,
            TighteningPolicy::Adaptive { .. } => PolicyKind::Adaptive,
            TighteningPolicy::Mact { .. } => PolicyKind::Mact,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let non_negative = |name: &'static str, value: f64| {
            if value.is_finite() && value >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParam {
                    name,
                    value,
                    reason: "must be finite and non-negative",
                })
            }
        };
        match *self {
            TighteningPolicy::None => Ok(()),
            TighteningPolicy::Fixed { margin } => non_negative("fixed_margin", margin),
            TighteningPolicy::Tube { a2, v_max, kappa_max } => {
                non_negative("a2", a2)?;
                non_negative("v_max", v_max)?;
                non_negative("kappa_max", kappa_max)
            }
            TighteningPolicy::Adaptive { ema_alpha, warmup } => {
                if !(ema_alpha > 0.0 && ema_alpha <= 1.0) {
                    return Err(Error::InvalidParam {
                        name: "ema_alpha",
                        value: ema_alpha,
                        reason: "must lie in (0, 1]",
                    });
                }
                non_negative("warmup", warmup)
            }
            TighteningPolicy::Mact { a2 } => non_negative("a2", a2),
        }
    }
}

/// Online state of the adaptive baseline, threaded through one scenario.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct AdaptiveEstimatorState {
    pub a2_hat: f64,
    /// Time since scenario start [s].
    pub elapsed: f64,
    /// Running maximum of |n| observed after the warmup window [m].
    pub peak_abs_crosstrack_seen: f64,
}

/// Margin [m] the policy applies at speed `v` and curvature `kappa`.
pub fn epsilon(
    policy: &TighteningPolicy,
    v: f64,
    kappa: f64,
    estimator: Option<&AdaptiveEstimatorState>,
) -> Result<f64> {
    if !(v >= 0.0) {
        return Err(Error::Domain(format!("speed must be >= 0, got {v}")));
    }
    let load = v * v * kappa.abs();
    let eps = match *policy {
        TighteningPolicy::None => 0.0,
        TighteningPolicy::Fixed { margin } => margin,
        TighteningPolicy::Tube { a2, v_max, kappa_max } => a2 * v_max * v_max * kappa_max.abs(),
        TighteningPolicy::Adaptive { .. } => {
            let est = estimator.ok_or(Error::Usage("adaptive tightening needs estimator state"))?;
            est.a2_hat * load
        }
        TighteningPolicy::Mact { a2 } => a2 * load,
    };
    Ok(eps.max(0.0))
}

/// Advances the adaptive estimate by one control period.
///
/// `observed_crosstrack` summarizes the period that just ended. Periods that start
/// inside the warmup window are discarded together with the entry transient; after
/// that the running peak of |n| is tracked and `raw = peak / (v² |kappa|)` is blended
/// in with weight `ema_alpha` per call. Updates with a vanishing regressor are skipped.
pub fn adaptive_update(
    policy: &TighteningPolicy,
    estimator: &AdaptiveEstimatorState,
    observed_crosstrack: f64,
    v: f64,
    kappa: f64,
    dt_ctrl: f64,
) -> Result<AdaptiveEstimatorState> {
    let TighteningPolicy::Adaptive { ema_alpha, warmup } = *policy else {
        return Err(Error::Usage("adaptive_update called with a non-adaptive policy"));
    };
    if !(dt_ctrl > 0.0) {
        return Err(Error::InvalidParam {
            name: "dt_ctrl",
            value: dt_ctrl,
            reason: "control period must be positive",
        });
    }
    let mut next = *estimator;
    let period_start = next.elapsed;
    next.elapsed += dt_ctrl;
    // Compare with a small tolerance so accumulated periods land on the boundary.
    if period_start + 1e-9 < warmup {
        next.a2_hat = 0.0;
        return Ok(next);
    }
    if observed_crosstrack.is_finite() {
        next.peak_abs_crosstrack_seen = next.peak_abs_crosstrack_seen.max(observed_crosstrack.abs());
    }
    let load = v * v * kappa.abs();
    if load < MIN_REGRESSOR {
        return Ok(next);
    }
    let raw = next.peak_abs_crosstrack_seen / load;
    next.a2_hat = ((1.0 - ema_alpha) * next.a2_hat + ema_alpha * raw).max(0.0);
    Ok(next)
}

/// Outcome of applying margin `applied` where `required` was needed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarginOutcome {
    /// Excess margin, clipped at zero [m].
    pub waste: f64,
    pub safe: bool,
}

pub fn wasted_margin(applied: f64, required: f64) -> MarginOutcome {
    MarginOutcome {
        waste: (applied - required).max(0.0),
        safe: applied >= required,
    }
}
