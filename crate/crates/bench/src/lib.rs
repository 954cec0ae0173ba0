//! Shared fixtures for the criterion benches.

use mact_core::analysis::ScalingSample;

/// The 4×5 open-loop calibration grid as `(v, kappa)` pairs.
pub fn calibration_grid() -> Vec<(f64, f64)> {
    let speeds = [12.0, 14.0, 16.0, 18.0];
    let curvatures = [0.005, 0.0075, 0.010, 0.0125, 0.015];
    speeds
        .iter()
        .flat_map(|&v| curvatures.iter().map(move |&k| (v, k)))
        .collect()
}

/// Synthetic samples on an exact `eps = a2 v² kappa` law.
pub fn synthetic_samples(a2: f64) -> Vec<ScalingSample> {
    calibration_grid()
        .into_iter()
        .map(|(v, kappa)| ScalingSample {
            v,
            kappa,
            eps_star: a2 * v * v * kappa,
        })
        .collect()
}
