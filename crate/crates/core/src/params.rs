//! Vehicle and leaning-bicycle parameter sets.
//!
//! Defaults reproduce the passenger-car setup used throughout the experiments:
//! M = 1500 kg, I_z = 2500 kg m², l_f = 1.2 m, l_r = 1.5 m and an equal
//! 80 000 N/rad cornering stiffness on both axles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rigid-body and linear-tire parameters of the single-track vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    /// Mass M [kg].
    pub mass: f64,
    /// Yaw inertia I_z [kg m²].
    pub yaw_inertia: f64,
    /// CoG to front axle l_f [m].
    pub dist_front: f64,
    /// CoG to rear axle l_r [m].
    pub dist_rear: f64,
    /// Front cornering stiffness C_af [N/rad].
    pub stiffness_front: f64,
    /// Rear cornering stiffness C_ar [N/rad].
    pub stiffness_rear: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 1500.0,
            yaw_inertia: 2500.0,
            dist_front: 1.2,
            dist_rear: 1.5,
            stiffness_front: 80_000.0,
            stiffness_rear: 80_000.0,
        }
    }
}

impl VehicleParams {
    pub fn wheelbase(&self) -> f64 {
        self.dist_front + self.dist_rear
    }

    pub fn avg_stiffness(&self) -> f64 {
        0.5 * (self.stiffness_front + self.stiffness_rear)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("mass", self.mass),
            ("yaw_inertia", self.yaw_inertia),
            ("dist_front", self.dist_front),
            ("dist_rear", self.dist_rear),
            ("stiffness_front", self.stiffness_front),
            ("stiffness_rear", self.stiffness_rear),
        ] {
            positive(name, value)?;
        }
        Ok(())
    }
}

/// Point-mass leaning bicycle with a lean-stabilizing steer-rate controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeanBikeParams {
    /// Wheelbase l [m].
    pub wheelbase: f64,
    /// Height of the lumped mass above ground h [m].
    pub com_height: f64,
    /// Gravitational acceleration g [m/s²].
    pub gravity: f64,
    /// Lean error gain K1.
    pub k_lean: f64,
    /// Lean rate gain K2.
    pub k_lean_rate: f64,
    /// Steer error gain K3.
    pub k_steer: f64,
}

impl Default for LeanBikeParams {
    fn default() -> Self {
        Self {
            wheelbase: 1.0,
            com_height: 0.55,
            gravity: 9.81,
            k_lean: 71.0,
            k_lean_rate: 21.0,
            k_steer: -20.0,
        }
    }
}

impl LeanBikeParams {
    pub fn validate(&self) -> Result<()> {
        positive("wheelbase", self.wheelbase)?;
        positive("com_height", self.com_height)?;
        positive("gravity", self.gravity)?;
        for (name, value) in [
            ("k_lean", self.k_lean),
            ("k_lean_rate", self.k_lean_rate),
            ("k_steer", self.k_steer),
        ] {
            if !value.is_finite() {
                return Err(Error::InvalidParam {
                    name,
                    value,
                    reason: "must be finite",
                });
            }
        }
        Ok(())
    }
}

/// Vehicle and leaning-bicycle parameters bundled for scenario runners.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    pub vehicle: VehicleParams,
    pub lean: LeanBikeParams,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.lean.validate()
    }
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParam {
            name,
            value,
            reason: "must be strictly positive",
        })
    }
}
