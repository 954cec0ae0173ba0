//! Kinematic-vs-dynamic bicycle mismatch laboratory.
//!
//! The crate quantifies how far a linear-tire dynamic bicycle drifts from the
//! kinematic plan it was asked to follow, turns that drift into a state-dependent
//! constraint tightening `eps = a2 v² |kappa|`, and embeds the tightening in a
//! direct single-shooting optimizer used both open loop and as a receding-horizon
//! controller.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod experiments;
pub mod integrate;
pub mod models;
pub mod mpc;
pub mod params;
pub mod shooting;
pub mod tightening;

pub use error::{Error, Result};
pub use params::{LeanBikeParams, ModelParams, VehicleParams};
