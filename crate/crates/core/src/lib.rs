//! Numerical laboratory for criticality-enhanced sensing with the open Rabi
//! model: master-equation dynamics, photon-counting trajectories, Fisher
//! information and finite-size scaling analysis.

pub mod band;
pub mod correlators;
pub mod error;
pub mod evolution;
pub mod information;
pub mod model;
pub mod quantum;
pub mod record;
pub mod rng;
pub mod scaling;
pub mod sparse;
pub mod trajectories;

pub use error::{Error, Result};
