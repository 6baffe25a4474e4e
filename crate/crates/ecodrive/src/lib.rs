// Validation guards are written `!(x >= 0.0)` on purpose: the negated form
// also rejects NaN, which `x < 0.0` would wave through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Closed-loop eco-driving laboratory for a 48 V mild-hybrid vehicle.
//!
//! The crate couples two components around a quasi-static longitudinal plant
//! model:
//!
//! * a GRU encoder-decoder that predicts the velocity of the vehicle ahead
//!   (the "target") from its recent motion and signal-phase context, and
//! * a two-stage dynamic-programming optimizer that picks engine and
//!   belt-starter-generator torques over a receding spatial horizon, subject
//!   to speed limits, signal phase windows, battery limits and a safe
//!   following distance against the predicted target motion.
//!
//! Module map:
//!
//! * [`route`]: route geometry, speed limits, signal schedules, stop signs
//! * [`traffic`]: target vehicle trajectories: car-following generator and CSV I/O
//! * [`plant`]: powertrain, battery and fuel-map models with spatial-step transitions
//! * [`predictor`]: feature extraction, GRU encoder-decoder, training, baselines
//! * [`gap`]: inter-vehicle gap propagation and the safe-distance constraint
//! * [`ocp`]: full-route and receding-horizon dynamic programming
//! * [`sim`]: the closed simulation loop, scenario configs and reports

pub mod error;
pub mod gap;
pub mod ocp;
pub mod plant;
pub mod predictor;
pub mod route;
pub mod sim;
pub mod traffic;

pub use error::{Error, Result};

use std::path::PathBuf;

/// Path of a file shipped under this crate's `data/` directory.
///
/// Lets examples and tests locate the default plant, routes and scenarios
/// without caring about the working directory.
pub fn data_file(name: &str) -> PathBuf {
    let mut p = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    p.push("data");
    p.push(name);
    p
}
