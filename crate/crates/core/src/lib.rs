//! Simulator and protocol stack for entanglement-based key distribution over
//! birefringent fiber: two-photon polarization algebra, a birefringent
//! channel model with partial distinguishability, calibration and
//! synchronization procedures, time-bin sifting, and a programmable
//! control plane for multi-user key exchange.

pub mod control;
pub mod error;
pub mod harness;
pub mod optics;
pub mod polarization;
pub mod procedures;
pub mod timebin;

pub use error::{Error, Result};
