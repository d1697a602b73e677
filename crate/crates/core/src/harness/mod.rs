//! Scenario-driven experiment runner behind the `qchannel` binary.

mod commands;
mod report;
pub mod scenario;
pub mod spectrum;

pub use commands::{cmd_fig3, cmd_orchestrate, cmd_probe_order, cmd_qkd, cmd_scan, ScanState};
pub use report::{Check, RunReport};
pub use scenario::Scenario;

use sha2::{Digest, Sha256};

/// Independent 64-bit seed for subsystem `label`, so that changing one
/// subsystem's draws never perturbs another's.
pub fn seed_stream(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}
