//! Measurement and control procedures built on the optics model.

pub mod link;
pub mod scan;
pub mod sync;

pub use link::{TwoUserLink, UserChannel};
pub use scan::{
    calibrate, calibration_rig, detect_dip, scan, scan_offsets, Acquisition, CalibrationResult, CalibrationRun, Dip,
    ScanPoint, ScanTrace,
};
pub use sync::{
    response_order_probe, run_loop, wrap_phase, LoopConfig, LoopRun, LoopSample, Observable, ResponseSlope, SlopeSign,
    Strategy, SyncController, SyncRecord, VerifyOutcome,
};
