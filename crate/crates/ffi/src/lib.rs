//! C ABI for the `qchannel` simulator.
//!
//! Objects cross the boundary as opaque handles (`QcScenario`, `QcLink`,
//! `QcReport`) that the caller frees with the matching `*_free` function.
//! Every function returns a `QcStatus`; on failure the message is kept per
//! thread and can be copied out with `qc_last_error_message`. Panics never
//! unwind into C: they are caught and reported as `QC_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use qchannel::harness::{self, RunReport, ScanState, Scenario};
use qchannel::optics::User;
use qchannel::procedures::TwoUserLink;
use qchannel::Error;

/// Status codes returned by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Validation = 4,
    Orchestration = 5,
    Io = 6,
    Simulation = 7,
    NotFound = 8,
    Internal = 9,
}

/// Harness commands runnable through `qc_run`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QcCommand {
    ScanPsi = 0,
    ScanPhi = 1,
    Fig3 = 2,
    Qkd = 3,
    Orchestrate = 4,
    ProbeOrder = 5,
}

/// Parsed and validated scenario.
pub struct QcScenario(Scenario);

/// Two-user link built from a scenario's first two users.
pub struct QcLink(TwoUserLink);

/// Metrics and checks from one command run.
pub struct QcReport(RunReport);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> QcStatus {
    match e {
        Error::Parse(_) => QcStatus::Parse,
        Error::Validation(_) | Error::Config(_) => QcStatus::Validation,
        Error::Orchestration(_) => QcStatus::Orchestration,
        Error::Io(_) | Error::Csv(_) => QcStatus::Io,
        Error::InvalidArgument(_) => QcStatus::InvalidArgument,
        Error::UnknownDevice(_) => QcStatus::NotFound,
        _ => QcStatus::Simulation,
    }
}

struct Fail(QcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> QcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            QcStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            QcStatus::Internal
        }
    }
}

fn null() -> Fail {
    Fail(QcStatus::NullPointer, "null pointer argument".into())
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(QcStatus::InvalidArgument, "string is not UTF-8".into()))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(null)
}

unsafe fn handle_mut<'a, T>(p: *mut T) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(null)
}

unsafe fn write_out<T>(out: *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null());
    }
    out.write(v);
    Ok(())
}

fn user_of(index: u32) -> Result<User, Fail> {
    match index {
        0 => Ok(User::First),
        1 => Ok(User::Second),
        _ => Err(Fail(
            QcStatus::InvalidArgument,
            format!("user index {index} is not 0 or 1"),
        )),
    }
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len - 1` bytes). Returns the full message
/// length in bytes, excluding the terminator; pass `buf = NULL` to query it.
///
/// # Safety
/// `buf` must be NULL or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn qc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            ptr::copy_nonoverlapping(e.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Loads and validates a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qc_scenario_load(path: *const c_char, out: *mut *mut QcScenario) -> QcStatus {
    guard(|| {
        let s = Scenario::load(Path::new(str_arg(path)?))?;
        write_out(out, Box::into_raw(Box::new(QcScenario(s))))
    })
}

/// Parses and validates scenario text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qc_scenario_parse(text: *const c_char, out: *mut *mut QcScenario) -> QcStatus {
    guard(|| {
        let s = Scenario::from_toml_str(str_arg(text)?)?;
        s.validate()?;
        write_out(out, Box::into_raw(Box::new(QcScenario(s))))
    })
}

/// # Safety
/// `scenario` must be NULL or a handle from `qc_scenario_load`/`qc_scenario_parse`
/// that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn qc_scenario_free(scenario: *mut QcScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qc_scenario_user_count(scenario: *const QcScenario, out: *mut usize) -> QcStatus {
    guard(|| write_out(out, handle(scenario)?.0.users.len()))
}

/// Runs a harness command, writing its CSV files under `out_dir`.
///
/// # Safety
/// `scenario` must be a live handle, `out_dir` a NUL-terminated string and
/// `report` writable. On `QC_STATUS_OK` the caller owns `*report`.
#[no_mangle]
pub unsafe extern "C" fn qc_run(
    scenario: *const QcScenario,
    command: QcCommand,
    seed: u64,
    out_dir: *const c_char,
    report: *mut *mut QcReport,
) -> QcStatus {
    guard(|| {
        let s = &handle(scenario)?.0;
        let out = Path::new(str_arg(out_dir)?);
        if report.is_null() {
            return Err(null());
        }
        let r = match command {
            QcCommand::ScanPsi => harness::cmd_scan(s, ScanState::Psi, seed, out),
            QcCommand::ScanPhi => harness::cmd_scan(s, ScanState::Phi, seed, out),
            QcCommand::Fig3 => harness::cmd_fig3(s, seed, out),
            QcCommand::Qkd => harness::cmd_qkd(s, seed, out),
            QcCommand::Orchestrate => harness::cmd_orchestrate(s, seed, out),
            QcCommand::ProbeOrder => harness::cmd_probe_order(s, seed, out),
        }?;
        write_out(report, Box::into_raw(Box::new(QcReport(r))))
    })
}

/// # Safety
/// `report` must be NULL or a live handle from `qc_run`.
#[no_mangle]
pub unsafe extern "C" fn qc_report_free(report: *mut QcReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Looks up a numeric metric by name. `QC_STATUS_NOT_FOUND` if absent or
/// not a number.
///
/// # Safety
/// `report` must be a live handle, `name` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qc_report_metric(report: *const QcReport, name: *const c_char, out: *mut f64) -> QcStatus {
    guard(|| {
        let name = str_arg(name)?;
        let v = handle(report)?
            .0
            .number(name)
            .ok_or_else(|| Fail(QcStatus::NotFound, format!("no numeric metric `{name}`")))?;
        write_out(out, v)
    })
}

/// Number of checks the run evaluated and how many passed.
///
/// # Safety
/// `report` must be a live handle; `total` and `passed` writable.
#[no_mangle]
pub unsafe extern "C" fn qc_report_checks(report: *const QcReport, total: *mut usize, passed: *mut usize) -> QcStatus {
    guard(|| {
        let r = &handle(report)?.0;
        write_out(total, r.checks.len())?;
        write_out(passed, r.checks.iter().filter(|c| c.passed).count())
    })
}

/// Builds a link from the scenario's first two users.
///
/// # Safety
/// `scenario` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qc_link_new(scenario: *const QcScenario, out: *mut *mut QcLink) -> QcStatus {
    guard(|| {
        let s = &handle(scenario)?.0;
        if s.users.len() < 2 {
            return Err(Fail(QcStatus::InvalidArgument, "a link needs two users".into()));
        }
        let link = TwoUserLink::new(s.optics, s.source, s.users[0].channel(), s.users[1].channel());
        write_out(out, Box::into_raw(Box::new(QcLink(link))))
    })
}

/// # Safety
/// `link` must be NULL or a live handle from `qc_link_new`.
#[no_mangle]
pub unsafe extern "C" fn qc_link_free(link: *mut QcLink) {
    if !link.is_null() {
        drop(Box::from_raw(link));
    }
}

/// Sets user `user` (0 or 1) liquid-crystal phase in radians.
///
/// # Safety
/// `link` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qc_link_set_lc_phase(link: *mut QcLink, user: u32, phase: f64) -> QcStatus {
    guard(|| {
        let l = &mut handle_mut(link)?.0;
        if !phase.is_finite() {
            return Err(Fail(QcStatus::InvalidArgument, "phase must be finite".into()));
        }
        l.user_mut(user_of(user)?).lc_phase = phase;
        Ok(())
    })
}

/// Sets user `user` (0 or 1) delay-stage offset in micrometres.
///
/// # Safety
/// `link` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qc_link_set_stage(link: *mut QcLink, user: u32, offset_um: f64) -> QcStatus {
    guard(|| {
        let l = &mut handle_mut(link)?.0;
        if !offset_um.is_finite() {
            return Err(Fail(QcStatus::InvalidArgument, "offset must be finite".into()));
        }
        l.user_mut(user_of(user)?).stage_um = offset_um;
        Ok(())
    })
}

/// Correlated probability of the shared singlet measured at 45 degrees.
///
/// # Safety
/// `link` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qc_link_shared_parity(link: *const QcLink, time_s: f64, out: *mut f64) -> QcStatus {
    guard(|| write_out(out, handle(link)?.0.shared_parity(time_s)?.p_correlated))
}

/// Correlated probability of a filtered pair sent down user `user`'s fiber.
///
/// # Safety
/// `link` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qc_link_filtered_parity(
    link: *const QcLink,
    user: u32,
    time_s: f64,
    out: *mut f64,
) -> QcStatus {
    guard(|| {
        let u = user_of(user)?;
        write_out(out, handle(link)?.0.filtered_parity(u, time_s)?.p_correlated)
    })
}

/// Derived 64-bit seed for subsystem `label`.
///
/// # Safety
/// `label` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qc_seed_stream(master: u64, label: *const c_char, out: *mut u64) -> QcStatus {
    guard(|| write_out(out, harness::seed_stream(master, str_arg(label)?)))
}
