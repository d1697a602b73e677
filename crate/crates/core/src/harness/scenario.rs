//! Scenario files (TOML) and their validation.
//!
//! Every section except `users` is optional; each command checks for the
//! section it needs. `validate` reports every problem it finds, each
//! prefixed with the offending field path, before anything is simulated.

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::{FlowEntry, UserSpec};
use crate::error::{Error, Result};
use crate::optics::{DriftModel, OpticalParams, SourceModel};
use crate::procedures::UserChannel;
use crate::timebin::{validate_stations, UserStation, DEFAULT_JITTER_PS, DEFAULT_WINDOW_PS};

fn yes() -> bool {
    true
}
fn default_window_ps() -> f64 {
    DEFAULT_WINDOW_PS
}
fn default_delay_ps() -> f64 {
    1000.0
}
fn default_jitter_ps() -> f64 {
    DEFAULT_JITTER_PS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserEntry {
    pub name: String,
    /// Static excess path of the user's fiber.
    #[serde(default)]
    pub fiber_um: f64,
    /// Set the stage to cancel `fiber_um` (ignored when `stage_um` is given).
    #[serde(default = "yes")]
    pub calibrated: bool,
    #[serde(default)]
    pub stage_um: Option<f64>,
    #[serde(default)]
    pub lc_phase: f64,
    #[serde(default)]
    pub waveplate_phase: f64,
    #[serde(default)]
    pub drift: Option<DriftModel>,
    /// Basis delay of the user's station.
    #[serde(default = "default_delay_ps")]
    pub delay_ps: f64,
    #[serde(default = "default_jitter_ps")]
    pub jitter_ps: f64,
    #[serde(default)]
    pub switch_port: Option<u32>,
    #[serde(default)]
    pub relay_port: Option<u32>,
}

impl UserEntry {
    pub fn channel(&self) -> UserChannel {
        let mut c = UserChannel::new(self.name.clone(), self.fiber_um);
        c.stage_um = match (self.stage_um, self.calibrated) {
            (Some(s), _) => s,
            (None, true) => -self.fiber_um,
            (None, false) => 0.0,
        };
        c.lc_phase = self.lc_phase;
        c.waveplate_phase = self.waveplate_phase;
        c.drift = self.drift.clone();
        c
    }

    pub fn station(&self, seed: u64) -> UserStation {
        UserStation::new(self.name.clone(), self.delay_ps, seed).with_jitter(self.jitter_ps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum AcquisitionSpec {
    Analytic,
    Counted { rate: f64, window_s: f64 },
}

impl Default for AcquisitionSpec {
    fn default() -> Self {
        AcquisitionSpec::Counted {
            rate: 1.0e4,
            window_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhiSpec {
    pub fiber_um: f64,
    pub checkpoint_spacing_um: f64,
    /// Fine window scanned around every checkpoint.
    pub window_um: f64,
    pub step_um: f64,
}

impl Default for PhiSpec {
    fn default() -> Self {
        Self {
            fiber_um: 0.0,
            checkpoint_spacing_um: 1000.0,
            window_um: 1.0,
            step_um: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSpec {
    pub range_um: [f64; 2],
    pub step_um: f64,
    /// Walk-off outside the keyed connector pair.
    pub rig_offset_um: f64,
    /// Excess path inside the connector pair; calibration should land on
    /// minus this value.
    pub fiber_um: f64,
    pub lc_phases: Vec<f64>,
    pub acquisition: AcquisitionSpec,
    pub phi: PhiSpec,
}

impl Default for ScanSpec {
    fn default() -> Self {
        Self {
            range_um: [-15000.0, 15000.0],
            step_um: 50.0,
            rig_offset_um: 0.0,
            fiber_um: 0.0,
            lc_phases: vec![0.0, FRAC_PI_2, PI],
            acquisition: AcquisitionSpec::default(),
            phi: PhiSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig3Spec {
    pub duration_s: f64,
    pub window_s: f64,
    /// Stage error of the uncalibrated trace.
    pub uncalibrated_offset_um: f64,
    /// Replaces the drift of user `drift_user` when given.
    pub drift: Option<DriftModel>,
    pub drift_user: usize,
    /// Extra liquid-crystal phase on the second user in the open-loop traces.
    pub static_phase: f64,
    pub settle_s: f64,
    pub gain: f64,
    pub verify_every: usize,
    pub verify_tolerance: f64,
    pub target: f64,
    pub band: f64,
    /// Spectral peak counts as real above this many times the mean of the
    /// other bins.
    pub peak_factor: f64,
}

impl Default for Fig3Spec {
    fn default() -> Self {
        Self {
            duration_s: 60.0,
            window_s: 0.1,
            uncalibrated_offset_um: 5000.0,
            drift: None,
            drift_user: 0,
            static_phase: FRAC_PI_2,
            settle_s: 5.0,
            gain: 0.5,
            verify_every: 20,
            verify_tolerance: 0.25,
            target: 0.0,
            band: 0.1,
            peak_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QkdSpec {
    /// Alice and Bob by name; the first two users when empty.
    pub pair: Vec<String>,
    pub n_pulses: u64,
    pub rate_hz: f64,
    pub sample_fraction: f64,
    pub time_bins: usize,
}

impl Default for QkdSpec {
    fn default() -> Self {
        Self {
            pair: Vec::new(),
            n_pulses: 10_000,
            rate_hz: 1.0e6,
            sample_fraction: 0.1,
            time_bins: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSpec {
    pub relay_device_id: String,
    pub relay_slots: usize,
    pub slot_duration_s: f64,
    pub session_duration_s: f64,
    /// Pairs holding relay slots before the first request.
    pub occupied: Vec<[String; 2]>,
    pub flows: Vec<FlowEntry>,
    /// `[requester, peer]` key-exchange requests, injected in order.
    pub requests: Vec<[String; 2]>,
    /// Transport seeds to replay the orchestration with.
    pub orderings: usize,
    pub session_pulses: u64,
    pub session_rate_hz: f64,
}

impl Default for ControlSpec {
    fn default() -> Self {
        Self {
            relay_device_id: "relay".into(),
            relay_slots: 2,
            slot_duration_s: 0.5,
            session_duration_s: 1.0,
            occupied: Vec::new(),
            flows: Vec::new(),
            requests: Vec::new(),
            orderings: 100,
            session_pulses: 10_000,
            session_rate_hz: 1.0e5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSpec {
    /// User whose filtered pairs are probed; the first user when empty.
    pub user: String,
    pub delta: f64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            user: String::new(),
            delta: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub optics: OpticalParams,
    #[serde(default)]
    pub source: SourceModel,
    #[serde(default = "default_window_ps")]
    pub window_ps: f64,
    #[serde(default)]
    pub users: Vec<UserEntry>,
    #[serde(default)]
    pub scan: Option<ScanSpec>,
    #[serde(default)]
    pub fig3: Option<Fig3Spec>,
    #[serde(default)]
    pub qkd: Option<QkdSpec>,
    #[serde(default)]
    pub control: Option<ControlSpec>,
    #[serde(default)]
    pub probe: Option<ProbeSpec>,
}

struct Problems(Vec<String>);

impl Problems {
    fn check(&mut self, ok: bool, field: impl AsRef<str>, msg: impl AsRef<str>) {
        if !ok {
            self.0.push(format!("{}: {}", field.as_ref(), msg.as_ref()));
        }
    }

    fn finite(&mut self, v: f64, field: impl AsRef<str>) {
        self.check(v.is_finite(), field, "must be finite");
    }

    fn positive(&mut self, v: f64, field: impl AsRef<str>) {
        self.check(v > 0.0 && v.is_finite(), field, format!("must be > 0, got {v}"));
    }

    fn result(&mut self, r: Result<()>, field: impl AsRef<str>) {
        match r {
            Ok(()) => {}
            Err(Error::Validation(list)) => {
                for m in list {
                    self.0.push(format!("{}: {m}", field.as_ref()));
                }
            }
            Err(e) => self.0.push(format!("{}: {e}", field.as_ref())),
        }
    }
}

/// Upper bound on points in one scan, to catch unit mistakes early.
const MAX_SCAN_POINTS: f64 = 2.0e6;

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Parses and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let s = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn user(&self, name: &str) -> Option<&UserEntry> {
        self.users.iter().find(|u| u.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        let mut p = Problems(Vec::new());
        p.result(self.optics.validate(), "optics");
        p.result(self.source.validate(), "source");
        p.positive(self.window_ps, "window_ps");

        let mut names = BTreeSet::new();
        let mut ports = (BTreeSet::new(), BTreeSet::new());
        for (i, u) in self.users.iter().enumerate() {
            let f = |name: &str| format!("users[{i}].{name}");
            p.check(!u.name.trim().is_empty(), f("name"), "must not be empty");
            p.check(
                names.insert(u.name.clone()),
                f("name"),
                format!("duplicate user `{}`", u.name),
            );
            for (v, n) in [
                (u.fiber_um, "fiber_um"),
                (u.lc_phase, "lc_phase"),
                (u.waveplate_phase, "waveplate_phase"),
            ] {
                p.finite(v, f(n));
            }
            if let Some(s) = u.stage_um {
                p.finite(s, f("stage_um"));
            }
            if let Some(d) = &u.drift {
                p.result(d.validate(), f("drift"));
            }
            p.check(
                u.delay_ps.is_finite() && u.delay_ps > 4.0 * self.window_ps,
                f("delay_ps"),
                format!(
                    "{} ps must exceed 4 x window_ps ({} ps)",
                    u.delay_ps,
                    4.0 * self.window_ps
                ),
            );
            p.check(
                u.jitter_ps >= 0.0 && u.jitter_ps.is_finite(),
                f("jitter_ps"),
                "must be >= 0",
            );
            if let Some(sp) = u.switch_port {
                p.check(ports.0.insert(sp), f("switch_port"), format!("port {sp} used twice"));
            }
            if let Some(rp) = u.relay_port {
                p.check(ports.1.insert(rp), f("relay_port"), format!("port {rp} used twice"));
            }
        }

        if let Some(s) = &self.scan {
            p.check(
                s.range_um[0].is_finite() && s.range_um[1].is_finite() && s.range_um[0] < s.range_um[1],
                "scan.range_um",
                "must be [low, high] with low < high",
            );
            p.positive(s.step_um, "scan.step_um");
            p.check(
                (s.range_um[1] - s.range_um[0]) / s.step_um <= MAX_SCAN_POINTS,
                "scan.step_um",
                "too many scan points",
            );
            p.finite(s.rig_offset_um, "scan.rig_offset_um");
            p.finite(s.fiber_um, "scan.fiber_um");
            p.check(!s.lc_phases.is_empty(), "scan.lc_phases", "needs at least one phase");
            for (i, ph) in s.lc_phases.iter().enumerate() {
                p.finite(*ph, format!("scan.lc_phases[{i}]"));
            }
            if let AcquisitionSpec::Counted { rate, window_s } = s.acquisition {
                p.check(rate >= 0.0 && rate.is_finite(), "scan.acquisition.rate", "must be >= 0");
                p.positive(window_s, "scan.acquisition.window_s");
            }
            p.finite(s.phi.fiber_um, "scan.phi.fiber_um");
            p.positive(s.phi.checkpoint_spacing_um, "scan.phi.checkpoint_spacing_um");
            p.positive(s.phi.step_um, "scan.phi.step_um");
            p.check(
                s.phi.window_um >= self.optics.wavelength_um / 2.0,
                "scan.phi.window_um",
                "must cover at least one oscillation period (half a wavelength)",
            );
            p.check(
                s.phi.window_um / s.phi.step_um >= 8.0 && s.phi.window_um / s.phi.step_um <= MAX_SCAN_POINTS,
                "scan.phi.step_um",
                "window must hold between 8 and 2e6 points",
            );
        }

        if let Some(f) = &self.fig3 {
            p.check(self.users.len() >= 2, "fig3", "needs two users");
            p.positive(f.window_s, "fig3.window_s");
            p.check(
                f.duration_s.is_finite() && f.duration_s >= 8.0 * f.window_s,
                "fig3.duration_s",
                "must span at least 8 windows",
            );
            p.check(
                f.settle_s >= 0.0 && f.settle_s < f.duration_s,
                "fig3.settle_s",
                "must lie in [0, duration_s)",
            );
            p.finite(f.uncalibrated_offset_um, "fig3.uncalibrated_offset_um");
            p.finite(f.static_phase, "fig3.static_phase");
            if let Some(d) = &f.drift {
                p.result(d.validate(), "fig3.drift");
            }
            p.check(f.drift_user < 2, "fig3.drift_user", "must be 0 or 1");
            p.check(f.gain.is_finite() && f.gain > 0.0, "fig3.gain", "must be > 0");
            p.check(f.verify_every >= 1, "fig3.verify_every", "must be >= 1");
            p.positive(f.verify_tolerance, "fig3.verify_tolerance");
            p.check((0.0..=1.0).contains(&f.target), "fig3.target", "must lie in [0, 1]");
            p.positive(f.band, "fig3.band");
            p.positive(f.peak_factor, "fig3.peak_factor");
        }

        if let Some(q) = &self.qkd {
            match self.qkd_pair(q) {
                Ok((a, b)) => p.result(
                    validate_stations(&a.station(0), &b.station(0), self.window_ps),
                    "qkd.pair",
                ),
                Err(e) => p.0.push(format!("qkd.pair: {e}")),
            }
            p.check(q.n_pulses > 0, "qkd.n_pulses", "must be > 0");
            p.positive(q.rate_hz, "qkd.rate_hz");
            p.check(
                q.sample_fraction > 0.0 && q.sample_fraction <= 1.0,
                "qkd.sample_fraction",
                "must lie in (0, 1]",
            );
            p.check(q.time_bins >= 1, "qkd.time_bins", "must be >= 1");
        }

        if let Some(c) = &self.control {
            p.check(self.users.len() >= 2, "control", "needs at least two users");
            p.check(
                !c.relay_device_id.is_empty(),
                "control.relay_device_id",
                "must not be empty",
            );
            p.check(
                !names.contains(&c.relay_device_id),
                "control.relay_device_id",
                "clashes with a user name",
            );
            p.positive(c.slot_duration_s, "control.slot_duration_s");
            p.positive(c.session_duration_s, "control.session_duration_s");
            p.check(c.relay_slots >= 1, "control.relay_slots", "must be >= 1");
            p.check(
                c.occupied.len() <= c.relay_slots,
                "control.occupied",
                "more occupied pairs than relay slots",
            );
            for (i, [a, b]) in c.occupied.iter().enumerate() {
                p.check(
                    names.contains(a) && names.contains(b) && a != b,
                    format!("control.occupied[{i}]"),
                    "must name two distinct users",
                );
            }
            p.check(!c.requests.is_empty(), "control.requests", "needs at least one request");
            p.check(c.orderings >= 1, "control.orderings", "must be >= 1");
            p.check(c.session_pulses > 0, "control.session_pulses", "must be > 0");
            p.positive(c.session_rate_hz, "control.session_rate_hz");
            p.check(
                c.session_rate_hz * c.slot_duration_s >= 2.0,
                "control.session_rate_hz",
                "must fit at least two pulses into one relay slot",
            );
        }

        if let Some(pr) = &self.probe {
            p.check(!self.users.is_empty(), "probe", "needs a user");
            p.check(
                pr.user.is_empty() || names.contains(&pr.user),
                "probe.user",
                format!("unknown user `{}`", pr.user),
            );
            p.positive(pr.delta, "probe.delta");
        }

        if p.0.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(p.0))
        }
    }

    pub fn qkd_pair(&self, q: &QkdSpec) -> Result<(&UserEntry, &UserEntry)> {
        let names: Vec<&str> = if q.pair.is_empty() {
            self.users.iter().take(2).map(|u| u.name.as_str()).collect()
        } else {
            q.pair.iter().map(String::as_str).collect()
        };
        if names.len() != 2 || names[0] == names[1] {
            return Err(Error::Config("needs two distinct users".into()));
        }
        let get = |n: &str| self.user(n).ok_or_else(|| Error::Config(format!("unknown user `{n}`")));
        Ok((get(names[0])?, get(names[1])?))
    }

    /// Controller view of the users, assigning ports by position where the
    /// scenario leaves them out.
    pub fn user_specs(&self) -> Vec<UserSpec> {
        self.users
            .iter()
            .enumerate()
            .map(|(i, u)| UserSpec {
                id: u.name.clone(),
                device_id: format!("{}.station", u.name),
                switch_port: u.switch_port.unwrap_or(i as u32 + 1),
                relay_port: u.relay_port.unwrap_or(i as u32 + 1),
            })
            .collect()
    }

    pub fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T> {
        section
            .as_ref()
            .ok_or_else(|| Error::Validation(vec![format!("{name}: section missing from scenario")]))
    }
}
