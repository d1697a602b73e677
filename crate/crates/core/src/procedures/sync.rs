//! Bit-parity synchronization.
//!
//! Two feedback strategies act on a user's liquid-crystal phase while
//! watching the parity of filtered pairs (both photons in that user's
//! fiber):
//!
//! * `Maximize` hill-climbs the correlated probability. Near the optimum
//!   the parity is quadratic in the phase, so the error signal vanishes to
//!   first order.
//! * `FiftyFifty` holds the parity at one half, where it is linear in the
//!   phase, with plain proportional control.
//!
//! Either way the shared-singlet parity is checked periodically; a user who
//! settled on the wrong branch advances the phase by `pi`.

use std::f64::consts::{FRAC_PI_4, PI, TAU};

use rand::Rng;

use crate::error::{Error, Result};
use crate::optics::{parity_at_45, sample_counts, ChannelTopology, CountPair, SourceModel, User};
use crate::polarization::{bell_state, BellKind, ParityDistribution};

use super::link::TwoUserLink;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Maximize,
    FiftyFifty,
}

/// Sign of `dp/dphase` assumed by the proportional controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlopeSign {
    /// Lock onto crossings of this slope only. Users sharing a link must
    /// use the same sign.
    Fixed(f64),
    /// Re-estimate from the two most recent history points when they are
    /// at least `min_step` apart in phase; otherwise keep the last estimate.
    Estimate { min_step: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncRecord {
    pub time_s: f64,
    pub observed: f64,
    pub phase: f64,
    pub counts: CountPair,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ClimbState {
    Center,
    Plus { center: f64 },
    Minus { center: f64, plus: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncController {
    pub strategy: Strategy,
    phase_setting: f64,
    pub gain: f64,
    pub window: f64,
    pub target_parity: f64,
    pub slope: SlopeSign,
    slope_estimate: f64,
    /// Hill-climb probe size and its floor.
    pub probe_step: f64,
    pub min_probe_step: f64,
    climb_origin: f64,
    climb: ClimbState,
    history: Vec<SyncRecord>,
}

pub fn wrap_phase(phase: f64) -> f64 {
    let w = phase.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

impl SyncController {
    pub fn fifty_fifty(initial_phase: f64, gain: f64, window: f64) -> Self {
        Self::new(Strategy::FiftyFifty, initial_phase, gain, window)
    }

    pub fn maximize(initial_phase: f64, probe_step: f64, window: f64) -> Self {
        let mut c = Self::new(Strategy::Maximize, initial_phase, 0.0, window);
        c.probe_step = probe_step;
        c
    }

    fn new(strategy: Strategy, initial_phase: f64, gain: f64, window: f64) -> Self {
        let phase = wrap_phase(initial_phase);
        Self {
            strategy,
            phase_setting: phase,
            gain,
            window,
            target_parity: 0.5,
            slope: SlopeSign::Fixed(1.0),
            slope_estimate: 1.0,
            probe_step: 0.2,
            min_probe_step: 1e-7,
            climb_origin: phase,
            climb: ClimbState::Center,
            history: Vec::new(),
        }
    }

    pub fn with_slope(mut self, slope: SlopeSign) -> Self {
        if let SlopeSign::Fixed(s) = slope {
            self.slope_estimate = s.signum();
        }
        self.slope = slope;
        self
    }

    /// Liquid-crystal command to apply for the next window.
    pub fn phase_setting(&self) -> f64 {
        self.phase_setting
    }

    pub fn history(&self) -> &[SyncRecord] {
        &self.history
    }

    /// For `Maximize`, the best phase found so far (the probe centre).
    pub fn operating_phase(&self) -> f64 {
        match self.strategy {
            Strategy::FiftyFifty => self.phase_setting,
            Strategy::Maximize => self.climb_origin,
        }
    }

    fn current_slope(&mut self) -> f64 {
        match self.slope {
            SlopeSign::Fixed(s) => s.signum(),
            SlopeSign::Estimate { min_step } => {
                if let [.., a, b] = self.history.as_slice() {
                    let dphi = b.phase - a.phase;
                    let dp = b.observed - a.observed;
                    // unwrap across the 0/2pi seam
                    let dphi = dphi - TAU * (dphi / TAU).round();
                    if dphi.abs() >= min_step && dp != 0.0 {
                        self.slope_estimate = (dp * dphi).signum();
                    }
                }
                self.slope_estimate
            }
        }
    }

    /// Feeds the parity observed with the current setting; returns the next
    /// setting.
    pub fn sync_step(&mut self, time_s: f64, observed: &ParityDistribution) -> f64 {
        self.step_with_counts(time_s, observed.p_correlated, CountPair::default())
    }

    pub fn step_with_counts(&mut self, time_s: f64, observed: f64, counts: CountPair) -> f64 {
        self.history.push(SyncRecord {
            time_s,
            observed,
            phase: self.phase_setting,
            counts,
        });
        match self.strategy {
            Strategy::FiftyFifty => {
                let slope = self.current_slope();
                let error = observed - self.target_parity;
                self.phase_setting = wrap_phase(self.phase_setting - self.gain * error * slope);
            }
            Strategy::Maximize => self.climb_step(observed),
        }
        self.phase_setting
    }

    fn climb_step(&mut self, observed: f64) {
        let step = self.probe_step;
        match self.climb {
            ClimbState::Center => {
                self.climb = ClimbState::Plus { center: observed };
                self.phase_setting = wrap_phase(self.climb_origin + step);
            }
            ClimbState::Plus { center } => {
                self.climb = ClimbState::Minus { center, plus: observed };
                self.phase_setting = wrap_phase(self.climb_origin - step);
            }
            ClimbState::Minus { center, plus } => {
                let minus = observed;
                let best = if plus > center && plus >= minus {
                    self.climb_origin += step;
                    plus
                } else if minus > center {
                    self.climb_origin -= step;
                    minus
                } else {
                    self.probe_step = (step * 0.5).max(self.min_probe_step);
                    center
                };
                self.climb_origin = wrap_phase(self.climb_origin);
                self.climb = ClimbState::Plus { center: best };
                self.phase_setting = wrap_phase(self.climb_origin + self.probe_step);
            }
        }
    }

    /// Checks the shared-singlet parity and, when it misses `shared_target`
    /// by more than `tolerance`, advances the phase by `pi`.
    pub fn sync_verify_and_cycle(
        &mut self,
        shared: &ParityDistribution,
        shared_target: f64,
        tolerance: f64,
    ) -> VerifyOutcome {
        if (shared.p_correlated - shared_target).abs() <= tolerance {
            return VerifyOutcome::Ok;
        }
        self.phase_setting = wrap_phase(self.phase_setting + PI);
        self.climb_origin = wrap_phase(self.climb_origin + PI);
        VerifyOutcome::Cycled(self.phase_setting)
    }

    /// Replaces the phase command (and, for hill climbing, the probe centre).
    pub fn set_phase(&mut self, phase: f64) {
        self.phase_setting = wrap_phase(phase);
        self.climb_origin = self.phase_setting;
        self.climb = ClimbState::Center;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VerifyOutcome {
    Ok,
    Cycled(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observable {
    SharedPsi,
    FilteredPhi { sign: i8 },
}

impl Observable {
    fn input(&self) -> BellKind {
        match self {
            Observable::SharedPsi => BellKind::PsiMinus,
            Observable::FilteredPhi { sign } if *sign < 0 => BellKind::PhiMinus,
            Observable::FilteredPhi { .. } => BellKind::PhiPlus,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseSlope {
    /// d(parity)/d(liquid-crystal phase).
    pub per_lc_radian: f64,
    /// d(parity)/d(relative phase of the interfering pair terms), i.e. the
    /// liquid-crystal slope divided by how many photons of the pair cross
    /// the liquid crystal.
    pub per_state_radian: f64,
}

/// Central finite difference of the exact parity with respect to the
/// liquid crystal `lc_id`, evaluated at `operating_phase`.
pub fn response_order_probe(
    topology: &ChannelTopology,
    lc_id: &str,
    observable: Observable,
    operating_phase: f64,
    delta: f64,
) -> Result<ResponseSlope> {
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::InvalidArgument(format!("probe delta must be > 0, got {delta}")));
    }
    let path = topology
        .path_of(lc_id)
        .ok_or_else(|| Error::Config(format!("no element `{lc_id}` in topology")))?;
    topology.retarder_phase(lc_id)?;
    let photons = (0..2)
        .filter(|&ph| std::ptr::eq(topology.path(ph), topology.paths()[path].as_slice()))
        .count();
    if photons == 0 {
        return Err(Error::Config(format!("`{lc_id}` is on no photon's path")));
    }
    let input = bell_state(observable.input());
    let at = |phase: f64| -> Result<f64> {
        let mut t = topology.clone();
        t.set_retarder_phase(lc_id, phase)?;
        Ok(parity_at_45(&input, &t, 0.0)?.p_correlated)
    };
    let lc_slope = (at(operating_phase + delta)? - at(operating_phase - delta)?) / (2.0 * delta);
    Ok(ResponseSlope {
        per_lc_radian: lc_slope,
        per_state_radian: lc_slope / photons as f64,
    })
}

/// Closed-loop experiment settings.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub duration_s: f64,
    pub window_s: f64,
    /// `None` runs open loop.
    pub strategy: Option<Strategy>,
    pub gain: f64,
    pub probe_step: f64,
    /// Slope both users lock onto in fifty-fifty mode.
    pub slope_sign: f64,
    pub target_parity: f64,
    pub shared_target: f64,
    pub verify_every: usize,
    pub verify_tolerance: f64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            duration_s: 60.0,
            window_s: 0.1,
            strategy: Some(Strategy::FiftyFifty),
            gain: 0.5,
            probe_step: 0.2,
            slope_sign: 1.0,
            target_parity: 0.5,
            shared_target: 0.0,
            verify_every: 20,
            verify_tolerance: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopSample {
    pub time_s: f64,
    /// Exact shared-singlet parity during the window.
    pub shared_parity: f64,
    pub shared_counts: CountPair,
    pub phase: [f64; 2],
    pub filtered_counts: [CountPair; 2],
    pub cycled: bool,
}

impl LoopSample {
    /// Measured shared parity (correlated fraction of the window's counts).
    pub fn measured(&self) -> Option<f64> {
        self.shared_counts.correlated_fraction()
    }
}

#[derive(Debug, Clone)]
pub struct LoopRun {
    pub samples: Vec<LoopSample>,
    pub controllers: Option<[SyncController; 2]>,
}

fn counts_rate(source: &SourceModel, filtered: bool) -> f64 {
    if filtered {
        source.pair_rate * source.p_filtered / 2.0
    } else {
        source.pair_rate * source.p_shared
    }
}

/// Runs a two-user link for `duration_s`, one window at a time. With a
/// strategy set, each user runs its own controller on its filtered-pair
/// parity; the first user double-checks the shared parity every
/// `verify_every` windows and the second user half a period later.
pub fn run_loop<R: Rng + ?Sized>(link: &TwoUserLink, cfg: &LoopConfig, rng: &mut R) -> Result<LoopRun> {
    if [cfg.window_s, cfg.duration_s].iter().any(|v| v.is_nan() || *v <= 0.0) {
        return Err(Error::InvalidArgument("loop duration and window must be > 0".into()));
    }
    let mut link = link.clone();
    let steps = (cfg.duration_s / cfg.window_s).round() as usize;
    let mut controllers = cfg.strategy.map(|s| {
        [User::First, User::Second].map(|u| {
            let start = link.user(u).lc_phase;
            let mut c = match s {
                Strategy::FiftyFifty => SyncController::fifty_fifty(start, cfg.gain, cfg.window_s)
                    .with_slope(SlopeSign::Fixed(cfg.slope_sign)),
                Strategy::Maximize => SyncController::maximize(start, cfg.probe_step, cfg.window_s),
            };
            c.target_parity = cfg.target_parity;
            c
        })
    });

    let mut samples = Vec::with_capacity(steps);
    for step in 0..steps {
        let t = step as f64 * cfg.window_s;
        let shared = link.shared_parity(t)?;
        let shared_counts = sample_counts(&shared, counts_rate(&link.source, false), cfg.window_s, rng)?;
        let mut filtered_counts = [CountPair::default(); 2];
        for (i, u) in [User::First, User::Second].into_iter().enumerate() {
            let p = link.filtered_parity(u, t)?;
            filtered_counts[i] = sample_counts(&p, counts_rate(&link.source, true), cfg.window_s, rng)?;
        }
        let phase = [link.users[0].lc_phase, link.users[1].lc_phase];
        let mut cycled = false;

        if let Some(ctrls) = controllers.as_mut() {
            for (i, c) in ctrls.iter_mut().enumerate() {
                if let Some(p) = filtered_counts[i].correlated_fraction() {
                    c.step_with_counts(t, p, filtered_counts[i]);
                }
            }
            let every = cfg.verify_every.max(1);
            if let Some(p) = shared_counts.correlated_fraction() {
                let observed = ParityDistribution::from_correlated(p, FRAC_PI_4);
                let checker = if step > 0 && step % every == 0 {
                    Some(0)
                } else if step % every == every / 2 && step >= every {
                    Some(1)
                } else {
                    None
                };
                if let Some(i) = checker {
                    cycled = matches!(
                        ctrls[i].sync_verify_and_cycle(&observed, cfg.shared_target, cfg.verify_tolerance),
                        VerifyOutcome::Cycled(_)
                    );
                }
            }
            for (i, c) in ctrls.iter().enumerate() {
                link.users[i].lc_phase = c.phase_setting();
            }
        }

        samples.push(LoopSample {
            time_s: t,
            shared_parity: shared.p_correlated,
            shared_counts,
            phase,
            filtered_counts,
            cycled,
        });
    }
    Ok(LoopRun { samples, controllers })
}

/// Writes `time_s, phase_rad, p_correlated, n_corr, n_anti` rows for one
/// controller's history.
pub fn write_history_csv<W: std::io::Write>(history: &[SyncRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time_s", "phase_rad", "p_correlated", "n_corr", "n_anti"])?;
    for r in history {
        w.write_record([
            r.time_s.to_string(),
            r.phase.to_string(),
            r.observed.to_string(),
            r.counts.n_correlated.to_string(),
            r.counts.n_anticorrelated.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
