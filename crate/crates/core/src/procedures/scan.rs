//! Delay scans, dip detection and the two-orientation calibration.

use std::f64::consts::FRAC_PI_4;

use rand::Rng;

use crate::error::{Error, Result};
use crate::optics::{coincidence_parity, propagate, sample_counts, ChannelTopology, CountPair, Element, OpticalParams};
use crate::polarization::{ParityDistribution, TwoPhotonState};

/// How each scan point is acquired.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Acquisition {
    /// Exact parity, no counts (infinite-rate limit).
    Analytic,
    /// Poisson coincidence counts at `rate` pairs/s over `window` seconds.
    Counted { rate: f64, window: f64 },
}

impl Acquisition {
    fn window(&self) -> f64 {
        match self {
            Acquisition::Analytic => 0.0,
            Acquisition::Counted { window, .. } => *window,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint {
    pub time_s: f64,
    pub offset_um: f64,
    pub parity: ParityDistribution,
    pub counts: CountPair,
    counted: bool,
}

impl ScanPoint {
    /// Correlated fraction of the recorded coincidences, or the exact parity
    /// when the point was not counted.
    pub fn signal(&self) -> f64 {
        if self.counted {
            self.counts.correlated_fraction().unwrap_or(0.5)
        } else {
            self.parity.p_correlated
        }
    }

    /// One-sigma uncertainty of [`Self::signal`] at correlated fraction `p`.
    fn sigma_at(&self, p: f64) -> f64 {
        if !self.counted {
            return 0.0;
        }
        match self.counts.total() {
            0 => 0.5,
            n => (p * (1.0 - p) / n as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanTrace {
    points: Vec<ScanPoint>,
}

impl ScanTrace {
    pub fn new(points: Vec<ScanPoint>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "a scan trace needs at least 3 points, got {}",
                points.len()
            )));
        }
        if points.windows(2).any(|w| w[1].offset_um <= w[0].offset_um) {
            return Err(Error::InvalidArgument(
                "scan offsets must be strictly increasing".into(),
            ));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[ScanPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time_s", "offset_um", "p_correlated", "n_corr", "n_anti"])?;
        for p in &self.points {
            w.write_record([
                p.time_s.to_string(),
                p.offset_um.to_string(),
                p.parity.p_correlated.to_string(),
                p.counts.n_correlated.to_string(),
                p.counts.n_anticorrelated.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Offsets `lo, lo+step, ...` up to and including `hi` (within half a step).
pub fn scan_offsets(range: (f64, f64), step: f64) -> Result<Vec<f64>> {
    let (lo, hi) = range;
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("scan step must be > 0, got {step}")));
    }
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::InvalidArgument(format!("empty scan range ({lo}, {hi})")));
    }
    let n = ((hi - lo) / step + 0.5).floor() as usize + 1;
    Ok((0..n).map(|i| lo + i as f64 * step).collect())
}

/// Steps the delay stage across `range`, measuring at 45 degrees at every
/// offset. Drift is evaluated once, at `start_time`.
#[allow(clippy::too_many_arguments)]
pub fn scan<R: Rng + ?Sized>(
    topology: &ChannelTopology,
    stage_id: &str,
    input: &TwoPhotonState,
    range: (f64, f64),
    step: f64,
    acquisition: Acquisition,
    start_time: f64,
    rng: &mut R,
) -> Result<ScanTrace> {
    let mut topo = topology.clone();
    topo.stage_offset(stage_id)?;
    let offsets = scan_offsets(range, step)?;
    let window = acquisition.window();
    let mut points = Vec::with_capacity(offsets.len());
    for (i, &offset) in offsets.iter().enumerate() {
        topo.set_stage_offset(stage_id, offset)?;
        let parity = coincidence_parity(&propagate(input, &topo, start_time)?, FRAC_PI_4);
        let (counts, counted) = match acquisition {
            Acquisition::Analytic => (CountPair::default(), false),
            Acquisition::Counted { rate, window } => (sample_counts(&parity, rate, window, rng)?, true),
        };
        points.push(ScanPoint {
            time_s: start_time + i as f64 * window,
            offset_um: offset,
            parity,
            counts,
            counted,
        });
    }
    ScanTrace::new(points)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dip {
    pub center_um: f64,
    pub width_um: f64,
    pub depth: f64,
    pub baseline: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Smallest threshold used when the trace carries no counting noise.
const ANALYTIC_THRESHOLD: f64 = 1e-6;

/// Thresholded-centroid dip finder.
///
/// Baseline is the median of the outer 20% of points (10% per end). Points
/// whose signal falls more than three standard deviations below the baseline
/// are candidates; the contiguous run of candidates around the deepest point
/// is weighted by `baseline - signal` to give the centre. The width is the
/// full width at half depth, linearly interpolated.
pub fn detect_dip(trace: &ScanTrace) -> Result<Dip> {
    detect_dip_named(trace, "single")
}

fn detect_dip_named(trace: &ScanTrace, scan: &'static str) -> Result<Dip> {
    let pts = trace.points();
    let n = pts.len();
    let edge = (n as f64 * 0.1).ceil() as usize;
    if 2 * edge >= n {
        return Err(Error::InvalidArgument(format!(
            "trace of {n} points has no room for a baseline region"
        )));
    }
    let signal: Vec<f64> = pts.iter().map(ScanPoint::signal).collect();
    let mut outer: Vec<f64> = signal[..edge].iter().chain(&signal[n - edge..]).copied().collect();
    let baseline = median(&mut outer);

    let below: Vec<bool> = pts
        .iter()
        .zip(&signal)
        .map(|(p, &s)| {
            let thr = (3.0 * p.sigma_at(baseline)).max(ANALYTIC_THRESHOLD);
            s < baseline - thr
        })
        .collect();

    let deepest = (0..n)
        .filter(|&i| below[i])
        .min_by(|&a, &b| signal[a].total_cmp(&signal[b]))
        .ok_or_else(|| Error::NoDipFound {
            scan,
            detail: format!("no point fell below the baseline {baseline:.4} by more than 3 sigma"),
        })?;

    let mut lo = deepest;
    while lo > 0 && below[lo - 1] {
        lo -= 1;
    }
    let mut hi = deepest;
    while hi + 1 < n && below[hi + 1] {
        hi += 1;
    }

    let (mut wsum, mut xsum) = (0.0, 0.0);
    for i in lo..=hi {
        let w = baseline - signal[i];
        wsum += w;
        xsum += w * pts[i].offset_um;
    }
    let center = xsum / wsum;

    let depth = baseline - signal[deepest];
    let half = baseline - depth / 2.0;
    let crossing = |inner: usize, outer: usize| -> f64 {
        let (x0, y0) = (pts[inner].offset_um, signal[inner]);
        let (x1, y1) = (pts[outer].offset_um, signal[outer]);
        if (y1 - y0).abs() < f64::EPSILON {
            return x1;
        }
        x0 + (half - y0) * (x1 - x0) / (y1 - y0)
    };
    let mut l = deepest;
    while l > 0 && signal[l - 1] <= half {
        l -= 1;
    }
    let left = if l == 0 { pts[0].offset_um } else { crossing(l, l - 1) };
    let mut r = deepest;
    while r + 1 < n && signal[r + 1] <= half {
        r += 1;
    }
    let right = if r + 1 == n {
        pts[n - 1].offset_um
    } else {
        crossing(r, r + 1)
    };

    Ok(Dip {
        center_um: center,
        width_um: right - left,
        depth,
        baseline,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationResult {
    pub dip_center_1: f64,
    pub dip_center_2: f64,
    pub calibration_point: f64,
    pub dip_width_1: f64,
    pub dip_width_2: f64,
}

impl CalibrationResult {
    fn from_dips(first: Dip, second: Dip) -> Self {
        Self {
            dip_center_1: first.center_um,
            dip_center_2: second.center_um,
            calibration_point: (first.center_um + second.center_um) / 2.0,
            dip_width_1: first.width_um,
            dip_width_2: second.width_um,
        }
    }
}

/// Both traces of a calibration run, for export.
#[derive(Debug, Clone)]
pub struct CalibrationRun {
    pub result: CalibrationResult,
    pub straight: ScanTrace,
    pub rotated: ScanTrace,
}

/// Scans once as configured, flips every 90-degree connector on the stage's
/// path and scans again. The midpoint of the two dip centres is written back
/// as the stage offset; connectors are restored to their original state.
#[allow(clippy::too_many_arguments)]
pub fn calibrate<R: Rng + ?Sized>(
    topology: &mut ChannelTopology,
    stage_id: &str,
    input: &TwoPhotonState,
    range: (f64, f64),
    step: f64,
    acquisition: Acquisition,
    start_time: f64,
    rng: &mut R,
) -> Result<CalibrationRun> {
    let path = topology
        .path_of(stage_id)
        .ok_or_else(|| Error::Config(format!("no element `{stage_id}` in topology")))?;
    topology.stage_offset(stage_id)?;

    let straight = scan(topology, stage_id, input, range, step, acquisition, start_time, rng)?;
    let first = detect_dip_named(&straight, "first")?;

    let mut flipped = topology.clone();
    if flipped.toggle_connectors(path) == 0 {
        return Err(Error::Config(
            "calibration needs 90-degree connectors on the stage's path".into(),
        ));
    }
    let second_start = start_time + straight.len() as f64 * acquisition.window();
    let rotated = scan(&flipped, stage_id, input, range, step, acquisition, second_start, rng)?;
    let second = detect_dip_named(&rotated, "second")?;

    let result = CalibrationResult::from_dips(first, second);
    topology.set_stage_offset(stage_id, result.calibration_point)?;
    Ok(CalibrationRun {
        result,
        straight,
        rotated,
    })
}

/// Element ids used by [`calibration_rig`].
pub const RIG_STAGE: &str = "stage";
pub const RIG_FIBER: &str = "fiber";
pub const RIG_LC: &str = "lc";

/// Bench for calibrating one fiber: a fixed walk-off `rig_offset_um` in the
/// source/analyser (outside the keyed connectors), then the fiber under test,
/// its compensating stage and a liquid crystal, all between a disengaged
/// connector pair. Both photons travel the same path.
pub fn calibration_rig(
    rig_offset_um: f64,
    fiber_um: f64,
    lc_phase: f64,
    optics: OpticalParams,
) -> Result<ChannelTopology> {
    let disengaged = |id: &str| Element {
        id: id.into(),
        kind: crate::optics::ElementKind::Connector90 { engaged: false },
    };
    ChannelTopology::shared(
        vec![
            Element::fiber("rig", rig_offset_um),
            disengaged("key.in"),
            Element::fiber(RIG_FIBER, fiber_um),
            Element::stage(RIG_STAGE, 0.0),
            Element::liquid_crystal(RIG_LC, lc_phase),
            disengaged("key.out"),
        ],
        optics,
    )
}
