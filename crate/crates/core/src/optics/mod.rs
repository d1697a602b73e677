//! Birefringent channel model.
//!
//! Each photon travels an ordered list of elements. Every element with an
//! excess path (fiber segments, the delay stage) adds that path to whichever
//! polarization currently sits on the slow axis; retarders add phase there
//! too. A [`ElementKind::Connector90`] swaps the roles of the axes for the
//! rest of the path. The per-basis-state excess path is kept in a ledger and
//! turned into partial distinguishability through a two-scale Gaussian
//! envelope: one length scale for the sum of both photons' excess (pump
//! coherence) and one for their difference (down-converted coherence).

mod counting;
mod drift;
mod source;

pub use counting::{sample_counts, CountPair};
pub use drift::{drift_value, DriftKind, DriftModel};
pub use source::{emit_pulse, PulseEvent, SourceModel, User};

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polarization::{
    parity_probabilities, rotation_operator, Amplitudes, DensityMatrix, DensityState, ParityDistribution, Pol, Target,
    TwoPhotonState, BASIS,
};

pub const DEFAULT_WAVELENGTH_UM: f64 = 0.810;
pub const DEFAULT_COHERENCE_DC_UM: f64 = 100.0;
pub const DEFAULT_COHERENCE_PUMP_UM: f64 = 1.0e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ElementKind {
    /// Birefringent fiber; `excess_um` is the slow-minus-fast optical path.
    FiberSegment {
        excess_um: f64,
        #[serde(default)]
        drift: Option<DriftModel>,
    },
    /// Adjustable slow-axis delay used for scanning and compensation.
    DelayStage { offset_um: f64 },
    /// Settable retarder on the slow axis.
    LiquidCrystal { phase: f64 },
    /// Fixed retarder on the slow axis.
    WavePlate { phase: f64 },
    /// 90 degree keyed connector; only acts while engaged.
    Connector90 {
        #[serde(default = "engaged_default")]
        engaged: bool,
    },
}

fn engaged_default() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub id: String,
    #[serde(flatten)]
    pub kind: ElementKind,
}

impl Element {
    pub fn fiber(id: impl Into<String>, excess_um: f64) -> Self {
        Self {
            id: id.into(),
            kind: ElementKind::FiberSegment { excess_um, drift: None },
        }
    }

    pub fn drifting_fiber(id: impl Into<String>, excess_um: f64, drift: DriftModel) -> Self {
        Self {
            id: id.into(),
            kind: ElementKind::FiberSegment {
                excess_um,
                drift: Some(drift),
            },
        }
    }

    pub fn stage(id: impl Into<String>, offset_um: f64) -> Self {
        Self {
            id: id.into(),
            kind: ElementKind::DelayStage { offset_um },
        }
    }

    pub fn liquid_crystal(id: impl Into<String>, phase: f64) -> Self {
        Self {
            id: id.into(),
            kind: ElementKind::LiquidCrystal { phase },
        }
    }

    pub fn wave_plate(id: impl Into<String>, phase: f64) -> Self {
        Self {
            id: id.into(),
            kind: ElementKind::WavePlate { phase },
        }
    }

    pub fn connector(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind: ElementKind::Connector90 { engaged: true },
        }
    }

    fn check(&self) -> Result<()> {
        let finite = match &self.kind {
            ElementKind::FiberSegment { excess_um, drift } => {
                if let Some(d) = drift {
                    d.validate()?;
                }
                excess_um.is_finite()
            }
            ElementKind::DelayStage { offset_um } => offset_um.is_finite(),
            ElementKind::LiquidCrystal { phase } | ElementKind::WavePlate { phase } => phase.is_finite(),
            ElementKind::Connector90 { .. } => true,
        };
        if finite {
            Ok(())
        } else {
            Err(Error::Config(format!("element `{}` has a non-finite value", self.id)))
        }
    }
}

/// Wavelength and the two coherence scales of the envelope model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpticalParams {
    pub wavelength_um: f64,
    pub coherence_dc_um: f64,
    pub coherence_pump_um: f64,
}

impl Default for OpticalParams {
    fn default() -> Self {
        Self {
            wavelength_um: DEFAULT_WAVELENGTH_UM,
            coherence_dc_um: DEFAULT_COHERENCE_DC_UM,
            coherence_pump_um: DEFAULT_COHERENCE_PUMP_UM,
        }
    }
}

impl OpticalParams {
    /// Both coherence lengths infinite: no dephasing at all.
    pub fn coherent(wavelength_um: f64) -> Self {
        Self {
            wavelength_um,
            coherence_dc_um: f64::INFINITY,
            coherence_pump_um: f64::INFINITY,
        }
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength_um
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength_um.is_finite() && self.wavelength_um > 0.0) {
            return Err(Error::Config(format!(
                "wavelength must be positive, got {}",
                self.wavelength_um
            )));
        }
        if !(self.coherence_dc_um > 0.0 && self.coherence_pump_um > 0.0) {
            return Err(Error::Config("coherence lengths must be positive".into()));
        }
        if self.coherence_pump_um < self.coherence_dc_um {
            return Err(Error::Config(format!(
                "pump coherence ({}) must not be shorter than down-converted coherence ({})",
                self.coherence_pump_um, self.coherence_dc_um
            )));
        }
        Ok(())
    }
}

/// `exp(-(u/L)^2)`; identically one for infinite `L`.
pub fn envelope(u: f64, coherence_um: f64) -> f64 {
    if coherence_um.is_infinite() {
        return 1.0;
    }
    (-(u / coherence_um).powi(2)).exp()
}

/// Photon paths plus the optical constants. Both photons may share a path.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTopology {
    paths: Vec<Vec<Element>>,
    route: [usize; 2],
    pub optics: OpticalParams,
}

impl ChannelTopology {
    /// Both photons in the same fiber.
    pub fn shared(elements: Vec<Element>, optics: OpticalParams) -> Result<Self> {
        Self::with_routes(vec![elements], [0, 0], optics)
    }

    /// Photon 1 on `first`, photon 2 on `second`.
    pub fn split(first: Vec<Element>, second: Vec<Element>, optics: OpticalParams) -> Result<Self> {
        Self::with_routes(vec![first, second], [0, 1], optics)
    }

    pub fn with_routes(paths: Vec<Vec<Element>>, route: [usize; 2], optics: OpticalParams) -> Result<Self> {
        let topo = Self { paths, route, optics };
        topo.validate()?;
        Ok(topo)
    }

    pub fn validate(&self) -> Result<()> {
        self.optics.validate()?;
        for (photon, &r) in self.route.iter().enumerate() {
            let path = self
                .paths
                .get(r)
                .ok_or_else(|| Error::Config(format!("photon {} routed to missing path {r}", photon + 1)))?;
            if path.is_empty() {
                return Err(Error::Config(format!("photon {} path is empty", photon + 1)));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for el in self.paths.iter().flatten() {
            el.check()?;
            if !seen.insert(el.id.as_str()) {
                return Err(Error::Config(format!("duplicate element id `{}`", el.id)));
            }
        }
        Ok(())
    }

    pub fn is_shared(&self) -> bool {
        self.route[0] == self.route[1]
    }

    pub fn path(&self, photon: usize) -> &[Element] {
        &self.paths[self.route[photon]]
    }

    pub fn paths(&self) -> &[Vec<Element>] {
        &self.paths
    }

    /// Index of the path holding element `id`.
    pub fn path_of(&self, id: &str) -> Option<usize> {
        self.paths.iter().position(|p| p.iter().any(|e| e.id == id))
    }

    pub fn element(&self, id: &str) -> Option<&Element> {
        self.paths.iter().flatten().find(|e| e.id == id)
    }

    pub fn element_mut(&mut self, id: &str) -> Option<&mut Element> {
        self.paths.iter_mut().flatten().find(|e| e.id == id)
    }

    pub fn set_stage_offset(&mut self, id: &str, offset_um: f64) -> Result<()> {
        match self.element_mut(id).map(|e| &mut e.kind) {
            Some(ElementKind::DelayStage { offset_um: o }) => {
                *o = offset_um;
                Ok(())
            }
            Some(_) => Err(Error::Config(format!("element `{id}` is not a delay stage"))),
            None => Err(Error::Config(format!("no element `{id}` in topology"))),
        }
    }

    pub fn stage_offset(&self, id: &str) -> Result<f64> {
        match self.element(id).map(|e| &e.kind) {
            Some(ElementKind::DelayStage { offset_um }) => Ok(*offset_um),
            Some(_) => Err(Error::Config(format!("element `{id}` is not a delay stage"))),
            None => Err(Error::Config(format!("no element `{id}` in topology"))),
        }
    }

    pub fn set_retarder_phase(&mut self, id: &str, value: f64) -> Result<()> {
        match self.element_mut(id).map(|e| &mut e.kind) {
            Some(ElementKind::LiquidCrystal { phase }) | Some(ElementKind::WavePlate { phase }) => {
                *phase = value;
                Ok(())
            }
            Some(_) => Err(Error::Config(format!("element `{id}` is not a retarder"))),
            None => Err(Error::Config(format!("no element `{id}` in topology"))),
        }
    }

    pub fn retarder_phase(&self, id: &str) -> Result<f64> {
        match self.element(id).map(|e| &e.kind) {
            Some(ElementKind::LiquidCrystal { phase }) | Some(ElementKind::WavePlate { phase }) => Ok(*phase),
            Some(_) => Err(Error::Config(format!("element `{id}` is not a retarder"))),
            None => Err(Error::Config(format!("no element `{id}` in topology"))),
        }
    }

    /// Flips every Connector90 on path `path`. Returns how many were toggled.
    pub fn toggle_connectors(&mut self, path: usize) -> usize {
        let mut n = 0;
        for el in self.paths[path].iter_mut() {
            if let ElementKind::Connector90 { engaged } = &mut el.kind {
                *engaged = !*engaged;
                n += 1;
            }
        }
        n
    }
}

/// Per-photon accumulation along one path.
#[derive(Debug, Clone, Copy, Default)]
struct PathLedger {
    /// Excess slow-axis path per lab polarization (index by `Pol::index`).
    excess_um: [f64; 2],
    /// Retarder phase per lab polarization.
    phase: [f64; 2],
    /// Odd number of engaged connectors: photon leaves rotated by 90 degrees.
    rotated: bool,
}

fn walk(path: &[Element], time: f64) -> PathLedger {
    let mut ledger = PathLedger::default();
    // lab polarization currently on the slow axis
    let mut slow = Pol::V;
    for el in path {
        let s = slow.index();
        match &el.kind {
            ElementKind::FiberSegment { excess_um, drift } => {
                let d = drift.as_ref().map_or(0.0, |m| drift_value(m, time));
                ledger.excess_um[s] += excess_um + d;
            }
            ElementKind::DelayStage { offset_um } => ledger.excess_um[s] += offset_um,
            ElementKind::LiquidCrystal { phase } | ElementKind::WavePlate { phase } => ledger.phase[s] += phase,
            ElementKind::Connector90 { engaged: true } => {
                slow = match slow {
                    Pol::H => Pol::V,
                    Pol::V => Pol::H,
                };
                ledger.rotated = !ledger.rotated;
            }
            ElementKind::Connector90 { engaged: false } => {}
        }
    }
    ledger
}

/// A propagated state with its distinguishability bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedState {
    pub density: DensityState,
    /// `(T1, T2)` per input basis state, in canonical order, in micrometres.
    pub ledger: [(f64, f64); 4],
}

impl AnnotatedState {
    /// Coherence factor between basis states `a` and `b`.
    pub fn envelope(&self, a: usize, b: usize, optics: &OpticalParams) -> f64 {
        pair_envelope(self.ledger[a], self.ledger[b], optics)
    }
}

fn pair_envelope(a: (f64, f64), b: (f64, f64), optics: &OpticalParams) -> f64 {
    let ds = (a.0 + a.1) - (b.0 + b.1);
    let dd = (a.0 - a.1) - (b.0 - b.1);
    envelope(ds, optics.coherence_pump_um) * envelope(dd, optics.coherence_dc_um)
}

pub fn propagate(input: &TwoPhotonState, topology: &ChannelTopology, time: f64) -> Result<AnnotatedState> {
    topology.validate()?;
    if (input.norm_sqr() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidState("input state is not normalized".into()));
    }
    let first = walk(topology.path(0), time);
    let second = if topology.is_shared() {
        first
    } else {
        walk(topology.path(1), time)
    };
    let k = topology.optics.wavenumber();

    let mut ledger = [(0.0, 0.0); 4];
    let mut amps = Amplitudes::zeros();
    for (i, &(p1, p2)) in BASIS.iter().enumerate() {
        let t1 = first.excess_um[p1.index()];
        let t2 = second.excess_um[p2.index()];
        ledger[i] = (t1, t2);
        let phase = k * (t1 + t2) + first.phase[p1.index()] + second.phase[p2.index()];
        amps[i] = input.amplitudes()[i] * Complex64::from_polar(1.0, phase);
    }

    let mut rho =
        DensityMatrix::from_fn(|r, c| amps[r] * amps[c].conj() * pair_envelope(ledger[r], ledger[c], &topology.optics));
    let exit = match (first.rotated, second.rotated) {
        (true, true) => Some(Target::Both),
        (true, false) => Some(Target::First),
        (false, true) => Some(Target::Second),
        (false, false) => None,
    };
    if let Some(t) = exit {
        let u = rotation_operator(t, FRAC_PI_2);
        rho = u * rho * u.adjoint();
    }
    Ok(AnnotatedState {
        density: DensityState::from_trusted(rho),
        ledger,
    })
}

pub fn coincidence_parity(annotated: &AnnotatedState, basis_angle: f64) -> ParityDistribution {
    parity_probabilities(&annotated.density, basis_angle)
}

/// Parity at 45 degrees for `input` sent through `topology` at `time`.
pub fn parity_at_45(input: &TwoPhotonState, topology: &ChannelTopology, time: f64) -> Result<ParityDistribution> {
    Ok(coincidence_parity(
        &propagate(input, topology, time)?,
        std::f64::consts::FRAC_PI_4,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polarization::{apply_phase_on_v, apply_rotation, bell_state, phi_with_phase, BellKind};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_4;

    fn optics() -> OpticalParams {
        OpticalParams::default()
    }

    #[test]
    fn singlet_dip_in_single_fiber() {
        let psi = bell_state(BellKind::PsiMinus);
        for delta in [0.0, 20.0, 50.0, 80.0, 150.0, 400.0] {
            let topo = ChannelTopology::shared(vec![Element::fiber("f", delta)], optics()).unwrap();
            let a = propagate(&psi, &topo, 0.0).unwrap();
            assert_abs_diff_eq!(
                a.envelope(1, 2, &topo.optics),
                envelope(2.0 * delta, 100.0),
                epsilon = 1e-15
            );
            let p = coincidence_parity(&a, FRAC_PI_4).p_correlated;
            assert_abs_diff_eq!(p, (1.0 - envelope(2.0 * delta, 100.0)) / 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn phi_oscillates_in_single_fiber() {
        let phi = bell_state(BellKind::PhiPlus);
        let o = optics();
        for delta in [0.0, 0.1, 0.2025, 1000.3, 15000.0] {
            let topo = ChannelTopology::shared(vec![Element::fiber("f", delta)], o).unwrap();
            let a = propagate(&phi, &topo, 0.0).unwrap();
            let gamma = envelope(2.0 * delta, o.coherence_pump_um);
            assert_abs_diff_eq!(a.envelope(0, 3, &o), gamma, epsilon = 1e-15);
            let theta = 2.0 * o.wavenumber() * delta;
            let p = coincidence_parity(&a, FRAC_PI_4).p_correlated;
            assert_abs_diff_eq!(p, (1.0 + gamma * theta.cos()) / 2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn split_fibers_envelope_and_phase() {
        let o = optics();
        let (da, db) = (30.0, 12.5);
        let topo = ChannelTopology::split(vec![Element::fiber("a", da)], vec![Element::fiber("b", db)], o).unwrap();
        let a = propagate(&bell_state(BellKind::PsiMinus), &topo, 0.0).unwrap();
        let expected = envelope(da - db, o.coherence_pump_um) * envelope(da + db, o.coherence_dc_um);
        assert_abs_diff_eq!(a.envelope(1, 2, &o), expected, epsilon = 1e-15);
        // relative phase k(da - db) between VH and HV, on top of the singlet's sign
        let rho = a.density.matrix();
        let rel = (-rho[(2, 1)]).arg();
        let want = o.wavenumber() * (da - db);
        let diff = (rel - want).rem_euclid(2.0 * PI);
        assert!(diff < 1e-9 || (2.0 * PI - diff) < 1e-9);
    }

    #[test]
    fn fully_dephased_singlet_is_balanced() {
        let topo = ChannelTopology::shared(vec![Element::fiber("f", 5000.0)], optics()).unwrap();
        let a = propagate(&bell_state(BellKind::PsiMinus), &topo, 0.0).unwrap();
        assert_abs_diff_eq!(coincidence_parity(&a, FRAC_PI_4).p_correlated, 0.5, epsilon = 1e-12);
        // still perfectly anti-correlated in the fiber eigenbasis
        assert_abs_diff_eq!(coincidence_parity(&a, 0.0).p_correlated, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn phi_parity_follows_oracle_when_coherent() {
        let o = optics();
        for theta in [0.0, 0.3, 1.7, 3.0] {
            let phase_per_photon = theta / 2.0;
            let topo = ChannelTopology::shared(vec![Element::liquid_crystal("lc", phase_per_photon)], o).unwrap();
            let a = propagate(&bell_state(BellKind::PhiPlus), &topo, 0.0).unwrap();
            let oracle = parity_probabilities(&phi_with_phase(theta), FRAC_PI_4);
            assert_abs_diff_eq!(
                coincidence_parity(&a, FRAC_PI_4).p_correlated,
                oracle.p_correlated,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn connector_pair_flips_ledger_sign() {
        let o = optics();
        let straight = ChannelTopology::shared(vec![Element::fiber("f", 40.0)], o).unwrap();
        let keyed = ChannelTopology::shared(
            vec![
                Element::connector("in"),
                Element::fiber("f", 40.0),
                Element::connector("out"),
            ],
            o,
        )
        .unwrap();
        let psi = bell_state(BellKind::PsiMinus);
        let a = propagate(&psi, &straight, 0.0).unwrap();
        let b = propagate(&psi, &keyed, 0.0).unwrap();
        assert_eq!(a.ledger[1], (0.0, 40.0));
        assert_eq!(b.ledger[1], (40.0, 0.0));
    }

    #[test]
    fn empty_path_is_rejected() {
        assert!(matches!(
            ChannelTopology::shared(vec![], optics()),
            Err(Error::Config(_))
        ));
        assert!(ChannelTopology::split(vec![Element::fiber("a", 0.0)], vec![], optics()).is_err());
    }

    #[test]
    fn pump_shorter_than_dc_is_rejected() {
        let o = OpticalParams {
            coherence_pump_um: 10.0,
            ..optics()
        };
        assert!(ChannelTopology::shared(vec![Element::fiber("a", 0.0)], o).is_err());
    }

    #[test]
    fn envelope_shape() {
        assert_eq!(envelope(0.0, 100.0), 1.0);
        let mut last = 1.0;
        for i in 1..200 {
            let u = i as f64 * 5.0;
            let g = envelope(u, 100.0);
            assert_eq!(g, envelope(-u, 100.0));
            assert!(g < last);
            last = g;
        }
    }

    #[test]
    fn wave_plates_are_transparent_to_singlet() {
        let o = optics();
        let plates = |wp: f64| {
            ChannelTopology::split(
                vec![Element::fiber("a", 3.3), Element::wave_plate("wa", wp)],
                vec![Element::fiber("b", 3.1), Element::wave_plate("wb", wp)],
                o,
            )
            .unwrap()
        };
        let psi = bell_state(BellKind::PsiMinus);
        let before = parity_at_45(&psi, &plates(0.0), 0.0).unwrap();
        let after = parity_at_45(&psi, &plates(FRAC_PI_4), 0.0).unwrap();
        assert_abs_diff_eq!(before.p_correlated, after.p_correlated, epsilon = 1e-12);

        let filtered = ChannelTopology::shared(vec![Element::wave_plate("wa", FRAC_PI_4)], o).unwrap();
        let p = parity_at_45(&bell_state(BellKind::PhiMinus), &filtered, 0.0).unwrap();
        assert_abs_diff_eq!(p.p_correlated, 0.5, epsilon = 1e-12);
    }

    /// Phase of the interference term of a parity curve, recovered from
    /// parities at two basis-independent phase probes.
    fn fringe_phase(p_at: impl Fn(f64) -> f64) -> f64 {
        // p(x) = (1 + V cos(phi + x))/2 for an added reference phase x
        let c = 2.0 * p_at(0.0) - 1.0;
        let s = -(2.0 * p_at(FRAC_PI_2) - 1.0);
        s.atan2(c)
    }

    #[test]
    fn filtered_pairs_accumulate_phase_twice_as_fast() {
        let o = OpticalParams::coherent(DEFAULT_WAVELENGTH_UM);
        let shared_phase = |drift: f64| {
            fringe_phase(|x| {
                let topo = ChannelTopology::split(
                    vec![Element::fiber("a", drift), Element::liquid_crystal("ref", x)],
                    vec![Element::fiber("b", 0.0)],
                    o,
                )
                .unwrap();
                // Psi- shows anti-correlation; flip to read the fringe
                1.0 - parity_at_45(&bell_state(BellKind::PsiMinus), &topo, 0.0)
                    .unwrap()
                    .p_correlated
            })
        };
        let filtered_phase = |drift: f64| {
            fringe_phase(|x| {
                // both photons cross the reference retarder, so x/2 each
                let topo = ChannelTopology::shared(
                    vec![Element::fiber("a", drift), Element::liquid_crystal("ref", x / 2.0)],
                    o,
                )
                .unwrap();
                parity_at_45(&bell_state(BellKind::PhiPlus), &topo, 0.0)
                    .unwrap()
                    .p_correlated
            })
        };
        let step = 0.01;
        let d_shared = shared_phase(step) - shared_phase(0.0);
        let d_filtered = filtered_phase(step) - filtered_phase(0.0);
        assert_abs_diff_eq!(d_shared.abs(), o.wavenumber() * step, epsilon = 1e-9);
        assert_abs_diff_eq!(d_filtered.abs() / d_shared.abs(), 2.0, epsilon = 1e-9);
    }

    /// Composes the chain from polarization-core operations only.
    pub(crate) fn oracle_state(input: &TwoPhotonState, topo: &ChannelTopology, time: f64) -> TwoPhotonState {
        let k = topo.optics.wavenumber();
        let mut state = input.clone();
        let passes: Vec<(Target, &[Element])> = if topo.is_shared() {
            vec![(Target::Both, topo.path(0))]
        } else {
            vec![(Target::First, topo.path(0)), (Target::Second, topo.path(1))]
        };
        for (target, path) in passes {
            for el in path {
                state = match &el.kind {
                    ElementKind::FiberSegment { excess_um, drift } => {
                        let d = drift.as_ref().map_or(0.0, |m| drift_value(m, time));
                        apply_phase_on_v(&state, target, k * (excess_um + d))
                    }
                    ElementKind::DelayStage { offset_um } => apply_phase_on_v(&state, target, k * offset_um),
                    ElementKind::LiquidCrystal { phase } | ElementKind::WavePlate { phase } => {
                        apply_phase_on_v(&state, target, *phase)
                    }
                    ElementKind::Connector90 { engaged: true } => apply_rotation(&state, target, FRAC_PI_2),
                    ElementKind::Connector90 { engaged: false } => state,
                };
            }
        }
        state
    }

    fn arb_element(i: usize) -> impl Strategy<Value = Element> {
        prop_oneof![
            (-50.0f64..50.0).prop_map(move |d| Element::fiber(format!("f{i}"), d)),
            (-50.0f64..50.0).prop_map(move |d| Element::stage(format!("s{i}"), d)),
            (-4.0f64..4.0).prop_map(move |p| Element::liquid_crystal(format!("l{i}"), p)),
            (-4.0f64..4.0).prop_map(move |p| Element::wave_plate(format!("w{i}"), p)),
            any::<bool>().prop_map(move |e| Element {
                id: format!("c{i}"),
                kind: ElementKind::Connector90 { engaged: e }
            }),
        ]
    }

    fn arb_path(offset: usize) -> impl Strategy<Value = Vec<Element>> {
        (1usize..7).prop_flat_map(move |n| (0..n).map(|i| arb_element(offset + i)).collect::<Vec<_>>())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn coherent_chain_matches_composed_unitary(
            amps in prop::array::uniform8(-1.0f64..1.0),
            first in arb_path(0),
            second in arb_path(100),
            shared in any::<bool>(),
            angle in -3.2f64..3.2,
        ) {
            prop_assume!(amps.iter().any(|x| x.abs() > 1e-3));
            let state = TwoPhotonState::from_amplitudes(std::array::from_fn(|i| Complex64::new(amps[2*i], amps[2*i+1]))).unwrap();
            let o = OpticalParams::coherent(DEFAULT_WAVELENGTH_UM);
            let topo = if shared {
                ChannelTopology::shared(first, o).unwrap()
            } else {
                ChannelTopology::split(first, second, o).unwrap()
            };
            let got = coincidence_parity(&propagate(&state, &topo, 0.0).unwrap(), angle);
            let want = parity_probabilities(&oracle_state(&state, &topo, 0.0), angle);
            prop_assert!((got.p_correlated - want.p_correlated).abs() < 1e-10);
        }

        #[test]
        fn propagated_density_is_valid(
            delta in -500.0f64..500.0,
            other in -500.0f64..500.0,
            phase in -4.0f64..4.0,
        ) {
            let topo = ChannelTopology::split(
                vec![Element::fiber("a", delta), Element::liquid_crystal("l", phase)],
                vec![Element::fiber("b", other)],
                optics(),
            ).unwrap();
            for kind in [BellKind::PsiMinus, BellKind::PhiPlus, BellKind::PsiPlus] {
                let a = propagate(&bell_state(kind), &topo, 0.0).unwrap();
                prop_assert!(DensityState::new(*a.density.matrix()).is_ok());
                let pops = a.density.populations();
                prop_assert!(pops.iter().all(|p| *p >= -1e-12 && *p <= 1.0 + 1e-12));
            }
        }

        #[test]
        fn dip_ignores_liquid_crystal_phase(delta in -400.0f64..400.0, phase in -7.0f64..7.0) {
            let psi = bell_state(BellKind::PsiMinus);
            let bare = ChannelTopology::shared(vec![Element::fiber("f", delta)], optics()).unwrap();
            let lc = ChannelTopology::shared(vec![Element::fiber("f", delta), Element::liquid_crystal("lc", phase)], optics()).unwrap();
            let a = parity_at_45(&psi, &bare, 0.0).unwrap();
            let b = parity_at_45(&psi, &lc, 0.0).unwrap();
            prop_assert!((a.p_correlated - b.p_correlated).abs() < 1e-12);
        }
    }
}
