//! Time-encoded key exchange over the shared singlet.
//!
//! Each station adds a fixed delay to its detection timestamp when it
//! measures in the 0° basis. The coincidence offset `bob_time - alice_time`
//! then lands on one of four signatures `{0, +d_B, -d_A, d_B - d_A}`, so the
//! basis pair can be read off the timing alone.

use std::f64::consts::FRAC_PI_4;
use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{propagate, ChannelTopology};
use crate::polarization::{bell_state, joint_probabilities, BellKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    Zero,
    FortyFive,
}

impl Basis {
    pub const ALL: [Basis; 2] = [Basis::Zero, Basis::FortyFive];

    pub fn angle(self) -> f64 {
        match self {
            Basis::Zero => 0.0,
            Basis::FortyFive => FRAC_PI_4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Basis::Zero => "0",
            Basis::FortyFive => "45",
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub const DEFAULT_WINDOW_PS: f64 = 100.0;
pub const DEFAULT_JITTER_PS: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserStation {
    pub name: String,
    /// Extra timestamp delay on the 0° arm.
    pub basis_delay_0_ps: f64,
    pub seed: u64,
    #[serde(default = "default_jitter")]
    pub jitter_ps: f64,
}

fn default_jitter() -> f64 {
    DEFAULT_JITTER_PS
}

impl UserStation {
    pub fn new(name: impl Into<String>, basis_delay_0_ps: f64, seed: u64) -> Self {
        Self {
            name: name.into(),
            basis_delay_0_ps,
            seed,
            jitter_ps: DEFAULT_JITTER_PS,
        }
    }

    pub fn with_jitter(mut self, jitter_ps: f64) -> Self {
        self.jitter_ps = jitter_ps;
        self
    }

    pub fn delay(&self, basis: Basis) -> f64 {
        match basis {
            Basis::Zero => self.basis_delay_0_ps,
            Basis::FortyFive => 0.0,
        }
    }
}

/// `(signature, alice_basis, bob_basis)` for every basis pair.
pub fn signatures(alice: &UserStation, bob: &UserStation) -> [(f64, Basis, Basis); 4] {
    let (da, db) = (alice.basis_delay_0_ps, bob.basis_delay_0_ps);
    [
        (0.0, Basis::FortyFive, Basis::FortyFive),
        (db, Basis::FortyFive, Basis::Zero),
        (-da, Basis::Zero, Basis::FortyFive),
        (db - da, Basis::Zero, Basis::Zero),
    ]
}

/// Checks that the four signatures can be told apart with `window`.
pub fn validate_stations(alice: &UserStation, bob: &UserStation, window_ps: f64) -> Result<()> {
    let mut problems = Vec::new();
    if window_ps.is_nan() || window_ps <= 0.0 {
        problems.push(format!("coincidence window must be > 0, got {window_ps}"));
    }
    for s in [alice, bob] {
        if !s.basis_delay_0_ps.is_finite() || s.basis_delay_0_ps <= 4.0 * window_ps {
            problems.push(format!(
                "station `{}`: basis delay {} ps must exceed 4 x window ({} ps)",
                s.name,
                s.basis_delay_0_ps,
                4.0 * window_ps
            ));
        }
        if s.jitter_ps.is_nan() || s.jitter_ps < 0.0 {
            problems.push(format!("station `{}`: jitter must be >= 0", s.name));
        }
    }
    let sig = signatures(alice, bob);
    for i in 0..4 {
        for j in i + 1..4 {
            if (sig[i].0 - sig[j].0).abs() < 2.0 * window_ps {
                problems.push(format!(
                    "signatures {} ps ({}/{}) and {} ps ({}/{}) are closer than 2 x window",
                    sig[i].0, sig[i].1, sig[i].2, sig[j].0, sig[j].1, sig[j].2
                ));
            }
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(problems))
    }
}

/// Basis pair whose signature lies within `window` of `delta_t`, or `None`.
pub fn classify_coincidence(
    delta_t_ps: f64,
    alice: &UserStation,
    bob: &UserStation,
    window_ps: f64,
) -> Result<Option<(Basis, Basis)>> {
    validate_stations(alice, bob, window_ps)?;
    Ok(classify_unchecked(delta_t_ps, &signatures(alice, bob), window_ps))
}

fn classify_unchecked(delta_t_ps: f64, sig: &[(f64, Basis, Basis); 4], window_ps: f64) -> Option<(Basis, Basis)> {
    sig.iter()
        .find(|(s, _, _)| (delta_t_ps - s).abs() <= window_ps)
        .map(|&(_, a, b)| (a, b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseRecord {
    pub pulse_id: u64,
    pub alice_basis: Basis,
    pub bob_basis: Basis,
    pub alice_time_ps: f64,
    pub bob_time_ps: f64,
    pub alice_bit: u8,
    pub bob_bit: u8,
    /// What the users infer from timing.
    pub classified: Option<(Basis, Basis)>,
}

impl PulseRecord {
    pub fn delta_t_ps(&self) -> f64 {
        self.bob_time_ps - self.alice_time_ps
    }

    pub fn matched(&self) -> bool {
        matches!(self.classified, Some((a, b)) if a == b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiftedKey {
    pub alice_bits: Vec<u8>,
    /// Already flipped so that a perfect channel gives equal keys.
    pub bob_bits: Vec<u8>,
    pub matched_pulse_ids: Vec<u64>,
    pub matched_bases: Vec<Basis>,
    pub qber: f64,
    pub sifted_fraction: f64,
}

impl SiftedKey {
    pub fn from_records(records: &[PulseRecord]) -> Self {
        let mut key = SiftedKey {
            alice_bits: Vec::new(),
            bob_bits: Vec::new(),
            matched_pulse_ids: Vec::new(),
            matched_bases: Vec::new(),
            qber: 0.0,
            sifted_fraction: 0.0,
        };
        for r in records.iter().filter(|r| r.matched()) {
            key.alice_bits.push(r.alice_bit);
            key.bob_bits.push(1 - r.bob_bit);
            key.matched_pulse_ids.push(r.pulse_id);
            key.matched_bases
                .push(r.classified.map(|(a, _)| a).unwrap_or(r.alice_basis));
        }
        key.qber = key.qber_where(|_| true).unwrap_or(0.0);
        if !records.is_empty() {
            key.sifted_fraction = key.len() as f64 / records.len() as f64;
        }
        key
    }

    pub fn len(&self) -> usize {
        self.alice_bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alice_bits.is_empty()
    }

    fn qber_where(&self, keep: impl Fn(Basis) -> bool) -> Option<f64> {
        let (mut n, mut err) = (0usize, 0usize);
        for i in 0..self.len() {
            if keep(self.matched_bases[i]) {
                n += 1;
                err += usize::from(self.alice_bits[i] != self.bob_bits[i]);
            }
        }
        (n > 0).then(|| err as f64 / n as f64)
    }

    /// QBER restricted to one basis, with the number of bits it covers.
    pub fn basis_qber(&self, basis: Basis) -> Option<(f64, usize)> {
        let n = self.matched_bases.iter().filter(|&&b| b == basis).count();
        self.qber_where(|b| b == basis).map(|q| (q, n))
    }

    /// Key with the listed pulses removed.
    pub fn without(&self, revealed: &[u64]) -> SiftedKey {
        let drop: std::collections::HashSet<u64> = revealed.iter().copied().collect();
        let mut out = self.clone();
        out.alice_bits.clear();
        out.bob_bits.clear();
        out.matched_pulse_ids.clear();
        out.matched_bases.clear();
        for i in 0..self.len() {
            if !drop.contains(&self.matched_pulse_ids[i]) {
                out.alice_bits.push(self.alice_bits[i]);
                out.bob_bits.push(self.bob_bits[i]);
                out.matched_pulse_ids.push(self.matched_pulse_ids[i]);
                out.matched_bases.push(self.matched_bases[i]);
            }
        }
        out.qber = out.qber_where(|_| true).unwrap_or(0.0);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub records: Vec<PulseRecord>,
    pub key: SiftedKey,
    pub window_ps: f64,
}

/// Runs `n_pulses` singlet pairs through `topology` (photon 1 to Alice),
/// emitted back to back at `rate_hz`. `rng` drives the photon outcomes;
/// each station draws its basis and jitter from its own seed.
pub fn run_session<R: Rng + ?Sized>(
    topology: &ChannelTopology,
    alice: &UserStation,
    bob: &UserStation,
    n_pulses: u64,
    rate_hz: f64,
    window_ps: f64,
    rng: &mut R,
) -> Result<Session> {
    if rate_hz.is_nan() || rate_hz <= 0.0 {
        return Err(Error::InvalidArgument(format!("pulse rate must be > 0, got {rate_hz}")));
    }
    let times: Vec<f64> = (0..n_pulses).map(|i| i as f64 / rate_hz).collect();
    run_session_at(topology, alice, bob, &times, window_ps, rng)
}

/// Same as [`run_session`] with explicit emission times in seconds.
pub fn run_session_at<R: Rng + ?Sized>(
    topology: &ChannelTopology,
    alice: &UserStation,
    bob: &UserStation,
    emission_s: &[f64],
    window_ps: f64,
    rng: &mut R,
) -> Result<Session> {
    validate_stations(alice, bob, window_ps)?;
    topology.validate()?;
    let sig = signatures(alice, bob);
    let input = bell_state(BellKind::PsiMinus);
    let time_dependent = topology
        .paths()
        .iter()
        .flatten()
        .any(|e| matches!(&e.kind, crate::optics::ElementKind::FiberSegment { drift: Some(_), .. }));
    let mut frozen = None;
    if !time_dependent {
        frozen = Some(propagate(&input, topology, 0.0)?.density);
    }

    let mut stations = [alice, bob].map(|s| {
        let jitter = Normal::new(0.0, s.jitter_ps).expect("jitter validated");
        (ChaCha8Rng::seed_from_u64(s.seed), jitter)
    });

    let mut records = Vec::with_capacity(emission_s.len());
    for (id, &t) in emission_s.iter().enumerate() {
        let id = id as u64;
        let emitted = t * 1e12;
        let mut pick = |k: usize| {
            let (r, jitter) = &mut stations[k];
            let basis = if r.random::<bool>() {
                Basis::Zero
            } else {
                Basis::FortyFive
            };
            (basis, jitter.sample(r))
        };
        let (ab, aj) = pick(0);
        let (bb, bj) = pick(1);

        let density = match &frozen {
            Some(d) => d.clone(),
            None => propagate(&input, topology, t)?.density,
        };
        let probs = joint_probabilities(&density, ab.angle(), bb.angle());
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut outcome = 3;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                outcome = i;
                break;
            }
        }

        let alice_time = emitted + alice.delay(ab) + aj;
        let bob_time = emitted + bob.delay(bb) + bj;
        records.push(PulseRecord {
            pulse_id: id,
            alice_basis: ab,
            bob_basis: bb,
            alice_time_ps: alice_time,
            bob_time_ps: bob_time,
            alice_bit: (outcome >> 1) as u8,
            bob_bit: (outcome & 1) as u8,
            classified: classify_unchecked(bob_time - alice_time, &sig, window_ps),
        });
    }
    let key = SiftedKey::from_records(&records);
    Ok(Session {
        records,
        key,
        window_ps,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QberEstimate {
    pub estimate: f64,
    /// Pulses whose bits were disclosed and must be dropped from the key.
    pub revealed_ids: Vec<u64>,
}

/// Discloses a random `sample_fraction` of the key and compares it.
pub fn estimate_qber<R: Rng + ?Sized>(key: &SiftedKey, sample_fraction: f64, rng: &mut R) -> Result<QberEstimate> {
    if !(sample_fraction > 0.0 && sample_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "sample fraction must be in (0, 1], got {sample_fraction}"
        )));
    }
    if key.is_empty() {
        return Err(Error::InvalidArgument("cannot estimate QBER of an empty key".into()));
    }
    let n = key.len();
    let k = ((n as f64 * sample_fraction).ceil() as usize).clamp(1, n);
    let mut idx = sample(rng, n, k).into_vec();
    idx.sort_unstable();
    let errors = idx.iter().filter(|&&i| key.alice_bits[i] != key.bob_bits[i]).count();
    Ok(QberEstimate {
        estimate: errors as f64 / k as f64,
        revealed_ids: idx.iter().map(|&i| key.matched_pulse_ids[i]).collect(),
    })
}

pub fn write_session_log<W: std::io::Write>(records: &[PulseRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "pulse_id",
        "alice_basis",
        "bob_basis",
        "delta_t_ps",
        "matched",
        "alice_bit",
        "bob_bit",
    ])?;
    for r in records {
        w.write_record([
            r.pulse_id.to_string(),
            r.alice_basis.to_string(),
            r.bob_basis.to_string(),
            format!("{:.3}", r.delta_t_ps()),
            u8::from(r.matched()).to_string(),
            r.alice_bit.to_string(),
            r.bob_bit.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn summary_line(key: &SiftedKey) -> String {
    format!(
        "sifted_fraction={:.6} qber={:.6} sifted_bits={}",
        key.sifted_fraction,
        key.qber,
        key.len()
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::{OpticalParams, SourceModel};
    use crate::procedures::{TwoUserLink, UserChannel};
    use std::f64::consts::PI;

    fn stations() -> (UserStation, UserStation) {
        (
            UserStation::new("alice", 1000.0, 11),
            UserStation::new("bob", 2000.0, 22),
        )
    }

    fn channel(calibrated: bool, lc: f64) -> ChannelTopology {
        let a = UserChannel::new("alice", 1500.0);
        let a = if calibrated { a.calibrated() } else { a };
        let mut l = TwoUserLink::new(
            OpticalParams::default(),
            SourceModel::default(),
            a,
            UserChannel::new("bob", 700.0).calibrated(),
        );
        l.users[0].lc_phase = lc;
        l.shared_topology().unwrap()
    }

    fn binom(p: f64, n: usize) -> f64 {
        (p * (1.0 - p) / n as f64).sqrt()
    }

    #[test]
    fn classification_examples() {
        let (a, b) = stations();
        let w = DEFAULT_WINDOW_PS;
        let c = |dt| classify_coincidence(dt, &a, &b, w).unwrap();
        assert_eq!(c(0.0), Some((Basis::FortyFive, Basis::FortyFive)));
        assert_eq!(c(2000.0 + 35.0), Some((Basis::FortyFive, Basis::Zero)));
        assert_eq!(c(-1000.0 - 60.0), Some((Basis::Zero, Basis::FortyFive)));
        assert_eq!(c(1000.0), Some((Basis::Zero, Basis::Zero)));
        assert_eq!(c(500.0), None);
        assert_eq!(c(1500.0), None);
    }

    #[test]
    fn ambiguous_spacing_is_rejected() {
        let w = DEFAULT_WINDOW_PS;
        let a = UserStation::new("a", 1000.0, 0);
        assert!(validate_stations(&a, &UserStation::new("b", 1000.0, 0), w).is_err());
        assert!(validate_stations(&a, &UserStation::new("b", 1150.0, 0), w).is_err());
        assert!(validate_stations(&UserStation::new("a", 400.0, 0), &UserStation::new("b", 2000.0, 0), w).is_err());
        assert!(validate_stations(&a, &UserStation::new("b", 2000.0, 0), 0.0).is_err());
        // 2000 - 1000 = 1000 collides with d_A = 1000 only if windows overlap
        assert!(validate_stations(&a, &UserStation::new("b", 2000.0, 0), w).is_ok());
        assert!(classify_coincidence(0.0, &a, &a, w).is_err());
    }

    #[test]
    fn signature_completeness() {
        let (a, b) = stations();
        let (a, b) = (a.with_jitter(0.0), b.with_jitter(0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sig = signatures(&a, &b);
        for _ in 0..100_000 {
            let ab = if rng.random() { Basis::Zero } else { Basis::FortyFive };
            let bb = if rng.random() { Basis::Zero } else { Basis::FortyFive };
            let t0 = rng.random_range(0.0..1e9);
            let dt = (t0 + b.delay(bb)) - (t0 + a.delay(ab));
            assert_eq!(classify_unchecked(dt, &sig, DEFAULT_WINDOW_PS), Some((ab, bb)));
        }
    }

    #[test]
    fn perfect_channel_is_exactly_anticorrelated() {
        let topo = channel(true, 0.0);
        let rho = propagate(&bell_state(BellKind::PsiMinus), &topo, 0.0).unwrap().density;
        for basis in Basis::ALL {
            let p = joint_probabilities(&rho, basis.angle(), basis.angle());
            assert!(p[0] + p[3] < 1e-12, "{basis}: {p:?}");
        }
    }

    #[test]
    fn noiseless_session() {
        let (a, b) = stations();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = run_session(&channel(true, 0.0), &a, &b, 10_000, 1e6, DEFAULT_WINDOW_PS, &mut rng).unwrap();
        let k = &s.key;
        assert_eq!(k.alice_bits.len(), k.bob_bits.len());
        assert!(
            (k.sifted_fraction - 0.5).abs() <= 5.0 * binom(0.5, 10_000),
            "{}",
            k.sifted_fraction
        );
        assert!(k.qber <= 0.01, "qber {}", k.qber);
    }

    #[test]
    fn flipped_parity_breaks_only_45() {
        let (a, b) = stations();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let s = run_session(&channel(true, PI), &a, &b, 4000, 1e6, DEFAULT_WINDOW_PS, &mut rng).unwrap();
        let (q45, _) = s.key.basis_qber(Basis::FortyFive).unwrap();
        let (q0, _) = s.key.basis_qber(Basis::Zero).unwrap();
        assert!(q45 > 0.99, "{q45}");
        assert!(q0 < 0.01, "{q0}");
    }

    #[test]
    fn uncalibrated_channel_randomizes_45() {
        let (a, b) = stations();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = run_session(&channel(false, 0.0), &a, &b, 10_000, 1e6, DEFAULT_WINDOW_PS, &mut rng).unwrap();
        let (q45, n) = s.key.basis_qber(Basis::FortyFive).unwrap();
        assert!((q45 - 0.5).abs() <= 3.0 * binom(0.5, n), "{q45} over {n}");
        assert!(s.key.basis_qber(Basis::Zero).unwrap().0 < 0.01);
    }

    #[test]
    fn qber_tracks_shared_parity() {
        let (a, b) = stations();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut outside = 0;
        for _ in 0..20 {
            let phase = rng.random_range(0.0..2.0 * PI);
            let topo = channel(true, phase);
            let p = crate::optics::parity_at_45(&bell_state(BellKind::PsiMinus), &topo, 0.0)
                .unwrap()
                .p_correlated;
            let s = run_session(&topo, &a, &b, 4000, 1e6, DEFAULT_WINDOW_PS, &mut rng).unwrap();
            let (q, n) = s.key.basis_qber(Basis::FortyFive).unwrap();
            if (q - p).abs() > 3.0 * binom(p.clamp(0.01, 0.99), n) {
                outside += 1;
            }
        }
        // 3 sigma: expect essentially none of 20 to fall outside
        assert!(outside <= 1, "{outside} of 20 outside 3 sigma");
    }

    #[test]
    fn sessions_are_deterministic() {
        let (a, b) = stations();
        let topo = channel(true, 0.3);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let s = run_session(&topo, &a, &b, 500, 1e6, DEFAULT_WINDOW_PS, &mut rng).unwrap();
            let mut buf = Vec::new();
            write_session_log(&s.records, &mut buf).unwrap();
            buf
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn station_choices_are_independent_of_source_stream() {
        let (a, b) = stations();
        let topo = channel(true, 0.0);
        let s1 = run_session(
            &topo,
            &a,
            &b,
            200,
            1e6,
            DEFAULT_WINDOW_PS,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let s2 = run_session(
            &topo,
            &a,
            &b,
            200,
            1e6,
            DEFAULT_WINDOW_PS,
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        let bases = |s: &Session| {
            s.records
                .iter()
                .map(|r| (r.alice_basis, r.bob_basis))
                .collect::<Vec<_>>()
        };
        assert_eq!(bases(&s1), bases(&s2));
    }

    fn key_from(alice: Vec<u8>, bob: Vec<u8>) -> SiftedKey {
        let n = alice.len();
        let mut k = SiftedKey {
            alice_bits: alice,
            bob_bits: bob,
            matched_pulse_ids: (0..n as u64).collect(),
            matched_bases: vec![Basis::FortyFive; n],
            qber: 0.0,
            sifted_fraction: 1.0,
        };
        k.qber = k.qber_where(|_| true).unwrap();
        k
    }

    #[test]
    fn estimate_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bits: Vec<u8> = (0..1000).map(|i| (i % 2) as u8).collect();
        let same = key_from(bits.clone(), bits.clone());
        for f in [0.01, 0.3, 1.0] {
            assert_eq!(estimate_qber(&same, f, &mut rng).unwrap().estimate, 0.0);
        }
        let flipped = key_from(bits.clone(), bits.iter().map(|b| 1 - b).collect());
        assert_eq!(estimate_qber(&flipped, 0.5, &mut rng).unwrap().estimate, 1.0);

        let n = 10_000;
        let alice: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let bob: Vec<u8> = alice
            .iter()
            .enumerate()
            .map(|(i, &b)| if i % 4 == 0 { 1 - b } else { b })
            .collect();
        let key = key_from(alice, bob);
        let est = estimate_qber(&key, 0.5, &mut rng).unwrap();
        assert_eq!(est.revealed_ids.len(), n / 2);
        assert!((est.estimate - 0.25).abs() <= 5.0 * binom(0.25, n / 2));
        let rest = key.without(&est.revealed_ids);
        assert_eq!(rest.len(), n / 2);
        assert!(rest
            .matched_pulse_ids
            .iter()
            .all(|id| est.revealed_ids.binary_search(id).is_err()));
    }

    #[test]
    fn estimate_rejects_bad_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let empty = SiftedKey::from_records(&[]);
        assert!(estimate_qber(&empty, 0.5, &mut rng).is_err());
        let k = key_from(vec![0, 1], vec![0, 1]);
        assert!(estimate_qber(&k, 0.0, &mut rng).is_err());
        assert!(estimate_qber(&k, 1.5, &mut rng).is_err());
    }

    #[test]
    fn log_header() {
        let mut buf = Vec::new();
        write_session_log(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().trim(),
            "pulse_id,alice_basis,bob_basis,delta_t_ps,matched,alice_bit,bob_bit"
        );
    }
}
