//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs under `cargo test` with its own `main`.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use num_complex::Complex64;
use qchannel::harness::{self, RunReport, ScanState, Scenario};
use qchannel::optics::{
    coincidence_parity, drift_value, parity_at_45, propagate, ChannelTopology, Element, ElementKind, OpticalParams,
    DEFAULT_WAVELENGTH_UM,
};
use qchannel::polarization::{
    apply_phase_on_v, apply_rotation, bell_state, parity_probabilities, BellKind, Target, TwoPhotonState,
};
use qchannel::procedures::scan::RIG_STAGE;
use qchannel::procedures::{calibrate, calibration_rig, Acquisition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn load(name: &str) -> Scenario {
    Scenario::load(&scenarios().join(name)).expect("shipped scenario loads")
}

fn failed_checks(r: &RunReport) -> Vec<String> {
    r.checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect()
}

fn require(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn timed(limit_s: f64, f: impl FnOnce() -> Outcome) -> Outcome {
    let t = Instant::now();
    let detail = f()?;
    let secs = t.elapsed().as_secs_f64();
    require(secs < limit_s, format!("runtime {secs:.2} s over {limit_s} s"))?;
    Ok(format!("{detail}; {secs:.2} s"))
}

fn metric(r: &RunReport, name: &str) -> Result<f64, String> {
    r.number(name).ok_or_else(|| format!("metric `{name}` missing"))
}

fn psi_dip_phase_independence() -> Outcome {
    timed(10.0, || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let s = load("fig1.toml");
        let spec = s.scan.as_ref().unwrap();
        require(
            spec.range_um == [-15000.0, 15000.0] && spec.step_um == 50.0,
            "scan is not +-15000 um at 50 um",
        )?;
        require(spec.lc_phases.len() == 3, "expected three liquid-crystal phases")?;
        let r = harness::cmd_scan(&s, ScanState::Psi, 1, dir.path()).map_err(|e| e.to_string())?;
        let shift = metric(&r, "dip_center_shift_um")?;
        require(shift < 50.0, format!("dip shift {shift:.3} um"))?;
        Ok(format!("dip shift {shift:.3} um across phases 0, pi/2, pi"))
    })
}

fn phi_oscillation_range() -> Outcome {
    timed(10.0, || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let s = load("fig1.toml");
        let r = harness::cmd_scan(&s, ScanState::Phi, 1, dir.path()).map_err(|e| e.to_string())?;
        let n = metric(&r, "checkpoints")?;
        require(n >= 31.0, format!("only {n} checkpoints"))?;
        let a = metric(&r, "min_relative_amplitude")?;
        require(a >= 0.9, format!("amplitude {a:.4}"))?;
        Ok(format!("min amplitude {a:.4} of ideal over {n} checkpoints"))
    })
}

fn midpoint_calibration() -> Outcome {
    let optics = OpticalParams::default();
    let psi = bell_state(BellKind::PsiMinus);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let step = 50.0;
    let (mut worst, mut worst_p) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let delta = rng.random_range(-5000.0..5000.0);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let mut topo = calibration_rig(3000.0, delta, phase, optics).map_err(|e| e.to_string())?;
        let acq = Acquisition::Counted {
            rate: 1.0e4,
            window: 1.0,
        };
        let run = calibrate(
            &mut topo,
            RIG_STAGE,
            &psi,
            (-15000.0, 15000.0),
            step,
            acq,
            0.0,
            &mut rng,
        )
        .map_err(|e| e.to_string())?;
        let cal = run.result.calibration_point;
        worst = worst.max((cal + delta).abs());
        let deployed = ChannelTopology::shared(vec![Element::fiber("f", delta), Element::stage("s", cal)], optics)
            .map_err(|e| e.to_string())?;
        let p = parity_at_45(&psi, &deployed, 0.0)
            .map_err(|e| e.to_string())?
            .p_correlated;
        worst_p = worst_p.max(p);
    }
    require(worst <= step, format!("calibration error {worst:.3} um"))?;
    require(worst_p <= 0.05, format!("post-calibration p_correlated {worst_p:.4}"))?;
    Ok(format!(
        "worst error {worst:.3} um, worst p_correlated {worst_p:.5} over 50 offsets"
    ))
}

fn fig3_traces() -> Outcome {
    timed(60.0, || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let s = load("fig3.toml");
        require(s.source.pair_rate == 1.0e4, "scenario pair rate is not 1e4/s")?;
        let r = harness::cmd_fig3(&s, 1, dir.path()).map_err(|e| e.to_string())?;
        for name in ["a_mean_half", "a_no_drift_peak", "b_drift_period", "c_synchronized"] {
            require(
                r.checks.iter().any(|c| c.name == name),
                format!("check {name} not evaluated"),
            )?;
        }
        let bad = failed_checks(&r);
        require(bad.is_empty(), bad.join("; "))?;
        Ok(format!(
            "a mean {:.4}, b period {:.2} s, c in band {:.3}",
            metric(&r, "a_mean_parity")?,
            metric(&r, "b_dominant_period_s")?,
            metric(&r, "c_in_band_fraction")?
        ))
    })
}

fn response_order() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let r = harness::cmd_probe_order(&load("probe.toml"), 1, dir.path()).map_err(|e| e.to_string())?;
    let ff = metric(&r, "fifty_fifty_slope")?;
    let mx = metric(&r, "maximize_slope")?;
    let ratio = if mx > 0.0 { ff / mx } else { f64::INFINITY };
    require((ff - 0.5).abs() <= 1e-3, format!("fifty_fifty slope {ff}"))?;
    require(ratio >= 100.0, format!("ratio {ratio}"))?;
    Ok(format!(
        "fifty_fifty slope {ff:.6}, maximize slope {mx:.2e}, ratio {ratio:.2e}"
    ))
}

/// Phase of the fringe `p(x) = (1 + V cos(phi + x))/2` from two probes of
/// an added reference phase.
fn fringe_phase(p_at: impl Fn(f64) -> f64) -> f64 {
    let c = 2.0 * p_at(0.0) - 1.0;
    let s = -(2.0 * p_at(FRAC_PI_2) - 1.0);
    s.atan2(c)
}

fn phase_rate_factor_two() -> Outcome {
    let o = OpticalParams::coherent(DEFAULT_WAVELENGTH_UM);
    let shared = |d: f64| {
        fringe_phase(|x| {
            let t = ChannelTopology::split(
                vec![Element::fiber("a", d), Element::liquid_crystal("ref", x)],
                vec![Element::fiber("b", 0.0)],
                o,
            )
            .unwrap();
            1.0 - parity_at_45(&bell_state(BellKind::PsiMinus), &t, 0.0)
                .unwrap()
                .p_correlated
        })
    };
    let filtered = |d: f64| {
        fringe_phase(|x| {
            let t = ChannelTopology::shared(vec![Element::fiber("a", d), Element::liquid_crystal("ref", x / 2.0)], o)
                .unwrap();
            parity_at_45(&bell_state(BellKind::PhiPlus), &t, 0.0)
                .unwrap()
                .p_correlated
        })
    };
    let mut worst = 0.0f64;
    for &d0 in &[0.0, 0.013, 0.1, 0.37] {
        let h = 0.01;
        let ratio = (filtered(d0 + h) - filtered(d0)).abs() / (shared(d0 + h) - shared(d0)).abs();
        worst = worst.max((ratio - 2.0).abs());
    }
    require(worst <= 1e-9, format!("ratio off by {worst:.3e}"))?;
    Ok(format!("phase-rate ratio 2 within {worst:.1e}"))
}

fn qkd_session() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let s = load("qkd.toml");
    require(s.qkd.as_ref().unwrap().n_pulses == 10_000, "scenario is not 1e4 pulses")?;
    let r = harness::cmd_qkd(&s, 1, dir.path()).map_err(|e| e.to_string())?;
    let n = metric(&r, "pulses")?;
    let frac = metric(&r, "sifted_fraction")?;
    let qber = metric(&r, "qber")?;
    let sigma = (0.25 / n).sqrt();
    require((frac - 0.5).abs() <= 5.0 * sigma, format!("sifted fraction {frac}"))?;
    require(qber <= 0.01, format!("qber {qber}"))?;

    let mut unc = s.clone();
    unc.users[0].calibrated = false;
    let r = harness::cmd_qkd(&unc, 1, dir.path()).map_err(|e| e.to_string())?;
    let q45 = metric(&r, "qber_45")?;
    let n45 = metric(&r, "sifted_bits_45")?;
    let s45 = (0.25 / n45).sqrt();
    require(
        (q45 - 0.5).abs() <= 3.0 * s45,
        format!("uncalibrated 45-degree qber {q45}"),
    )?;
    Ok(format!(
        "sifted {frac:.4} (5 sigma {:.4}), qber {qber:.4}; uncalibrated 45-degree qber {q45:.4} (3 sigma {:.4})",
        5.0 * sigma,
        3.0 * s45
    ))
}

fn orchestration() -> Outcome {
    timed(30.0, || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let s = load("orchestrate.toml");
        let c = s.control.as_ref().unwrap();
        require(
            s.users.len() == 3 && c.orderings >= 100,
            "expected 3 users and 100 orderings",
        )?;
        let r = harness::cmd_orchestrate(&s, 1, dir.path()).map_err(|e| e.to_string())?;
        let bad = failed_checks(&r);
        require(bad.is_empty(), bad.join("; "))?;
        let ok = metric(&r, "orderings_ok")?;
        let a = metric(&r, "requester_delay_ps")?;
        let b = metric(&r, "peer_delay_ps")?;
        let w = s.window_ps;
        let sigs = [0.0, a, -b, a - b];
        let separated = sigs
            .iter()
            .enumerate()
            .all(|(i, x)| sigs[i + 1..].iter().all(|y| (x - y).abs() >= 2.0 * w));
        require(
            separated && a > 4.0 * w && b > 4.0 * w,
            format!("delays {a} / {b} ps collide"),
        )?;
        let q = metric(&r, "session_qber")?;
        require(q <= 0.05, format!("session qber {q}"))?;
        Ok(format!("{ok} orderings ok, delays {a}/{b} ps, session qber {q:.4}"))
    })
}

fn oracle_state(input: &TwoPhotonState, topo: &ChannelTopology) -> TwoPhotonState {
    let k = topo.optics.wavenumber();
    let passes: Vec<(Target, &[Element])> = if topo.is_shared() {
        vec![(Target::Both, topo.path(0))]
    } else {
        vec![(Target::First, topo.path(0)), (Target::Second, topo.path(1))]
    };
    let mut st = input.clone();
    for (target, path) in passes {
        for el in path {
            st = match &el.kind {
                ElementKind::FiberSegment { excess_um, drift } => {
                    let d = drift.as_ref().map_or(0.0, |m| drift_value(m, 0.0));
                    apply_phase_on_v(&st, target, k * (excess_um + d))
                }
                ElementKind::DelayStage { offset_um } => apply_phase_on_v(&st, target, k * offset_um),
                ElementKind::LiquidCrystal { phase } | ElementKind::WavePlate { phase } => {
                    apply_phase_on_v(&st, target, *phase)
                }
                ElementKind::Connector90 { engaged: true } => apply_rotation(&st, target, FRAC_PI_2),
                ElementKind::Connector90 { engaged: false } => st,
            };
        }
    }
    st
}

fn random_path<R: Rng>(rng: &mut R, tag: &str) -> Vec<Element> {
    (0..rng.random_range(1..8))
        .map(|i| {
            let id = format!("{tag}{i}");
            match rng.random_range(0..5) {
                0 => Element::fiber(id, rng.random_range(-5000.0..5000.0)),
                1 => Element::stage(id, rng.random_range(-5000.0..5000.0)),
                2 => Element::liquid_crystal(id, rng.random_range(-4.0..4.0)),
                3 => Element::wave_plate(id, rng.random_range(-4.0..4.0)),
                _ => Element {
                    id,
                    kind: ElementKind::Connector90 { engaged: rng.random() },
                },
            }
        })
        .collect()
}

fn oracle_equivalence() -> Outcome {
    let o = OpticalParams::coherent(DEFAULT_WAVELENGTH_UM);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let amps: [Complex64; 4] =
            std::array::from_fn(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let state = TwoPhotonState::from_amplitudes(amps).map_err(|e| e.to_string())?;
        let topo = if rng.random() {
            ChannelTopology::shared(random_path(&mut rng, "a"), o)
        } else {
            ChannelTopology::split(random_path(&mut rng, "a"), random_path(&mut rng, "b"), o)
        }
        .map_err(|e| e.to_string())?;
        let angle = rng.random_range(-3.2..3.2);
        let got = coincidence_parity(&propagate(&state, &topo, 0.0).map_err(|e| e.to_string())?, angle);
        let want = parity_probabilities(&oracle_state(&state, &topo), angle);
        worst = worst.max((got.p_correlated - want.p_correlated).abs());
    }
    require(worst <= 1e-10, format!("max deviation {worst:.3e}"))?;
    Ok(format!("max deviation {worst:.1e} over 500 cases"))
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn determinism() -> Outcome {
    type Cmd = fn(&Scenario, u64, &Path) -> qchannel::Result<RunReport>;
    let cmds: [(&str, &str, Cmd); 7] = [
        ("scan psi", "fig1.toml", |s, seed, o| {
            harness::cmd_scan(s, ScanState::Psi, seed, o)
        }),
        ("scan phi", "fig1.toml", |s, seed, o| {
            harness::cmd_scan(s, ScanState::Phi, seed, o)
        }),
        ("fig3", "fig3.toml", harness::cmd_fig3),
        ("qkd", "qkd.toml", harness::cmd_qkd),
        ("qkd drift", "qkd_drift.toml", harness::cmd_qkd),
        ("orchestrate", "orchestrate.toml", harness::cmd_orchestrate),
        ("probe-order", "probe.toml", harness::cmd_probe_order),
    ];
    let mut files = 0;
    for (name, file, cmd) in cmds {
        let s = load(file);
        let runs: Vec<_> = (0..2)
            .map(|_| {
                let d = tempfile::tempdir().unwrap();
                cmd(&s, 42, d.path()).map_err(|e| format!("{name}: {e}"))?;
                Ok::<_, String>(snapshot(d.path()))
            })
            .collect::<Result<_, _>>()?;
        require(!runs[0].is_empty(), format!("{name} wrote no CSV"))?;
        require(runs[0] == runs[1], format!("{name} output differs between runs"))?;
        files += runs[0].len();
    }
    Ok(format!(
        "{files} CSV files byte-identical across two runs of 7 commands"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("psi dip phase independence", psi_dip_phase_independence),
        ("phi oscillation range", phi_oscillation_range),
        ("midpoint calibration", midpoint_calibration),
        ("three-trace parity figure", fig3_traces),
        ("first/second-order response", response_order),
        ("factor-of-two phase rate", phase_rate_factor_two),
        ("qkd session", qkd_session),
        ("orchestration", orchestration),
        ("oracle equivalence", oracle_equivalence),
        ("determinism", determinism),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failures += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "{} of {} acceptance criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
