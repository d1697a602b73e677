use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::control::{
    verify_ready_after_acks, write_trace_csv, ControllerConfig, Network, NetworkSetup, Packet, ReadyInfo, UserPair,
    KEY_EXCHANGE_ERROR, KEY_EXCHANGE_READY,
};
use crate::error::{Error, Result};
use crate::optics::{parity_at_45, ChannelTopology, DriftKind, Element};
use crate::polarization::{bell_state, BellKind};
use crate::procedures::scan::RIG_STAGE;
use crate::procedures::sync::{run_loop, write_history_csv, LoopConfig, LoopRun, Strategy};
use crate::procedures::{
    calibrate, calibration_rig, response_order_probe, scan, Acquisition, Observable, SlopeSign, SyncController,
    TwoUserLink,
};
use crate::timebin::{estimate_qber, run_session, run_session_at, write_session_log, Basis, PulseRecord, UserStation};

use super::report::RunReport;
use super::scenario::{AcquisitionSpec, Scenario, UserEntry};
use super::seed_stream;
use super::spectrum::{peak_stats, sinusoid_amplitude};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanState {
    Psi,
    Phi,
}

const MAX_BUS_STEPS: usize = 100_000;

fn rng_for(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed_stream(seed, label))
}

fn acquisition(spec: AcquisitionSpec) -> Acquisition {
    match spec {
        AcquisitionSpec::Analytic => Acquisition::Analytic,
        AcquisitionSpec::Counted { rate, window_s } => Acquisition::Counted { rate, window: window_s },
    }
}

fn prepare(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

fn csv_file(report: &mut RunReport, out: &Path, name: &str) -> Result<csv::Writer<fs::File>> {
    let path = out.join(name);
    let w = csv::Writer::from_path(&path)?;
    report.outputs.push(path);
    Ok(w)
}

fn f(v: f64) -> String {
    format!("{v:.9}")
}

/// Link built from two scenario users, with unseeded random walks given
/// seeds from the master seed.
fn link_for(s: &Scenario, a: &UserEntry, b: &UserEntry, seed: u64) -> TwoUserLink {
    let mut link = TwoUserLink::new(s.optics, s.source, a.channel(), b.channel());
    for u in &mut link.users {
        if let Some(d) = &mut u.drift {
            if d.kind == DriftKind::RandomWalk && d.seed == 0 {
                d.seed = seed_stream(seed, &format!("drift/{}", u.name));
            }
        }
    }
    link
}

pub fn cmd_scan(s: &Scenario, state: ScanState, seed: u64, out: &Path) -> Result<RunReport> {
    let spec = Scenario::require(&s.scan, "scan")?;
    prepare(out)?;
    let mut rng = rng_for(seed, "source");
    let acq = acquisition(spec.acquisition);
    let range = (spec.range_um[0], spec.range_um[1]);
    match state {
        ScanState::Psi => {
            let mut report = RunReport::new("scan-psi", seed);
            let input = bell_state(BellKind::PsiMinus);
            let mut dips = csv_file(&mut report, out, "scan_psi_dips.csv")?;
            dips.write_record([
                "lc_phase_rad",
                "dip_center_1_um",
                "dip_center_2_um",
                "calibration_point_um",
                "dip_width_1_um",
                "dip_width_2_um",
            ])?;
            let mut results = Vec::new();
            for (i, &phase) in spec.lc_phases.iter().enumerate() {
                let mut topo = calibration_rig(spec.rig_offset_um, spec.fiber_um, phase, s.optics)?;
                let run = calibrate(&mut topo, RIG_STAGE, &input, range, spec.step_um, acq, 0.0, &mut rng)?;
                for (trace, tag) in [(&run.straight, "straight"), (&run.rotated, "rotated")] {
                    let path = out.join(format!("scan_psi_{i}_{tag}.csv"));
                    trace.write_csv(fs::File::create(&path)?)?;
                    report.outputs.push(path);
                }
                let r = run.result;
                dips.write_record([
                    f(phase),
                    f(r.dip_center_1),
                    f(r.dip_center_2),
                    f(r.calibration_point),
                    f(r.dip_width_1),
                    f(r.dip_width_2),
                ])?;
                results.push(r);
            }
            dips.flush()?;

            let spread = |g: fn(&crate::procedures::CalibrationResult) -> f64| {
                let v: Vec<f64> = results.iter().map(g).collect();
                v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min)
            };
            let shift = spread(|r| r.dip_center_1).max(spread(|r| r.dip_center_2));
            report.float("dip_center_shift_um", shift);
            report.check(
                "dip_phase_independence",
                shift < spec.step_um,
                format!(
                    "largest dip-centre shift across liquid-crystal phases {shift:.3} um, step {}",
                    spec.step_um
                ),
            );
            let expected_dip = -(spec.rig_offset_um + spec.fiber_um);
            let expected_cal = -spec.fiber_um;
            let first = results[0];
            report.float("expected_dip_center_um", expected_dip);
            report.float("dip_center_1_um", first.dip_center_1);
            report.float("dip_center_2_um", first.dip_center_2);
            report.float("calibration_point_um", first.calibration_point);
            report.float("expected_calibration_point_um", expected_cal);
            let worst = results
                .iter()
                .map(|r| (r.calibration_point - expected_cal).abs())
                .fold(0.0, f64::max);
            report.check(
                "dip_at_expected_offset",
                (first.dip_center_1 - expected_dip).abs() <= spec.step_um,
                format!("dip at {:.3} um, expected {expected_dip:.3} um", first.dip_center_1),
            );
            report.check(
                "calibration_point",
                worst <= spec.step_um,
                format!("worst calibration error {worst:.3} um"),
            );
            let deployed = ChannelTopology::shared(
                vec![
                    Element::fiber("fiber", spec.fiber_um),
                    Element::stage("stage", first.calibration_point),
                ],
                s.optics,
            )?;
            let p = parity_at_45(&input, &deployed, 0.0)?.p_correlated;
            report.float("post_calibration_p_correlated", p);
            report.check("post_calibration_parity", p <= 0.05, format!("p_correlated {p:.6}"));
            report.write_summary(out)?;
            Ok(report)
        }
        ScanState::Phi => {
            let mut report = RunReport::new("scan-phi", seed);
            let phi = &spec.phi;
            let input = bell_state(s.source.filtered_kind());
            let w = 2.0 * s.optics.wavenumber();
            let mut raw = csv_file(&mut report, out, "scan_phi.csv")?;
            raw.write_record(["checkpoint_um", "offset_um", "p_correlated", "n_corr", "n_anti"])?;
            let mut amps = csv_file(&mut report, out, "scan_phi_amplitude.csv")?;
            amps.write_record(["checkpoint_um", "amplitude", "relative_amplitude"])?;

            let n_checkpoints = ((range.1 - range.0) / phi.checkpoint_spacing_um + 1e-9).floor() as usize + 1;
            let mut min_rel = f64::INFINITY;
            for i in 0..n_checkpoints {
                let c = range.0 + i as f64 * phi.checkpoint_spacing_um;
                let topo = ChannelTopology::shared(
                    vec![Element::fiber("fiber", phi.fiber_um), Element::stage("stage", 0.0)],
                    s.optics,
                )?;
                let half = phi.window_um / 2.0;
                let trace = scan(
                    &topo,
                    "stage",
                    &input,
                    (c - half, c + half),
                    phi.step_um,
                    acq,
                    0.0,
                    &mut rng,
                )?;
                let xs: Vec<f64> = trace.points().iter().map(|p| p.offset_um).collect();
                let ys: Vec<f64> = trace.points().iter().map(|p| p.signal()).collect();
                for p in trace.points() {
                    raw.write_record([
                        f(c),
                        f(p.offset_um),
                        f(p.signal()),
                        p.counts.n_correlated.to_string(),
                        p.counts.n_anticorrelated.to_string(),
                    ])?;
                }
                let (amp, _) = sinusoid_amplitude(&xs, &ys, w)
                    .ok_or_else(|| Error::InvalidArgument("degenerate phi window".into()))?;
                // a pure Phi state swings the parity over the full [0, 1]
                let rel = amp / 1.0;
                min_rel = min_rel.min(rel);
                amps.write_record([f(c), f(amp), f(rel)])?;
            }
            raw.flush()?;
            amps.flush()?;
            report.metric("checkpoints", n_checkpoints);
            report.float("min_relative_amplitude", min_rel);
            report.check(
                "phi_oscillation_range",
                min_rel >= 0.9,
                format!("smallest oscillation amplitude {min_rel:.4} of ideal"),
            );
            report.write_summary(out)?;
            Ok(report)
        }
    }
}

fn write_loop_csv(report: &mut RunReport, out: &Path, name: &str, run: &LoopRun) -> Result<()> {
    let mut w = csv_file(report, out, name)?;
    w.write_record([
        "time_s",
        "p_correlated",
        "n_corr",
        "n_anti",
        "p_exact",
        "phase_a_rad",
        "phase_b_rad",
        "cycled",
    ])?;
    for s in &run.samples {
        w.write_record([
            format!("{:.3}", s.time_s),
            s.measured().map_or(String::new(), f),
            s.shared_counts.n_correlated.to_string(),
            s.shared_counts.n_anticorrelated.to_string(),
            f(s.shared_parity),
            f(s.phase[0]),
            f(s.phase[1]),
            u8::from(s.cycled).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_fig3(s: &Scenario, seed: u64, out: &Path) -> Result<RunReport> {
    let spec = Scenario::require(&s.fig3, "fig3")?;
    prepare(out)?;
    let mut report = RunReport::new("fig3", seed);
    let mut base = link_for(s, &s.users[0], &s.users[1], seed);
    if let Some(d) = &spec.drift {
        base.users[spec.drift_user].drift = Some(d.clone());
    }
    if base.users.iter().all(|u| u.drift.is_none()) {
        return Err(Error::Validation(vec!["fig3: no user fiber has a drift model".into()]));
    }
    let drift_frequency = base.users[spec.drift_user]
        .drift
        .as_ref()
        .filter(|d| d.kind == DriftKind::Sinusoid)
        .map(|d| 1.0 / d.period_s);

    let open = LoopConfig {
        duration_s: spec.duration_s,
        window_s: spec.window_s,
        strategy: None,
        ..Default::default()
    };
    let closed = LoopConfig {
        strategy: Some(Strategy::FiftyFifty),
        gain: spec.gain,
        shared_target: spec.target,
        verify_every: spec.verify_every,
        verify_tolerance: spec.verify_tolerance,
        ..open.clone()
    };

    let mut uncal = base.clone();
    uncal.users[0].stage_um = -uncal.users[0].fiber_um + spec.uncalibrated_offset_um;
    uncal.users[1].lc_phase += spec.static_phase;
    let mut cal = base.clone();
    cal.users[1].lc_phase += spec.static_phase;
    let synced = cal.clone();

    let a = run_loop(&uncal, &open, &mut rng_for(seed, "source/fig3a"))?;
    let b = run_loop(&cal, &open, &mut rng_for(seed, "source/fig3b"))?;
    let c = run_loop(&synced, &closed, &mut rng_for(seed, "source/fig3c"))?;
    write_loop_csv(&mut report, out, "fig3_a_uncalibrated.csv", &a)?;
    write_loop_csv(&mut report, out, "fig3_b_calibrated.csv", &b)?;
    write_loop_csv(&mut report, out, "fig3_c_synchronized.csv", &c)?;
    if let Some(ctrls) = &c.controllers {
        for (i, ctrl) in ctrls.iter().enumerate() {
            let path = out.join(format!("fig3_c_controller_{i}.csv"));
            write_history_csv(ctrl.history(), fs::File::create(&path)?)?;
            report.outputs.push(path);
        }
    }

    let series = |run: &LoopRun| -> Vec<f64> {
        run.samples
            .iter()
            .map(|s| s.measured().unwrap_or(s.shared_parity))
            .collect()
    };

    // (a) flat at one half
    let (nc, nt) = a.samples.iter().fold((0u64, 0u64), |(c, t), s| {
        (c + s.shared_counts.n_correlated, t + s.shared_counts.total())
    });
    let mean_a = nc as f64 / nt.max(1) as f64;
    let sigma_a = (0.25 / nt.max(1) as f64).sqrt();
    report.float("a_mean_parity", mean_a);
    report.float("a_sigma", sigma_a);
    report.check(
        "a_mean_half",
        (mean_a - 0.5).abs() <= 3.0 * sigma_a,
        format!("mean {mean_a:.5}, 3 sigma {:.5}", 3.0 * sigma_a),
    );
    if let Some(fd) = drift_frequency {
        let st_a =
            peak_stats(&series(&a), spec.window_s, fd).ok_or_else(|| Error::InvalidArgument("short trace".into()))?;
        report.float("a_drift_peak_ratio", st_a.ratio_at);
        report.check(
            "a_no_drift_peak",
            st_a.ratio_at <= spec.peak_factor,
            format!("power at drift frequency {:.3} x mean of other bins", st_a.ratio_at),
        );

        // (b) oscillates with the drift
        let st_b =
            peak_stats(&series(&b), spec.window_s, fd).ok_or_else(|| Error::InvalidArgument("short trace".into()))?;
        let period = 1.0 / st_b.dominant_frequency;
        report.float("b_dominant_period_s", period);
        report.float("drift_period_s", 1.0 / fd);
        report.check(
            "b_drift_period",
            (period * fd - 1.0).abs() <= 0.1,
            format!("dominant period {period:.3} s, drift period {:.3} s", 1.0 / fd),
        );
    }
    let sb = series(&b);
    let (lo, hi) = sb.iter().fold((f64::MAX, f64::MIN), |(l, h), &x| (l.min(x), h.max(x)));
    report.float("b_parity_range", hi - lo);

    // (c) held at the target
    let settled: Vec<f64> = c
        .samples
        .iter()
        .filter(|s| s.time_s >= spec.settle_s)
        .map(|s| s.measured().unwrap_or(s.shared_parity))
        .collect();
    let inside = settled.iter().filter(|p| (*p - spec.target).abs() <= spec.band).count();
    let frac = inside as f64 / settled.len().max(1) as f64;
    let cycles = c.samples.iter().filter(|s| s.cycled).count();
    report.float("c_in_band_fraction", frac);
    report.metric("c_cycles", cycles);
    report.check(
        "c_synchronized",
        frac >= 0.95,
        format!(
            "{:.1}% of post-settling samples within {} of {}",
            frac * 100.0,
            spec.band,
            spec.target
        ),
    );
    report.write_summary(out)?;
    Ok(report)
}

fn qber_of(records: &[&PulseRecord]) -> (usize, f64) {
    let n = records.len();
    let err = records.iter().filter(|r| r.alice_bit == r.bob_bit).count();
    (n, if n == 0 { 0.0 } else { err as f64 / n as f64 })
}

fn write_qber_series(
    report: &mut RunReport,
    out: &Path,
    name: &str,
    records: &[PulseRecord],
    emission_s: &dyn Fn(usize) -> f64,
    bins: usize,
) -> Result<()> {
    let mut w = csv_file(report, out, name)?;
    w.write_record(["bin", "start_s", "end_s", "n_sifted", "qber", "n_sifted_45", "qber_45"])?;
    let n = records.len();
    let bins = bins.min(n.max(1));
    for b in 0..bins {
        let (lo, hi) = (b * n / bins, (b + 1) * n / bins);
        if lo >= hi {
            continue;
        }
        let chunk = &records[lo..hi];
        let matched: Vec<&PulseRecord> = chunk.iter().filter(|r| r.matched()).collect();
        let m45: Vec<&PulseRecord> = matched
            .iter()
            .copied()
            .filter(|r| r.classified.is_some_and(|(a, _)| a == Basis::FortyFive))
            .collect();
        let (n_all, q_all) = qber_of(&matched);
        let (n_45, q_45) = qber_of(&m45);
        w.write_record([
            b.to_string(),
            f(emission_s(lo)),
            f(emission_s(hi - 1)),
            n_all.to_string(),
            f(q_all),
            n_45.to_string(),
            f(q_45),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn key_metrics(
    report: &mut RunReport,
    prefix: &str,
    key: &crate::timebin::SiftedKey,
    n_records: usize,
    unresolved: usize,
) {
    report.metric(format!("{prefix}pulses"), n_records);
    report.float(format!("{prefix}sifted_fraction"), key.sifted_fraction);
    report.metric(format!("{prefix}sifted_bits"), key.len());
    report.float(format!("{prefix}qber"), key.qber);
    for b in Basis::ALL {
        let (q, n) = key.basis_qber(b).unwrap_or((0.0, 0));
        report.float(format!("{prefix}qber_{}", b.label()), q);
        report.metric(format!("{prefix}sifted_bits_{}", b.label()), n);
    }
    report.metric(format!("{prefix}unresolved"), unresolved);
}

pub fn cmd_qkd(s: &Scenario, seed: u64, out: &Path) -> Result<RunReport> {
    let spec = Scenario::require(&s.qkd, "qkd")?;
    prepare(out)?;
    let mut report = RunReport::new("qkd", seed);
    let (ua, ub) = s.qkd_pair(spec)?;
    let link = link_for(s, ua, ub, seed);
    let topo = link.shared_topology()?;
    let alice = ua.station(seed_stream(seed, &format!("stations/{}", ua.name)));
    let bob = ub.station(seed_stream(seed, &format!("stations/{}", ub.name)));
    let session = run_session(
        &topo,
        &alice,
        &bob,
        spec.n_pulses,
        spec.rate_hz,
        s.window_ps,
        &mut rng_for(seed, "source"),
    )?;
    let path = out.join("qkd_session.csv");
    write_session_log(&session.records, fs::File::create(&path)?)?;
    report.outputs.push(path);
    let rate = spec.rate_hz;
    write_qber_series(
        &mut report,
        out,
        "qkd_qber_series.csv",
        &session.records,
        &|i| i as f64 / rate,
        spec.time_bins,
    )?;

    let unresolved = session.records.iter().filter(|r| r.classified.is_none()).count();
    key_metrics(&mut report, "", &session.key, session.records.len(), unresolved);
    if !session.key.is_empty() {
        let est = estimate_qber(&session.key, spec.sample_fraction, &mut rng_for(seed, "sifting"))?;
        report.float("qber_estimate", est.estimate);
        report.metric("revealed_bits", est.revealed_ids.len());
        report.metric("final_key_bits", session.key.without(&est.revealed_ids).len());
    }
    report.write_summary(out)?;
    Ok(report)
}

fn network_setup(s: &Scenario) -> Result<NetworkSetup> {
    let c = Scenario::require(&s.control, "control")?;
    Ok(NetworkSetup {
        controller: ControllerConfig {
            users: s.user_specs(),
            relay_device_id: c.relay_device_id.clone(),
            window_ps: s.window_ps,
            session_duration_s: c.session_duration_s,
        },
        initial_delays: s
            .users
            .iter()
            .map(|u| (u.name.clone(), u.delay_ps.round() as i64))
            .collect(),
        flows: c.flows.clone(),
        relay_slots: c.relay_slots,
        slot_duration_s: c.slot_duration_s,
        occupied: c.occupied.iter().map(|[a, b]| (a.clone(), b.clone())).collect(),
    })
}

/// Injects every request and runs the bus dry. If a request had to queue,
/// the sessions occupying slots at start are ended and the bus runs again.
fn orchestrate_once(s: &Scenario, setup: &NetworkSetup, transport_seed: u64) -> Result<Network> {
    let c = Scenario::require(&s.control, "control")?;
    let mut net = Network::new(setup, transport_seed)?;
    for [from, to] in &c.requests {
        net.inject(Packet::key_exchange_request(from.clone(), to.clone()));
    }
    net.run_until_idle(MAX_BUS_STEPS)?;
    if net.relay().queued().count() > 0 {
        for [a, b] in &c.occupied {
            if let Some(slot) = net.relay().slot_of(&UserPair::new(a.clone(), b.clone())?) {
                net.end_session(slot)?;
            }
        }
        net.run_until_idle(MAX_BUS_STEPS)?;
    }
    Ok(net)
}

/// Problems with one request's outcome; empty when READY reached both
/// users after all acks and the delays are compatible.
fn request_problems(net: &Network, requester: &str, peer: &str, window_ps: f64) -> Vec<String> {
    let mut problems = Vec::new();
    for p in net.inbox(requester) {
        if p.qcom.as_deref() == Some(KEY_EXCHANGE_ERROR) {
            problems.push(format!("{requester} received KEY_EXCHANGE_ERROR: {}", p.payload));
        }
    }
    for u in [requester, peer] {
        if !net
            .inbox(u)
            .iter()
            .any(|p| p.qcom.as_deref() == Some(KEY_EXCHANGE_READY))
        {
            problems.push(format!("no KEY_EXCHANGE_READY delivered to {u}"));
        }
    }
    if let Err(e) = verify_ready_after_acks(net.trace()) {
        problems.push(e);
    }
    if problems.is_empty() {
        let delay = |u: &str| {
            net.registry()
                .station_of(u)
                .and_then(|d| net.registry().get_config(&d).ok())
                .map(|c| c.delay_ps as f64)
        };
        match (delay(requester), delay(peer)) {
            (Some(a), Some(b)) => {
                if let Err(e) = crate::timebin::validate_stations(
                    &UserStation::new(requester, a, 0),
                    &UserStation::new(peer, b, 0),
                    window_ps,
                ) {
                    problems.push(format!("delay signatures not separated: {e}"));
                }
            }
            _ => problems.push("station config missing".into()),
        }
    }
    problems
}

pub fn cmd_orchestrate(s: &Scenario, seed: u64, out: &Path) -> Result<RunReport> {
    let spec = Scenario::require(&s.control, "control")?;
    let setup = network_setup(s)?;
    prepare(out)?;
    let mut report = RunReport::new("orchestrate", seed);

    let net = orchestrate_once(s, &setup, seed_stream(seed, "transport"))?;
    let path = out.join("orchestrate_trace.csv");
    write_trace_csv(net.trace(), fs::File::create(&path)?)?;
    report.outputs.push(path);
    report.metric("messages", net.trace().len());

    let mut failures = Vec::new();
    for [requester, peer] in &spec.requests {
        for p in request_problems(&net, requester, peer, s.window_ps) {
            failures.push(format!("{requester}->{peer}: {p}"));
        }
    }
    if !failures.is_empty() {
        for f in &failures {
            report.check("request", false, f.clone());
        }
        report.write_summary(out)?;
        return Err(Error::Orchestration(failures.join("\n")));
    }

    let mut ok_orderings = 1;
    let mut distinct = std::collections::BTreeSet::new();
    distinct.insert(net.trace().iter().map(|e| (e.kind, e.to.clone())).collect::<Vec<_>>());
    for i in 1..spec.orderings {
        let replay = orchestrate_once(s, &setup, seed_stream(seed, &format!("transport/{i}")))?;
        let bad: Vec<String> = spec
            .requests
            .iter()
            .flat_map(|[r, p]| request_problems(&replay, r, p, s.window_ps))
            .collect();
        if bad.is_empty() {
            ok_orderings += 1;
        } else if failures.len() < 5 {
            failures.push(format!("ordering {i}: {}", bad.join("; ")));
        }
        distinct.insert(
            replay
                .trace()
                .iter()
                .map(|e| (e.kind, e.to.clone()))
                .collect::<Vec<_>>(),
        );
    }
    report.metric("orderings", spec.orderings);
    report.metric("orderings_ok", ok_orderings);
    report.metric("distinct_orderings", distinct.len());
    report.check(
        "ready_after_acks",
        ok_orderings == spec.orderings,
        format!("{ok_orderings} of {} orderings", spec.orderings),
    );

    if !failures.is_empty() {
        for f in &failures {
            report.check("request", false, f.clone());
        }
        report.write_summary(out)?;
        return Err(Error::Orchestration(failures.join("\n")));
    }

    let [requester, peer] = &spec.requests[0];
    let pair = UserPair::new(requester.clone(), peer.clone())?;
    let exchange = net
        .controller()
        .exchange(&pair)
        .ok_or_else(|| Error::Orchestration("exchange vanished".into()))?;
    report.metric("qchannel", exchange.channel);
    report.metric("deferred_grant", u8::from(exchange.deferred));
    let ready: ReadyInfo = net
        .inbox(requester)
        .iter()
        .rev()
        .find(|p| p.qcom.as_deref() == Some(KEY_EXCHANGE_READY))
        .map(|p| serde_json::from_str(&p.payload))
        .transpose()
        .map_err(|e| Error::Orchestration(format!("bad READY payload: {e}")))?
        .ok_or_else(|| Error::Orchestration("READY missing".into()))?;
    report.metric("slot", ready.slot);
    report.metric("requester_delay_ps", ready.delay_ps);
    report.metric("peer_delay_ps", ready.peer_delay_ps);

    // the peer takes photon 1, the requester photon 2
    let (pu, ru) = (
        s.user(peer)
            .ok_or_else(|| Error::Orchestration(format!("unknown user `{peer}`")))?,
        s.user(requester)
            .ok_or_else(|| Error::Orchestration(format!("unknown user `{requester}`")))?,
    );
    let link = link_for(s, pu, ru, seed);
    let topo = link.shared_topology()?;
    let mut alice = pu.station(seed_stream(seed, &format!("stations/{peer}")));
    alice.basis_delay_0_ps = ready.peer_delay_ps as f64;
    let mut bob = ru.station(seed_stream(seed, &format!("stations/{requester}")));
    bob.basis_delay_0_ps = ready.delay_ps as f64;
    let times = net
        .relay()
        .pulse_times(ready.slot, spec.session_pulses, spec.session_rate_hz, 0)?;
    let outside = times
        .iter()
        .filter(|&&t| net.relay().connected_pair_at(t) != Some(&pair))
        .count();
    report.check(
        "session_in_slot",
        outside == 0,
        format!("{outside} pulses outside the granted slot"),
    );
    let session = run_session_at(&topo, &alice, &bob, &times, s.window_ps, &mut rng_for(seed, "source"))?;
    let path = out.join("orchestrate_session.csv");
    write_session_log(&session.records, fs::File::create(&path)?)?;
    report.outputs.push(path);
    let unresolved = session.records.iter().filter(|r| r.classified.is_none()).count();
    key_metrics(&mut report, "session_", &session.key, session.records.len(), unresolved);
    report.check(
        "session_qber",
        session.key.qber <= 0.05,
        format!("qber {:.5} over {} sifted bits", session.key.qber, session.key.len()),
    );
    report.write_summary(out)?;
    Ok(report)
}

pub fn cmd_probe_order(s: &Scenario, seed: u64, out: &Path) -> Result<RunReport> {
    let spec = Scenario::require(&s.probe, "probe")?;
    prepare(out)?;
    let mut report = RunReport::new("probe-order", seed);
    let user = if spec.user.is_empty() {
        &s.users[0]
    } else {
        s.user(&spec.user)
            .ok_or_else(|| Error::Config(format!("unknown user `{}`", spec.user)))?
    };
    let channel = user.channel();
    let lc = channel.lc_id();
    let topo = ChannelTopology::shared(channel.elements(), s.optics)?;
    let sign = s.source.filtered_sign;
    let input = bell_state(s.source.filtered_kind());
    let parity = |phase: f64| -> Result<f64> {
        let mut t = topo.clone();
        t.set_retarder_phase(&lc, phase)?;
        Ok(parity_at_45(&input, &t, 0.0)?.p_correlated)
    };

    // lock each strategy on the exact parity
    let mut ff = SyncController::fifty_fifty(user.lc_phase, 0.5, 1.0).with_slope(SlopeSign::Fixed(1.0));
    for k in 0..400 {
        let p = parity(ff.phase_setting())?;
        ff.step_with_counts(k as f64, p, Default::default());
    }
    let mut mx = SyncController::maximize(user.lc_phase, 0.2, 1.0);
    for k in 0..2000 {
        let p = parity(mx.phase_setting())?;
        mx.step_with_counts(k as f64, p, Default::default());
    }
    let ops = [("fifty_fifty", ff.phase_setting()), ("maximize", mx.operating_phase())];

    let mut w = csv_file(&mut report, out, "probe_order.csv")?;
    w.write_record([
        "strategy",
        "operating_phase_rad",
        "p_correlated",
        "slope_per_lc_rad",
        "slope_per_state_rad",
    ])?;
    let mut slopes = Vec::new();
    for (name, op) in ops {
        let sl = response_order_probe(&topo, &lc, Observable::FilteredPhi { sign }, op, spec.delta)?;
        w.write_record([
            name.to_string(),
            f(op),
            f(parity(op)?),
            format!("{:.12e}", sl.per_lc_radian),
            format!("{:.12e}", sl.per_state_radian),
        ])?;
        slopes.push(sl.per_state_radian.abs());
    }
    w.flush()?;
    let ratio = if slopes[1] > 0.0 {
        slopes[0] / slopes[1]
    } else {
        f64::INFINITY
    };
    report.float("fifty_fifty_slope", slopes[0]);
    report.metric("maximize_slope", format!("{:.12e}", slopes[1]));
    report.metric(
        "ratio",
        if ratio.is_finite() {
            format!("{ratio:.6e}")
        } else {
            "inf".into()
        },
    );
    report.check(
        "fifty_fifty_slope",
        (slopes[0] - 0.5).abs() <= 1e-3,
        format!("{:.6} per radian", slopes[0]),
    );
    report.check(
        "maximize_slope",
        slopes[1] <= 1e-3,
        format!("{:.3e} per radian", slopes[1]),
    );
    report.check("slope_ratio", ratio >= 100.0, format!("ratio {ratio:.3e}"));
    report.write_summary(out)?;
    Ok(report)
}
