//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs without the libtest harness so the lines are
//! always printed.

mod support;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use isac_core::api::{self, ApiPhase};
use isac_core::gnb::SchedulerState;
use isac_core::gnb::{SensingDemand, TddPattern};
use isac_core::l1sens::{
    clutter_removal, detect_targets, multi_burst_filter, new_track, periodogram, DetectConfig,
    LocalizedPoint, TrackConfig, Tracker, Window,
};
use isac_core::scene::{bistatic_geometry, synthesize_channel};
use isac_core::semf::{fuse_multistatic, multistatic_jacobian, BistaticObservation, SemfTrace};
use isac_core::sep::{self, MeasurementTiming, Role, SepMessage};
use isac_core::sim::{
    compute_metrics, encode_trace, run, session_summaries, Direction, ScenarioConfig, TraceLine,
    TraceRecord,
};
use isac_core::{
    BeamPattern, ComplexGrid, GridMeta, GroundObject, ObjectClass, RadioParams, SceneState, Vec3,
    SPEED_OF_LIGHT,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn db(power: f64) -> f64 {
    10.0 * power.log10()
}

fn desk_radio() -> RadioParams {
    RadioParams::default()
}

fn beam_towards(from: Vec3, to: Vec3) -> BeamPattern {
    let d = to - from;
    BeamPattern {
        pointing_azimuth_rad: d.azimuth(),
        pointing_zenith_rad: d.zenith(),
        beamwidth_rad: 0.3,
    }
}

fn object(id: u32, position: Vec3, velocity: Vec3) -> GroundObject {
    GroundObject {
        id,
        position,
        velocity,
        reflection_amplitude: 1.0,
        true_class: ObjectClass::Car,
        is_static: velocity == Vec3::ZERO,
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    let az = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let zen = rng.random_range(1.2..1.9);
    Vec3::from_angles(az, zen)
}

fn perpendicular(u: Vec3) -> Vec3 {
    let a = if u.z.abs() < 0.9 {
        Vec3::new(0.0, 0.0, 1.0)
    } else {
        Vec3::new(1.0, 0.0, 0.0)
    };
    u.cross(a).normalized().unwrap()
}

/// Brute-force double sum of the documented periodogram definition.
fn dft_oracle(h: &ComplexGrid, n_fft: usize, m_fft: usize, n: usize, m: i64) -> Complex64 {
    let (rows, cols) = h.shape();
    let tau = std::f64::consts::TAU;
    let mut acc = Complex64::new(0.0, 0.0);
    for k in 0..rows {
        for l in 0..cols {
            let phase =
                tau * (k * n) as f64 / n_fft as f64 - tau * l as f64 * m as f64 / m_fft as f64;
            acc += h.get(k, l) * Complex64::from_polar(1.0, phase);
        }
    }
    acc / ((rows * cols) as f64).sqrt()
}

fn c1_dft_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (n, m) = (rng.random_range(1..=32), rng.random_range(1..=32));
        let meta = GridMeta {
            carrier_freq_hz: 3.5e9,
            subcarrier_spacing_hz: 30e3,
            symbol_period_s: 1.0 / 30e3,
        };
        let h = ComplexGrid::from_fn(n, m, meta, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let n_fft = n.max(2) * rng.random_range(1..=2);
        let m_fft = m.max(2) * rng.random_range(1..=2);
        let p = periodogram(&h, n_fft, m_fft, Window::Rectangular).map_err(|e| e.to_string())?;
        let lo = p.axes().min_doppler_bin();
        let mut max_abs = 0.0f64;
        let mut max_err = 0.0f64;
        for nd in 0..n_fft {
            for md in lo..lo + m_fft as i64 {
                let want = dft_oracle(&h, n_fft, m_fft, nd, md);
                max_abs = max_abs.max(want.norm());
                max_err = max_err.max((p.get(nd, md) - want).norm());
            }
        }
        worst = worst.max(max_err / max_abs);
    }
    ensure!(worst <= 1e-9, "max relative error {worst:.3e} > 1e-9");
    Ok(format!(
        "200 grids up to 32x32, max relative error {worst:.2e}"
    ))
}

/// Strongest detection of a single noiseless monostatic target.
fn strongest(h: &ComplexGrid, pad: usize) -> Result<isac_core::l1sens::TargetPoint2D, String> {
    let (n, m) = h.shape();
    let p = periodogram(h, pad * n, pad * m, Window::Rectangular).map_err(|e| e.to_string())?;
    detect_targets(&p, &DetectConfig::default())
        .targets
        .into_iter()
        .next()
        .ok_or_else(|| "no detection".to_string())
}

fn c2_on_grid_recovery() -> Outcome {
    let radio = desk_radio();
    let raw_bin = SPEED_OF_LIGHT / (radio.num_subcarriers as f64 * radio.subcarrier_spacing_hz);
    let speed_bin = SPEED_OF_LIGHT
        / (radio.num_symbols as f64 / radio.subcarrier_spacing_hz * radio.carrier_freq_hz);
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let trp = Vec3::new(0.0, 0.0, 10.0);
    for i in 0..100 {
        let u = random_unit(&mut rng);
        let n0 = rng.random_range(3..200) as f64;
        let m0 = rng.random_range(-30..=30) as f64;
        // Path 2d and rate 2v·u put the target exactly on bin (n0, m0).
        let pos = trp + u * (n0 * raw_bin / 2.0);
        let vel = u * (-m0 * speed_bin / 2.0) + perpendicular(u) * rng.random_range(-5.0..5.0);
        let scene = SceneState::new(vec![object(1, pos, vel)]).map_err(|e| e.to_string())?;
        let h = synthesize_channel(&scene, trp, trp, &beam_towards(trp, pos), &radio, None, 0)
            .map_err(|e| e.to_string())?;
        let t = strongest(&h, 1)?;
        ensure!(
            t.delay_bin.round() == n0 && t.doppler_bin.round() == m0,
            "geometry {i}: bin ({}, {}) instead of ({n0}, {m0})",
            t.delay_bin,
            t.doppler_bin
        );
        ensure!(
            (t.path_length_m - n0 * raw_bin).abs() <= 1e-6 * raw_bin
                && (t.closing_speed_m_per_s - m0 * speed_bin).abs() <= 1e-6 * speed_bin,
            "geometry {i}: off-bin estimate {} m, {} m/s",
            t.path_length_m,
            t.closing_speed_m_per_s
        );
    }
    let mut worst = 0.0f64;
    for i in 0..100 {
        let u = random_unit(&mut rng);
        let path = rng.random_range(3.0..200.0) * raw_bin;
        let closing = rng.random_range(-25.0..25.0) * speed_bin;
        let pos = trp + u * (path / 2.0);
        let vel = u * (-closing / 2.0);
        let scene = SceneState::new(vec![object(1, pos, vel)]).map_err(|e| e.to_string())?;
        let (truth, _) =
            bistatic_geometry(trp, trp, &scene.objects[0]).map_err(|e| e.to_string())?;
        let h = synthesize_channel(&scene, trp, trp, &beam_towards(trp, pos), &radio, None, 0)
            .map_err(|e| e.to_string())?;
        let t = strongest(&h, 4)?;
        let err = (t.path_length_m - truth).abs();
        worst = worst.max(err);
        ensure!(
            err <= raw_bin / 2.0,
            "off-grid geometry {i}: path error {err:.3} m > {:.3} m",
            raw_bin / 2.0
        );
    }
    Ok(format!(
        "100 on-grid geometries exact to the bin; off-grid with 4x padding max path error {worst:.3} m (limit {:.3} m)",
        raw_bin / 2.0
    ))
}

fn c3_clutter_suppression() -> Outcome {
    let radio = desk_radio();
    let (n, m) = (radio.num_subcarriers, radio.num_symbols);
    let raw_bin = radio.path_length_per_bin();
    let speed_bin = radio.speed_per_bin();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let trp = Vec3::new(0.0, 0.0, 10.0);
    let (mut worst_clutter, mut worst_mover) = (f64::NEG_INFINITY, 0.0f64);
    for i in 0..20 {
        let statics: Vec<GroundObject> = (0..rng.random_range(1..4))
            .map(|k| {
                object(
                    10 + k,
                    trp + random_unit(&mut rng) * rng.random_range(30.0..1500.0),
                    Vec3::ZERO,
                )
            })
            .collect();
        let u = random_unit(&mut rng);
        let n0 = rng.random_range(5..150) as f64;
        let m0 = *[-20.0, -7.0, -2.0, 3.0, 9.0, 24.0]
            .get(rng.random_range(0..6))
            .unwrap();
        let mover = object(
            1,
            trp + u * (n0 * raw_bin / 2.0 + 0.3 * raw_bin),
            u * (-m0 * speed_bin / 2.0),
        );
        let si = Some(rng.random_range(20.0..60.0));
        let beam = beam_towards(trp, mover.position);
        let synth = |objs: Vec<GroundObject>, si: Option<f64>| -> Result<ComplexGrid, String> {
            let scene = SceneState::new(objs).map_err(|e| e.to_string())?;
            synthesize_channel(&scene, trp, trp, &beam, &radio, si, 0).map_err(|e| e.to_string())
        };
        let pgram =
            |h: &ComplexGrid| periodogram(h, n, m, Window::Rectangular).map_err(|e| e.to_string());

        let clutter_only = pgram(&synth(statics.clone(), si)?)?;
        let clutter_peak = clutter_only.peak_db();
        let mover_only = pgram(&synth(vec![mover.clone()], None)?)?;
        let mut all = statics.clone();
        all.push(mover.clone());
        let removed = pgram(&clutter_removal(&synth(all, si)?))?;

        // Clutter bins: every bin where the un-removed clutter is within 60 dB of its peak.
        let offset = clutter_only.axes().doppler_offset();
        for nd in 0..n {
            for j in 0..m {
                if db(clutter_only.power(nd, j)) >= clutter_peak - 60.0 {
                    let moverp = mover_only.power(nd, j);
                    let residual = (removed.at(nd, j) - mover_only.at(nd, j))
                        .norm_sqr()
                        .max(0.0);
                    let rel = db(residual.max(1e-300)) - clutter_peak;
                    worst_clutter = worst_clutter.max(rel);
                    ensure!(
                        rel <= -60.0,
                        "case {i}: clutter at bin ({nd}, {}) only {rel:.1} dB below its peak (mover there {:.1} dB)",
                        j as i64 - offset as i64,
                        db(moverp)
                    );
                }
            }
        }
        let (mut peak_n, mut peak_j, mut peak) = (0, 0, 0.0);
        for nd in 0..n {
            for j in 0..m {
                if mover_only.power(nd, j) > peak {
                    (peak_n, peak_j, peak) = (nd, j, mover_only.power(nd, j));
                }
            }
        }
        let change = (db(removed.power(peak_n, peak_j)) - db(peak)).abs();
        worst_mover = worst_mover.max(change);
        ensure!(
            change <= 0.1,
            "case {i}: mover peak changed by {change:.3} dB"
        );
    }
    Ok(format!(
        "20 scenes: clutter and SI residual at most {worst_clutter:.1} dB re un-removed peak, mover peak change {worst_mover:.2e} dB"
    ))
}

fn path_lengths(p: Vec3, tx: Vec3, rxs: &[Vec3]) -> Vec<f64> {
    rxs.iter()
        .map(|rx| p.distance(tx) + p.distance(*rx))
        .collect()
}

fn c4_multistatic_localization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let res = desk_radio().path_length_per_bin();
    let (mut worst_pos, mut worst_jac) = (0.0f64, 0.0f64);
    for i in 0..100 {
        let tx = Vec3::new(
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
            rng.random_range(10.0..40.0),
        );
        let base = rng.random_range(0.0..std::f64::consts::TAU);
        let rxs: Vec<Vec3> = (0..3)
            .map(|k| {
                let a = base + k as f64 * std::f64::consts::TAU / 3.0 + rng.random_range(-0.3..0.3);
                let r = rng.random_range(150.0..300.0);
                Vec3::new(r * a.cos(), r * a.sin(), rng.random_range(2.0..40.0))
            })
            .collect();
        // Random convex combination: inside the receivers' hull.
        let mut w: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        let target = rxs
            .iter()
            .zip(&w)
            .fold(Vec3::ZERO, |a, (r, wi)| a + *r * *wi);
        let obs: Vec<BistaticObservation> = path_lengths(target, tx, &rxs)
            .into_iter()
            .zip(&rxs)
            .enumerate()
            .map(|(k, (l, rx))| BistaticObservation {
                rx_trp_id: k as u32 + 1,
                rx_position: *rx,
                path_length_m: l,
                closing_speed_m_per_s: 0.0,
                weight: 1.0,
            })
            .collect();
        let fix = fuse_multistatic(&obs, tx, res).map_err(|e| format!("placement {i}: {e}"))?;
        let err = fix.position.distance(target);
        worst_pos = worst_pos.max(err);
        ensure!(err <= 1e-3, "placement {i}: position error {err:.3e} m");
        ensure!(
            fix.objective_trace.windows(2).all(|w| w[1] <= w[0]),
            "placement {i}: objective increased along {:?}",
            fix.objective_trace
        );

        // Jacobian against central differences at a random point near the target.
        let p = target
            + Vec3::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(0.0..5.0),
            );
        let jac = multistatic_jacobian(p, tx, &rxs);
        // A millimeter step balances truncation against rounding on
        // path lengths of several hundred meters.
        let hstep = 1e-3;
        let axes = [
            Vec3::new(hstep, 0.0, 0.0),
            Vec3::new(0.0, hstep, 0.0),
            Vec3::new(0.0, 0.0, hstep),
        ];
        for (r, row) in jac.iter().enumerate() {
            let fd: Vec<f64> = axes
                .iter()
                .map(|e| {
                    (path_lengths(p + *e, tx, &rxs)[r] - path_lengths(p - *e, tx, &rxs)[r])
                        / (2.0 * hstep)
                })
                .collect();
            let fd = Vec3::new(fd[0], fd[1], fd[2]);
            let rel = fd.distance(*row) / row.norm();
            worst_jac = worst_jac.max(rel);
            ensure!(
                rel <= 1e-6,
                "placement {i}: Jacobian row {r} {row:?} vs finite differences {fd:?}"
            );
        }
    }
    Ok(format!(
        "100 placements: max position error {worst_pos:.2e} m, max Jacobian relative error {worst_jac:.2e}, objective monotone"
    ))
}

fn c5_tracking() -> Outcome {
    let speed_bin = desk_radio().speed_per_bin();
    let cfg = TrackConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = 0.0f64;
    for i in 0..50 {
        let p0 = Vec3::new(
            rng.random_range(-300.0..300.0),
            rng.random_range(-300.0..300.0),
            0.0,
        );
        let v = Vec3::from_angles(rng.random_range(-3.1..3.1), std::f64::consts::FRAC_PI_2)
            * rng.random_range(1.0..40.0);
        let mut tracker = Tracker::new();
        for b in 0..10 {
            let t = b as f64 * 0.1;
            let pt = LocalizedPoint {
                position: p0 + v * t,
                weight: 1.0,
            };
            tracker
                .step(&[pt], t, &cfg, 2.0)
                .map_err(|e| e.to_string())?;
        }
        ensure!(tracker.len() == 1, "mover {i}: {} tracks", tracker.len());
        let track = tracker.tracks().next().unwrap();
        let err = track.velocity.distance(v);
        worst = worst.max(err);
        ensure!(
            err <= speed_bin,
            "mover {i}: velocity error {err:.2} m/s > {speed_bin:.2} m/s"
        );
    }

    let mut min_eig = f64::INFINITY;
    let mut track = new_track(1, Vec3::ZERO, 0.0, &cfg);
    let mut t = 0.0;
    for u in 0..1000 {
        let cfg = TrackConfig {
            process_noise: rng.random_range(0.0..50.0),
            measurement_noise: 10f64.powf(rng.random_range(-6.0..3.0)),
            ..cfg
        };
        t += rng.random_range(0.0..1.0);
        let z = Vec3::new(
            rng.random_range(-1e3..1e3),
            rng.random_range(-1e3..1e3),
            rng.random_range(-5.0..5.0),
        );
        track = multi_burst_filter(&track, z, t, &cfg).map_err(|e| e.to_string())?;
        let p = track.covariance_matrix();
        ensure!(
            (p - p.transpose()).amax() <= 1e-9 * p.amax(),
            "update {u}: covariance not symmetric"
        );
        let eig = p.symmetric_eigenvalues().min();
        min_eig = min_eig.min(eig / p.amax());
        ensure!(
            eig >= -1e-12 * p.amax(),
            "update {u}: covariance eigenvalue {eig:.3e}"
        );
    }
    Ok(format!(
        "50 movers: max velocity error {worst:.2} m/s (1 speed bin = {speed_bin:.2} m/s); 1000 updates PSD, min normalized eigenvalue {min_eig:.2e}"
    ))
}

fn random_frame(rng: &mut ChaCha8Rng, valid: &[Vec<u8>]) -> Vec<u8> {
    match rng.random_range(0..4) {
        0 => (0..rng.random_range(0..64)).map(|_| rng.random()).collect(),
        1 => {
            let body: Vec<u8> = (0..rng.random_range(0..48)).map(|_| rng.random()).collect();
            let mut f = (body.len() as u32).to_be_bytes().to_vec();
            f.extend_from_slice(&body);
            f
        }
        2 => {
            // JSON-looking bodies reach deeper into the decoder.
            let pool: &[&[u8]] = &[
                b"{",
                b"}",
                b"\"msg_type\"",
                b":",
                b"\"SensingReport\"",
                b",",
                b"1",
                b"-1e999",
                b"[",
                b"]",
                b"null",
                b"\"trp_result_list\"",
            ];
            let body: Vec<u8> = (0..rng.random_range(0..20))
                .flat_map(|_| pool[rng.random_range(0..pool.len())].to_vec())
                .collect();
            let mut f = (body.len() as u32).to_be_bytes().to_vec();
            f.extend_from_slice(&body);
            f
        }
        _ => {
            let mut f = valid[rng.random_range(0..valid.len())].clone();
            for _ in 0..rng.random_range(1..4) {
                let i = rng.random_range(0..f.len());
                f[i] = rng.random();
            }
            if rng.random_bool(0.2) {
                f.truncate(rng.random_range(0..f.len()));
            }
            f
        }
    }
}

/// One-shot measurements carry their results in the response and get no reports.
fn one_shot_audit(trace: &[TraceLine]) -> Result<usize, String> {
    let decode = |v: &Value| -> SepMessage {
        let body = serde_json::to_vec(v).unwrap();
        let mut f = (body.len() as u32).to_be_bytes().to_vec();
        f.extend_from_slice(&body);
        sep::decode(&f).unwrap()
    };
    let mut one_shot = BTreeSet::new();
    let mut answered = BTreeSet::new();
    for l in trace {
        let TraceRecord::Sep { msg: Some(v), .. } = &l.record else {
            continue;
        };
        match decode(v) {
            SepMessage::SensingRequest(r) if r.measurement_timing.is_one_shot() => {
                one_shot.insert(r.semf_measurement_id);
            }
            SepMessage::SensingResponse(r) if one_shot.contains(&r.semf_measurement_id) => {
                ensure!(
                    r.trp_result_list.is_some(),
                    "one-shot response {} without results",
                    r.semf_measurement_id
                );
                answered.insert(r.semf_measurement_id);
            }
            SepMessage::SensingReport(r) if one_shot.contains(&r.semf_measurement_id) => {
                return Err(format!(
                    "report on one-shot measurement {}",
                    r.semf_measurement_id
                ));
            }
            _ => {}
        }
    }
    Ok(answered.len())
}

fn c6_protocol_conformance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut valid = Vec::new();
    for i in 0..10_000 {
        if i % 2 == 0 {
            let m = support::sep_message(&mut rng);
            let f = sep::encode(&m).map_err(|e| format!("encode {}: {e}", m.msg_type()))?;
            ensure!(
                sep::decode(&f).as_ref() == Ok(&m),
                "SeP round trip {i} ({}) failed",
                m.msg_type()
            );
            if valid.len() < 2000 {
                valid.push(f);
            }
        } else {
            let m = support::api_message(&mut rng);
            let line = api::encode_line(&m).map_err(|e| format!("encode {}: {e}", m.msg_type()))?;
            ensure!(
                api::decode_line(&line, 1).as_ref() == Ok(&m),
                "API round trip {i} ({}) failed",
                m.msg_type()
            );
        }
    }

    let mut accepted = 0u64;
    for _ in 0..1_000_000 {
        let f = random_frame(&mut rng, &valid);
        if let Ok(m) = sep::decode(&f) {
            accepted += 1;
            ensure!(
                sep::encode(&m).is_ok(),
                "decoded a frame the encoder refuses"
            );
        }
        let _ = api::decode_lines(&f[f.len().min(4)..]);
    }

    let one_shot = support::fsm_model::explore(MeasurementTiming::one_shot(), 8);
    let periodic = support::fsm_model::explore(MeasurementTiming::periodic(100, 200), 8);
    for ex in [&one_shot, &periodic] {
        ensure!(
            ex.failures.is_empty(),
            "FSM invariant broken: {}",
            ex.failures[0]
        );
        let pairs: BTreeSet<_> = [
            ("SensingRequest", "SensingResponse"),
            ("SensingRequest", "SensingFailure"),
        ]
        .into();
        ensure!(ex.pairings == pairs, "observed pairings {:?}", ex.pairings);
    }
    use support::fsm_model::Outcome as O;
    ensure!(
        periodic.outcomes.contains(&O::AbortedBySemf)
            && periodic.outcomes.contains(&O::IndicatedByRan),
        "termination variants reached: {:?}",
        periodic.outcomes
    );
    ensure!(
        one_shot.outcomes.contains(&O::OneShotDone),
        "one-shot never completes"
    );

    let mut audited = 0;
    for (name, cfg) in support::corpus() {
        audited += one_shot_audit(&run(&cfg).trace).map_err(|e| format!("{name}: {e}"))?;
    }
    ensure!(audited > 0, "no one-shot measurement in the corpus");
    Ok(format!(
        "10000 round trips; 1M fuzz frames ({accepted} decoded, no panic); FSM depth 8: {} + {} states, both terminations; {audited} one-shot measurements audited",
        one_shot.states, periodic.states
    ))
}

fn sep_records(
    trace: &[TraceLine],
) -> impl Iterator<Item = (u64, &Direction, u32, &str, Option<u64>, Option<u64>)> {
    trace.iter().filter_map(|l| match &l.record {
        TraceRecord::Sep {
            direction,
            gnb_id,
            msg_type,
            semf_measurement_id,
            ran_measurement_id,
            ..
        } => Some((
            l.slot,
            direction,
            *gnb_id,
            msg_type.as_str(),
            *semf_measurement_id,
            *ran_measurement_id,
        )),
        _ => None,
    })
}

fn c7_multistatic_atomicity() -> Outcome {
    let base = support::scenario("multistatic-rx-reject");
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut aborted_legs = 0;
    for i in 0..50 {
        let mut cfg: ScenarioConfig = base.clone();
        cfg.seed = rng.random();
        cfg.faults.reject_request = vec![if rng.random_bool(0.5) { 2 } else { 3 }];
        cfg.latencies.ngc_ms = rng.random_range(2.0..25.0);
        cfg.objects[0].position = Vec3::new(
            rng.random_range(140.0..300.0),
            rng.random_range(-40.0..100.0),
            0.0,
        );
        let trace = run(&cfg).trace;
        let m = compute_metrics(&trace, &cfg.name, cfg.seed);
        ensure!(
            m.bursts.tx_bursts + m.bursts.rx_bursts == 0,
            "case {i}: {} TX and {} RX bursts executed",
            m.bursts.tx_bursts,
            m.bursts.rx_bursts
        );
        let rows = session_summaries(&trace);
        ensure!(
            rows.len() == 1 && rows[0].phase == Some(ApiPhase::Failed),
            "case {i}: session {rows:?}"
        );
        // Every accepted leg (answered with a response) must be aborted.
        let accepted: BTreeSet<(u32, u64, u64)> = sep_records(&trace)
            .filter(|r| r.3 == "SensingResponse")
            .map(|r| (r.2, r.4.unwrap(), r.5.unwrap()))
            .collect();
        let aborts: BTreeSet<(u32, u64, u64)> = sep_records(&trace)
            .filter(|r| r.3 == "SensingAbort" && *r.1 == Direction::SemfToGnb)
            .map(|r| (r.2, r.4.unwrap(), r.5.unwrap()))
            .collect();
        ensure!(
            accepted == aborts,
            "case {i}: accepted legs {accepted:?}, aborted {aborts:?}"
        );
        ensure!(
            sep_records(&trace).any(|r| r.3 == "SensingFailure"),
            "case {i}: no leg was rejected"
        );
        aborted_legs += aborts.len();
    }

    let cfg = support::scenario("multi-mono-ru-failure");
    let trace = run(&cfg).trace;
    let fault_slot = trace
        .iter()
        .find(|l| matches!(l.record, TraceRecord::Fault { .. }))
        .map(|l| l.slot)
        .ok_or("no fault injected")?;
    let failed_legs = trace
        .iter()
        .filter(|l| {
            matches!(
                &l.record,
                TraceRecord::Semf {
                    record: SemfTrace::LegFailed { .. }
                }
            )
        })
        .count();
    let later_scans: Vec<usize> = trace
        .iter()
        .filter(|l| l.slot > fault_slot)
        .filter_map(|l| match &l.record {
            TraceRecord::Semf {
                record: SemfTrace::Scan { legs, objects, .. },
            } if !objects.is_empty() => Some(*legs),
            _ => None,
        })
        .collect();
    let rows = session_summaries(&trace);
    ensure!(failed_legs == 1, "{failed_legs} legs failed");
    ensure!(!later_scans.is_empty(), "no scans after the RU failure");
    ensure!(
        rows[0].phase == Some(ApiPhase::Done),
        "multi-monostatic session ended {:?}",
        rows[0].phase
    );
    Ok(format!(
        "50 RX-rejection runs: zero bursts, {aborted_legs} accepted legs all aborted; multi-monostatic continued with {} scans after the RU failure",
        later_scans.len()
    ))
}

fn result_field(key: &str) -> Option<isac_core::semf::ResultField> {
    let key = match key {
        "annotation" | "unconfirmed_statics" => "geomap_annotation",
        k => k,
    };
    serde_json::from_value(Value::String(key.into())).ok()
}

fn c8_spctm() -> Outcome {
    let (mut denied, mut notifications, mut allowed_sessions) = (0, 0, 0);
    for (name, cfg) in support::corpus() {
        let trace = run(&cfg).trace;
        let mut consumer = BTreeMap::new();
        let mut purpose = BTreeMap::new();
        let mut transparency: BTreeMap<u64, usize> = BTreeMap::new();
        let mut allowed = BTreeSet::new();
        for l in &trace {
            match &l.record {
                TraceRecord::Semf {
                    record:
                        SemfTrace::PolicyDecision {
                            session_id,
                            consumer_id,
                            allowed: ok,
                            cause,
                            ..
                        },
                } => {
                    consumer.insert(*session_id, consumer_id.clone());
                    if *ok {
                        allowed.insert(*session_id);
                    } else if format!("{cause:?}").contains("Consent") {
                        denied += 1;
                    }
                }
                TraceRecord::Semf {
                    record: SemfTrace::Transparency(t),
                } => {
                    purpose.insert(t.session_id, t.purpose.clone());
                    *transparency.entry(t.session_id).or_default() += 1;
                }
                TraceRecord::Api {
                    direction: Direction::SemfToAf,
                    msg_type,
                    session_id: Some(sid),
                    msg,
                    ..
                } if msg_type == "SensingResultNotification" => {
                    let policy = cfg
                        .policies
                        .iter()
                        .find(|p| p.consumer_id == consumer[sid])
                        .ok_or("no policy")?;
                    let profile: BTreeSet<_> = isac_core::semf::purpose_fields(&purpose[sid])
                        .ok_or("unknown purpose")?
                        .intersection(&policy.allowed_result_fields)
                        .copied()
                        .collect();
                    for (k, v) in msg["results"].as_object().ok_or("results not an object")? {
                        let keys: Vec<String> = if k == "objects" {
                            v.as_array()
                                .unwrap()
                                .iter()
                                .flat_map(|o| o.as_object().unwrap().keys().cloned())
                                .collect()
                        } else {
                            vec![k.clone()]
                        };
                        for key in keys {
                            let f = result_field(&key)
                                .ok_or_else(|| format!("{name}: unknown key {key}"))?;
                            ensure!(
                                profile.contains(&f),
                                "{name}: session {sid} received {key} outside {profile:?}"
                            );
                        }
                    }
                    notifications += 1;
                }
                _ => {}
            }
        }
        ensure!(
            transparency.keys().copied().collect::<BTreeSet<_>>() == allowed
                && transparency.values().all(|n| *n == 1),
            "{name}: transparency {transparency:?} for allowed sessions {allowed:?}"
        );
        allowed_sessions += allowed.len();
        if name == "no-consent" {
            let sep = trace
                .iter()
                .filter(|l| matches!(l.record, TraceRecord::Sep { .. }))
                .count();
            ensure!(sep == 0, "no-consent: {sep} SeP messages");
            let rows = session_summaries(&trace);
            ensure!(
                rows[0].failure_cause.as_deref() == Some("NoConsent"),
                "no-consent: {rows:?}"
            );
        }
    }
    ensure!(
        denied > 0 && notifications > 0,
        "audit saw {denied} consent denials, {notifications} notifications"
    );
    Ok(format!(
        "{denied} no-consent denial(s) with zero SeP traffic; {notifications} notifications within profile; {allowed_sessions} allowed sessions with one transparency event each"
    ))
}

fn c9_result_store() -> Outcome {
    let cfg = support::scenario("store-hit");
    let trace = run(&cfg).trace;
    let rows = session_summaries(&trace);
    ensure!(rows.len() == 2, "{} sessions", rows.len());
    let second_arrival = trace
        .iter()
        .filter(|l| matches!(&l.record, TraceRecord::Api { direction: Direction::AfToSemf, msg_type, .. } if msg_type == "SensingServiceRequest"))
        .nth(1)
        .map(|l| l.slot)
        .ok_or("second request not traced")?;
    let later_requests = sep_records(&trace)
        .filter(|r| r.0 >= second_arrival && r.3 == "SensingRequest")
        .count();
    ensure!(
        rows[1].store_hit,
        "second session was not served from the store"
    );
    ensure!(
        later_requests == 0,
        "{later_requests} SensingRequests after the second request"
    );
    ensure!(
        rows[1].notifications == 1 && rows[1].phase == Some(ApiPhase::Done),
        "second session {:?}",
        rows[1]
    );
    let ttl = match &cfg.af_script[1].message {
        api::ApiMessage::SensingServiceRequest(r) => r.max_result_age_s,
        _ => None,
    };
    Ok(format!(
        "second identical request (TTL {ttl:?} s) answered from the store with 0 additional SensingRequests"
    ))
}

fn c10_scheduler() -> Outcome {
    let mut tx_bursts = 0;
    let mut legacy_runs = 0;
    for (name, cfg) in support::corpus() {
        let trace = run(&cfg).trace;
        let m = compute_metrics(&trace, &cfg.name, cfg.seed);
        let spec: BTreeMap<u32, _> = cfg.trps.iter().map(|t| (t.trp_id, t)).collect();
        let mut rx_role: BTreeSet<u32> = BTreeSet::new();
        let mut legacy_rx_used = false;
        for l in &trace {
            match &l.record {
                TraceRecord::Gnb {
                    record:
                        isac_core::gnb::GnbEvent::TxBurst {
                            trp_id,
                            slot,
                            span_slots,
                            ..
                        },
                    ..
                } => {
                    tx_bursts += 1;
                    if let Some(p) = spec[trp_id].ru.pattern() {
                        for s in *slot..slot + span_slots {
                            ensure!(
                                p.is_downlink(s),
                                "{name}: TRP {trp_id} transmitted in uplink slot {s}"
                            );
                        }
                    }
                }
                TraceRecord::Semf {
                    record: SemfTrace::Selected { roles, .. },
                } => {
                    rx_role.extend(
                        roles
                            .iter()
                            .filter(|(_, r)| *r == Role::Rx)
                            .map(|(t, _)| *t),
                    );
                }
                TraceRecord::Gnb {
                    record: isac_core::gnb::GnbEvent::RxBurst { trp_id, .. },
                    ..
                } => {
                    legacy_rx_used |= rx_role.contains(trp_id) && spec[trp_id].ru.legacy;
                }
                _ => {}
            }
        }
        ensure!(
            (m.bursts.pause_overhead_slots > 0) == legacy_rx_used,
            "{name}: pause overhead {} with legacy bistatic RX used = {legacy_rx_used}",
            m.bursts.pause_overhead_slots
        );
        legacy_runs += usize::from(legacy_rx_used);
    }
    ensure!(
        tx_bursts > 0 && legacy_runs > 0,
        "corpus exercised {tx_bursts} TX bursts, {legacy_runs} legacy runs"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let (mut sets, mut shared) = (0, 0);
    while sets < 100 {
        let pattern = rng
            .random_bool(0.5)
            .then(|| TddPattern((0..10).map(|s| s < 7).collect()));
        let mut state = SchedulerState::new(pattern, rng.random_range(0.0..0.8));
        let mut independent = 0.0;
        for owner in 1..=rng.random_range(2..7) {
            let d = SensingDemand {
                period_slots: [10, 20, 40, 80, 160][rng.random_range(0..5)]
                    * rng.random_range(1..3),
                symbols: rng.random_range(2..=28),
                subcarriers: [64, 128, 256][rng.random_range(0..3)],
            };
            if state.admit(owner, d).is_ok() {
                independent +=
                    f64::from(d.symbols) * f64::from(d.subcarriers) / f64::from(d.period_slots);
            }
        }
        if independent == 0.0 {
            continue;
        }
        sets += 1;
        ensure!(
            (state.individual_cost() - independent).abs() <= 1e-9 * independent,
            "individual cost mismatch"
        );
        ensure!(
            state.cost() <= independent * (1.0 + 1e-12),
            "aggregated cost {} > {}",
            state.cost(),
            independent
        );
        shared += usize::from(state.allocations().iter().any(|a| a.members.len() > 1));
    }
    ensure!(shared > 0, "no request set was aggregated");
    Ok(format!(
        "{tx_bursts} TX bursts all in DL slots; 100 request sets with aggregated cost <= sum ({shared} aggregated); pause overhead iff legacy RX ({legacy_runs} run(s))"
    ))
}

fn c11_determinism() -> Outcome {
    let mut n = 0;
    for (name, cfg) in support::corpus() {
        let a = encode_trace(&run(&cfg).trace);
        let b = encode_trace(&run(&cfg).trace);
        ensure!(a == b, "{name}: traces differ");
        n += 1;
    }
    Ok(format!("{n} scenarios byte-identical across two runs"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("DFT oracle equivalence", c1_dft_oracle),
        ("on-grid and off-grid recovery", c2_on_grid_recovery),
        ("clutter and SI suppression", c3_clutter_suppression),
        ("multistatic localization", c4_multistatic_localization),
        ("tracking", c5_tracking),
        ("protocol conformance", c6_protocol_conformance),
        ("multistatic atomicity", c7_multistatic_atomicity),
        ("SPCTM audits", c8_spctm),
        ("result store", c9_result_store),
        ("scheduler", c10_scheduler),
        ("determinism", c11_determinism),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let label = format!("criterion {:>2} {name}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {label} ({secs:.1} s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {label} ({secs:.1} s): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
