//! Seeded random generators and corpus helpers shared by the integration
//! test targets.

#![allow(dead_code)]

pub mod fsm_model;

use std::f64::consts::PI;
use std::path::PathBuf;

use num_complex::Complex64;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use isac_core::api::{
    AbortOrigin, ApiMessage, MinimizedResults, ObjectReport, SensingResultNotification,
    SensingServiceAbort, SensingServiceFailure, SensingServiceRequest, SensingServiceResponse,
    ServiceFailureCause, ServiceQuality,
};
use isac_core::l1sens::{
    periodogram, Crop, Decimation, ProcessingConfig, ProcessingDepth, SensingMeasurement,
    TargetPoint2D, TargetPoint4D, TrackState, Window, ZeroPad,
};
use isac_core::semf::{MapAnnotation, ObjectLabel, Polygon, UnlocalizedDetection};
use isac_core::sep::*;
use isac_core::sim::ScenarioConfig;
use isac_core::{BeamPattern, ComplexGrid, GridMeta, Vec3};

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// Every scenario of the corpus, sorted by file name.
pub fn corpus() -> Vec<(String, ScenarioConfig)> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(corpus_dir())
        .expect("scenario directory")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            let cfg = ScenarioConfig::load(&p).unwrap_or_else(|e| panic!("{name}: {e}"));
            (name, cfg)
        })
        .collect()
}

pub fn scenario(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(corpus_dir().join(format!("{name}.json"))).expect("corpus scenario loads")
}

fn f(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn id(rng: &mut ChaCha8Rng) -> u64 {
    rng.random_range(1..=u32::MAX as u64 * 4)
}

fn vec3(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(f(rng, -1e4, 1e4), f(rng, -1e4, 1e4), f(rng, -50.0, 200.0))
}

fn text(rng: &mut ChaCha8Rng) -> String {
    let pool = [
        "",
        "x",
        "RU 3 lost",
        "naïve ünïcode",
        "quote \" and \\ slash",
        "tab\tand\nnewline",
        "€∑",
    ];
    pool.choose(rng).unwrap().to_string()
}

fn cause(rng: &mut ChaCha8Rng) -> CauseDiagnostics {
    let c = *[
        Cause::UnknownTrp,
        Cause::UnsupportedMode,
        Cause::ResourceUnavailable,
        Cause::BackhaulTooSlow,
        Cause::BufferOverflow,
        Cause::HandshakeTimeout,
        Cause::RuFailure,
        Cause::UnknownMeasurementId,
        Cause::DuplicateMeasurementId,
        Cause::InvalidConfig,
        Cause::SemfSideFailure,
    ]
    .choose(rng)
    .unwrap();
    CauseDiagnostics::new(c, text(rng))
}

fn meta(rng: &mut ChaCha8Rng) -> GridMeta {
    GridMeta {
        carrier_freq_hz: f(rng, 1e9, 6e9),
        subcarrier_spacing_hz: *[15e3, 30e3, 60e3].choose(rng).unwrap(),
        symbol_period_s: f(rng, 1e-5, 1e-4),
    }
}

pub fn grid(rng: &mut ChaCha8Rng, n: usize, m: usize) -> ComplexGrid {
    let meta = meta(rng);
    let mut g = ComplexGrid::from_fn(n, m, meta, |_, _| Complex64::new(0.0, 0.0));
    for v in g.data_mut() {
        *v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    }
    if rng.random_bool(0.3) {
        let (k, l) = (rng.random_range(0..n), rng.random_range(0..m));
        g.mask_out(k, l);
    }
    g
}

fn point2d(rng: &mut ChaCha8Rng) -> TargetPoint2D {
    TargetPoint2D {
        path_length_m: f(rng, 0.0, 5e3),
        closing_speed_m_per_s: f(rng, -200.0, 200.0),
        power_db: f(rng, 12.0, 120.0),
        complex_amplitude: Complex64::new(f(rng, -1e3, 1e3), f(rng, -1e3, 1e3)),
        delay_bin: f(rng, 0.0, 256.0),
        doppler_bin: f(rng, -32.0, 32.0),
    }
}

fn track(rng: &mut ChaCha8Rng) -> TrackState {
    let mut covariance = [[0.0; 6]; 6];
    for (r, row) in covariance.iter_mut().enumerate() {
        row[r] = f(rng, 0.1, 100.0);
    }
    TrackState {
        object_id: id(rng),
        position: vec3(rng),
        velocity: vec3(rng) * 0.01,
        covariance,
        last_update_time_s: f(rng, 0.0, 100.0),
        hit_count: rng.random_range(1..100),
        class_hint: None,
    }
}

fn measurement(rng: &mut ChaCha8Rng) -> SensingMeasurement {
    let count = rng.random_range(0..4);
    match rng.random_range(0..5) {
        0 => SensingMeasurement::ChannelIq((0..count.min(2)).map(|_| grid(rng, 4, 3)).collect()),
        1 => SensingMeasurement::PeriodogramOut(
            (0..count.min(2))
                .map(|_| {
                    let g = grid(rng, 4, 4);
                    let mut p = periodogram(&g, 8, 4, Window::Rectangular).unwrap();
                    if rng.random_bool(0.5) {
                        p.set_reference_peak_db(Some(f(rng, -50.0, 50.0)));
                    }
                    p
                })
                .collect(),
        ),
        2 => SensingMeasurement::Targets2D((0..count).map(|_| point2d(rng)).collect()),
        3 => SensingMeasurement::Targets4D(
            (0..count)
                .map(|_| {
                    let p = point2d(rng);
                    TargetPoint4D::from_2d(&p, f(rng, -PI, PI), f(rng, 0.0, PI))
                })
                .collect(),
        ),
        _ => SensingMeasurement::Objects((0..count).map(|_| track(rng)).collect()),
    }
}

fn processing(rng: &mut ChaCha8Rng, depth: ProcessingDepth) -> ProcessingConfig {
    let mut p = ProcessingConfig {
        depth,
        clutter_removal: rng.random_bool(0.5),
        window: if rng.random_bool(0.5) {
            Window::Rectangular
        } else {
            Window::BlackmanHarris
        },
        group_epsilon_bins: f(rng, 0.0, 4.0),
        ..ProcessingConfig::default()
    };
    if rng.random_bool(0.3) {
        p.crop = Some(Crop {
            freq_keep: rng.random_range(2..256),
            time_keep: rng.random_range(2..64),
        });
    }
    if rng.random_bool(0.3) {
        p.decimate = Decimation {
            freq_step: rng.random_range(1..4),
            time_step: rng.random_range(1..4),
        };
    }
    if rng.random_bool(0.3) {
        p.zero_pad = Some(ZeroPad {
            delay_bins: 1024,
            doppler_bins: 256,
        });
    }
    p.detect.threshold_db_above_noise = f(rng, 3.0, 20.0);
    p.detect.max_targets = rng.random_range(1..100);
    p.track.gate_m = f(rng, 1.0, 50.0);
    p
}

fn entry(rng: &mut ChaCha8Rng) -> TrpConfigListEntry {
    let role = *[Role::Tx, Role::Rx, Role::TxRx].choose(rng).unwrap();
    let depth = if role == Role::Tx {
        ProcessingDepth::ChannelIq
    } else {
        *[
            ProcessingDepth::ChannelIq,
            ProcessingDepth::PeriodogramOut,
            ProcessingDepth::Targets2D,
            ProcessingDepth::Targets4D,
            ProcessingDepth::Objects,
        ]
        .choose(rng)
        .unwrap()
    };
    let bistatic = (role == Role::Rx && rng.random_bool(0.7)).then(|| BistaticLink {
        tx_trp_id: rng.random_range(1..1000),
        tx_gnb_id: rng.random_range(1..100),
        tx_position: vec3(rng),
        reference: match rng.random_range(0..3) {
            0 => ReferenceSource::Preconfigured,
            1 => ReferenceSource::Backhaul {
                latency_ms: f(rng, 0.0, 20.0),
                buffer_ms: f(rng, 0.0, 50.0),
            },
            _ => ReferenceSource::OverTheAir {
                sinr_db: f(rng, -10.0, 40.0),
                mcs_threshold_db: f(rng, 0.0, 20.0),
            },
        },
        scheduling: if rng.random_bool(0.5) {
            Scheduling::SemiStatic
        } else {
            Scheduling::Dynamic {
                lead_time_ms: f(rng, 0.0, 20.0),
            }
        },
    });
    TrpConfigListEntry {
        trp_id: rng.random_range(1..1000),
        role,
        mode: if bistatic.is_some() || role == Role::Tx {
            SensingMode::Bistatic
        } else {
            SensingMode::Monostatic
        },
        resource: ResourceConfig {
            period_slots: rng.random_range(1..200),
            burst_symbols: rng.random_range(2..64),
            subcarriers: rng.random_range(2..3300),
            signal: *[
                SignalMode::PreconfiguredReference,
                SignalMode::ReuseCommunication,
                SignalMode::Opportunistic,
            ]
            .choose(rng)
            .unwrap(),
        },
        processing: processing(rng, depth),
        beams: (0..rng.random_range(1..5))
            .map(|_| BeamPattern {
                pointing_azimuth_rad: f(rng, -3.1, 3.1),
                pointing_zenith_rad: f(rng, 0.1, 3.0),
                beamwidth_rad: f(rng, 0.05, 1.0),
            })
            .collect(),
        bistatic,
        wideband_precoding: rng.random_bool(0.5),
    }
}

fn timing(rng: &mut ChaCha8Rng) -> MeasurementTiming {
    let mut t = if rng.random_bool(0.4) {
        MeasurementTiming::one_shot()
    } else {
        let p = rng.random_range(1..2000);
        MeasurementTiming::periodic(p, p * rng.random_range(1..50))
    };
    if rng.random_bool(0.5) {
        t.start_ms = Some(rng.random_range(0..100_000));
    }
    t
}

fn trp_info(rng: &mut ChaCha8Rng) -> TrpInfo {
    let duplex = *[Duplex::Tdd, Duplex::Fdd, Duplex::Sniffer]
        .choose(rng)
        .unwrap();
    TrpInfo {
        trp_id: rng.random_range(1..1000),
        gnb_id: rng.random_range(1..100),
        position: vec3(rng),
        duplex,
        roles: if duplex == Duplex::Sniffer {
            vec![Role::Rx]
        } else {
            vec![Role::Tx, Role::Rx, Role::TxRx]
        },
        beam_count: rng.random_range(1..64),
        beamwidth_rad: f(rng, 0.05, 1.0),
        max_bandwidth_hz: f(rng, 5e6, 4e8),
        sic_total_db: f(rng, 0.0, 120.0),
        coverage_radius_m: f(rng, 0.0, 5e3),
        legacy: rng.random_bool(0.2),
        can_pause_comm: rng.random_bool(0.2),
    }
}

fn results(rng: &mut ChaCha8Rng) -> Vec<TrpResultListEntry> {
    (0..rng.random_range(0..3))
        .map(|_| TrpResultListEntry {
            trp_id: rng.random_range(1..1000),
            timestamp_s: f(rng, 0.0, 1e4),
            payload: measurement(rng),
        })
        .collect()
}

/// A random message satisfying every encoder invariant.
pub fn sep_message(rng: &mut ChaCha8Rng) -> SepMessage {
    let semf = id(rng);
    let ran = id(rng);
    match rng.random_range(0..10) {
        0 => SepMessage::TrpInformationRequest(TrpInformationRequest {
            gnb_id: rng.random_range(1..100),
            trp_filter: rng.random_bool(0.5).then(|| {
                (0..rng.random_range(0..4))
                    .map(|_| rng.random_range(1..1000))
                    .collect()
            }),
        }),
        1 => SepMessage::TrpInformationResponse(TrpInformationResponse {
            gnb_id: rng.random_range(1..100),
            trp_info_list: (0..rng.random_range(0..4)).map(|_| trp_info(rng)).collect(),
        }),
        2 => SepMessage::TrpInformationFailure(TrpInformationFailure {
            gnb_id: rng.random_range(1..100),
            cause: cause(rng),
        }),
        3 => SepMessage::SensingRequest(SensingRequest {
            semf_measurement_id: semf,
            trp_config_list: (0..rng.random_range(1..4)).map(|_| entry(rng)).collect(),
            measurement_timing: timing(rng),
        }),
        4 => SepMessage::SensingResponse(SensingResponse {
            semf_measurement_id: semf,
            ran_measurement_id: ran,
            trp_result_list: rng.random_bool(0.5).then(|| results(rng)),
        }),
        5 => SepMessage::SensingFailure(SensingFailure {
            semf_measurement_id: semf,
            cause: cause(rng),
        }),
        6 => SepMessage::SensingUpdate(SensingUpdate {
            semf_measurement_id: semf,
            ran_measurement_id: ran,
            trp_config_list: (0..rng.random_range(1..3)).map(|_| entry(rng)).collect(),
        }),
        7 => SepMessage::SensingReport(SensingReport {
            semf_measurement_id: semf,
            ran_measurement_id: ran,
            trp_result_list: results(rng),
        }),
        8 => SepMessage::SensingAbort(SensingAbort {
            semf_measurement_id: semf,
            ran_measurement_id: ran,
            cause: rng.random_bool(0.5).then(|| cause(rng)),
        }),
        _ => SepMessage::SensingFailureIndication(SensingFailureIndication {
            semf_measurement_id: semf,
            ran_measurement_id: ran,
            cause: cause(rng),
        }),
    }
}

fn label(rng: &mut ChaCha8Rng) -> ObjectLabel {
    *[
        ObjectLabel::Building,
        ObjectLabel::StaticUnknown,
        ObjectLabel::Human,
        ObjectLabel::Car,
        ObjectLabel::Unclassified,
    ]
    .choose(rng)
    .unwrap()
}

fn maybe<T>(rng: &mut ChaCha8Rng, g: impl FnOnce(&mut ChaCha8Rng) -> T) -> Option<T> {
    if rng.random_bool(0.5) {
        Some(g(rng))
    } else {
        None
    }
}

fn object_report(rng: &mut ChaCha8Rng) -> ObjectReport {
    ObjectReport {
        object_id: maybe(rng, id),
        coarse_position: maybe(rng, vec3),
        position: maybe(rng, vec3),
        velocity: maybe(rng, vec3),
        class: maybe(rng, label),
        confidence: maybe(rng, |r| f(r, 0.0, 1.0)),
        predicted_position: maybe(rng, vec3),
        contributing_trps: maybe(rng, |r| {
            (0..r.random_range(1..4))
                .map(|_| r.random_range(1..1000))
                .collect()
        }),
        annotation: maybe(rng, |r| {
            if r.random_bool(0.5) {
                MapAnnotation::KnownStatic
            } else {
                MapAnnotation::NewDetection
            }
        }),
    }
}

/// A random valid API message.
pub fn api_message(rng: &mut ChaCha8Rng) -> ApiMessage {
    let sid = id(rng);
    match rng.random_range(0..5) {
        0 => {
            let (x, y) = (f(rng, -1e3, 1e3), f(rng, -1e3, 1e3));
            let (w, h) = (f(rng, 1.0, 500.0), f(rng, 1.0, 500.0));
            let quality = if rng.random_bool(0.5) {
                ServiceQuality::one_shot()
            } else {
                let p = f(rng, 0.01, 5.0);
                ServiceQuality::periodic(p, p * f(rng, 1.0, 20.0))
            };
            ApiMessage::SensingServiceRequest(SensingServiceRequest {
                consumer_id: ["traffic-af", "city", "af-ü"]
                    .choose(rng)
                    .unwrap()
                    .to_string(),
                area: Polygon::rect(x, y, x + w, y + h),
                purpose: ["traffic_monitoring", "presence_detection"]
                    .choose(rng)
                    .unwrap()
                    .to_string(),
                requested_object_classes: (0..rng.random_range(0..3)).map(|_| label(rng)).collect(),
                quality,
                max_result_age_s: maybe(rng, |r| f(r, 0.0, 60.0)),
            })
        }
        1 => ApiMessage::SensingServiceResponse(SensingServiceResponse { session_id: sid }),
        2 => {
            let objects: Vec<ObjectReport> = (0..rng.random_range(0..4))
                .map(|_| object_report(rng))
                .collect();
            ApiMessage::SensingResultNotification(SensingResultNotification {
                session_id: sid,
                timestamp_s: f(rng, 0.0, 1e4),
                results: MinimizedResults {
                    object_count: maybe(rng, |_| objects.len()),
                    objects,
                    unconfirmed_statics: maybe(rng, |r| {
                        (0..r.random_range(0..3))
                            .map(|_| r.random_range(0..99))
                            .collect()
                    }),
                    detections_2d: maybe(rng, |r| {
                        (0..r.random_range(0..3))
                            .map(|_| UnlocalizedDetection {
                                trp_id: r.random_range(1..1000),
                                path_length_m: f(r, 0.0, 1e3),
                                closing_speed_m_per_s: f(r, -100.0, 100.0),
                            })
                            .collect()
                    }),
                },
            })
        }
        3 => ApiMessage::SensingServiceAbort(SensingServiceAbort {
            session_id: sid,
            origin: if rng.random_bool(0.5) {
                AbortOrigin::Consumer
            } else {
                AbortOrigin::Network
            },
        }),
        _ => ApiMessage::SensingServiceFailure(SensingServiceFailure {
            session_id: maybe(rng, |_| sid),
            cause: *[
                ServiceFailureCause::PolicyDenied,
                ServiceFailureCause::NoConsent,
                ServiceFailureCause::NoCoverage,
                ServiceFailureCause::RanFailure,
                ServiceFailureCause::UnknownSession,
                ServiceFailureCause::InvalidRequest,
            ]
            .choose(rng)
            .unwrap(),
            detail: text(rng),
        }),
    }
}
