//! Codec round-trips, golden encodings, stream framing and the composed
//! procedure state machines.

mod support;

use std::path::PathBuf;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use isac_core::api::{self, ApiMessage, SensingServiceRequest, ServiceQuality};
use isac_core::l1sens::{ProcessingConfig, ProcessingDepth};
use isac_core::semf::{ObjectLabel, Polygon};
use isac_core::sep::{
    self, Cause, Duplex, FramedReader, MeasurementTiming, Role, SensingRequest, SepMessage,
    TrpInfo, TrpInformationRequest, TrpRegistrySide, PROCEDURES,
};
use isac_core::{BeamPattern, Vec3};
use support::fsm_model::{explore, Outcome};

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

/// Compares `bytes` with a golden file; `UPDATE_GOLDEN=1` rewrites it.
fn assert_golden(name: &str, bytes: &[u8]) {
    let path = golden(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, bytes).unwrap();
    }
    let expected = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(
        String::from_utf8_lossy(bytes),
        String::from_utf8_lossy(&expected),
        "encoding of {name} drifted from the golden file"
    );
}

fn golden_sensing_request() -> SepMessage {
    let mut entry = support::fsm_model::entry();
    entry.trp_id = 11;
    entry.processing = ProcessingConfig {
        depth: ProcessingDepth::Targets2D,
        ..ProcessingConfig::default()
    };
    entry.beams = vec![BeamPattern {
        pointing_azimuth_rad: 0.25,
        pointing_zenith_rad: 1.5,
        beamwidth_rad: 0.2,
    }];
    SepMessage::SensingRequest(SensingRequest {
        semf_measurement_id: 1,
        trp_config_list: vec![entry],
        measurement_timing: MeasurementTiming::periodic(250, 5000),
    })
}

fn golden_service_request() -> ApiMessage {
    ApiMessage::SensingServiceRequest(SensingServiceRequest {
        consumer_id: "traffic-af".into(),
        area: Polygon::rect(100.0, -50.0, 300.0, 50.0),
        purpose: "traffic_monitoring".into(),
        requested_object_classes: vec![ObjectLabel::Car],
        quality: ServiceQuality::periodic(0.25, 5.0),
        max_result_age_s: None,
    })
}

#[test]
fn sensing_request_frame_matches_golden() {
    let frame = sep::encode(&golden_sensing_request()).unwrap();
    let body_len = u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize;
    assert_eq!(body_len, frame.len() - 4);
    assert_golden("sensing_request.frame", &frame);
    assert_eq!(
        sep::decode(&std::fs::read(golden("sensing_request.frame")).unwrap()).unwrap(),
        golden_sensing_request()
    );
}

#[test]
fn service_request_line_matches_golden() {
    let line = api::encode_line(&golden_service_request()).unwrap();
    assert_eq!(line.iter().filter(|b| **b == b'\n').count(), 1);
    assert_golden("sensing_service_request.jsonl", &line);
    assert_eq!(
        api::decode_line(
            &std::fs::read(golden("sensing_service_request.jsonl")).unwrap(),
            1
        )
        .unwrap(),
        golden_service_request()
    );
}

#[test]
fn every_sep_message_type_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..2000 {
        let m = support::sep_message(&mut rng);
        seen.insert(m.msg_type());
        let frame = sep::encode(&m).unwrap();
        assert_eq!(sep::decode(&frame).unwrap(), m);
        // Canonical: re-encoding the decoded message gives identical bytes.
        assert_eq!(sep::encode(&sep::decode(&frame).unwrap()).unwrap(), frame);
    }
    assert_eq!(seen.len(), SepMessage::ALL_TYPES.len());
}

#[test]
fn every_api_message_type_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..2000 {
        let m = support::api_message(&mut rng);
        seen.insert(m.msg_type());
        let line = api::encode_line(&m).unwrap();
        assert_eq!(api::decode_line(&line, 1).unwrap(), m);
    }
    assert_eq!(seen.len(), 5);
}

#[test]
fn frames_split_at_arbitrary_points_reassemble() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let msgs: Vec<SepMessage> = (0..50).map(|_| support::sep_message(&mut rng)).collect();
    let stream: Vec<u8> = msgs.iter().flat_map(|m| sep::encode(m).unwrap()).collect();
    let mut reader = FramedReader::new();
    let mut out = Vec::new();
    let mut at = 0;
    while at < stream.len() {
        let n = rng.random_range(1..=97).min(stream.len() - at);
        reader.push(&stream[at..at + n]);
        at += n;
        while let Some(m) = reader.next_message().unwrap() {
            out.push(m);
        }
    }
    assert_eq!(out, msgs);
}

#[test]
fn truncated_frame_asks_for_more_bytes() {
    let frame = sep::encode(&golden_sensing_request()).unwrap();
    for cut in [0, 3, 4, frame.len() - 1] {
        assert!(matches!(
            sep::decode(&frame[..cut]),
            Err(sep::DecodeError::NeedMoreBytes { .. })
        ));
    }
    let mut long = frame.clone();
    long.push(b' ');
    assert!(matches!(
        sep::decode(&long),
        Err(sep::DecodeError::ProtocolError { .. })
    ));
}

#[test]
fn unknown_message_type_is_reported_by_name() {
    let body = br#"{"msg_type":"SensingTeleport"}"#;
    let mut frame = (body.len() as u32).to_be_bytes().to_vec();
    frame.extend_from_slice(body);
    assert_eq!(
        sep::decode(&frame),
        Err(sep::DecodeError::UnsupportedMessage(
            "SensingTeleport".into()
        ))
    );
}

#[test]
fn bad_api_line_does_not_poison_the_rest() {
    let good = api::encode_line(&golden_service_request()).unwrap();
    let mut bytes = good.clone();
    bytes.extend_from_slice(b"{\"msg_type\": 7}\n");
    bytes.extend_from_slice(&good);
    let out = api::decode_lines(&bytes);
    assert_eq!(out.len(), 3);
    assert!(out[0].is_ok() && out[2].is_ok());
    match &out[1] {
        Err(api::ApiDecodeError::ProtocolError { line, .. }) => assert_eq!(*line, 2),
        other => panic!("expected an error on line 2, got {other:?}"),
    }
}

#[test]
fn encoder_refuses_invalid_messages() {
    let SepMessage::SensingRequest(mut r) = golden_sensing_request() else {
        unreachable!()
    };
    r.semf_measurement_id = 0;
    assert!(sep::encode(&SepMessage::SensingRequest(r.clone())).is_err());
    r.semf_measurement_id = 1;
    r.trp_config_list[0].role = Role::Tx;
    assert!(
        sep::encode(&SepMessage::SensingRequest(r)).is_err(),
        "TX entries cannot request processing"
    );
}

#[test]
fn procedure_table_names_match_the_message_set() {
    for (_, init, ok, fail) in PROCEDURES {
        for t in [init, ok, fail] {
            assert!(SepMessage::ALL_TYPES.contains(&t), "{t}");
        }
    }
}

fn trp(id: u32, gnb: u32) -> TrpInfo {
    TrpInfo {
        trp_id: id,
        gnb_id: gnb,
        position: Vec3::new(0.0, 0.0, 10.0),
        duplex: Duplex::Tdd,
        roles: vec![Role::Tx, Role::Rx, Role::TxRx],
        beam_count: 8,
        beamwidth_rad: 0.2,
        max_bandwidth_hz: 1e8,
        sic_total_db: 80.0,
        coverage_radius_m: 500.0,
        legacy: false,
        can_pause_comm: false,
    }
}

#[test]
fn trp_information_exchange_answers_with_response_or_failure() {
    let mut side = TrpRegistrySide::default();
    side.insert(trp(12, 1));
    side.insert(trp(11, 1));
    let ask = |gnb_id, trp_filter| {
        sep::trp_information_procedure(&side, &TrpInformationRequest { gnb_id, trp_filter })
    };
    match ask(1, None) {
        SepMessage::TrpInformationResponse(r) => {
            assert_eq!(
                r.trp_info_list.iter().map(|t| t.trp_id).collect::<Vec<_>>(),
                [11, 12]
            );
        }
        other => panic!("{other:?}"),
    }
    for (gnb, filter) in [(2, None), (1, Some(vec![13]))] {
        match ask(gnb, filter) {
            SepMessage::TrpInformationFailure(f) => assert_eq!(f.cause.cause, Cause::UnknownTrp),
            other => panic!("{other:?}"),
        }
    }
    let (name, init, ok, fail) = PROCEDURES[0];
    assert_eq!(name, "TRP Information Exchange");
    assert_eq!(
        (init, ok, fail),
        (
            "TrpInformationRequest",
            "TrpInformationResponse",
            "TrpInformationFailure"
        )
    );
}

#[test]
fn composed_machines_are_safe_to_depth_8() {
    let one_shot = explore(MeasurementTiming::one_shot(), 8);
    let periodic = explore(MeasurementTiming::periodic(100, 200), 8);
    for ex in [&one_shot, &periodic] {
        assert!(ex.failures.is_empty(), "{:#?}", ex.failures);
        let expected: std::collections::BTreeSet<_> = [
            ("SensingRequest", "SensingResponse"),
            ("SensingRequest", "SensingFailure"),
        ]
        .into();
        assert_eq!(ex.pairings, expected);
    }
    assert!(one_shot.outcomes.contains(&Outcome::OneShotDone));
    assert!(!one_shot.outcomes.contains(&Outcome::AbortedBySemf));
    for o in [
        Outcome::PeriodicComplete,
        Outcome::AbortedBySemf,
        Outcome::IndicatedByRan,
        Outcome::Rejected,
        Outcome::TimedOut,
    ] {
        assert!(periodic.outcomes.contains(&o), "{o:?} unreachable");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn sep_decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
        let _ = sep::decode(&bytes);
        let _ = sep::decode_prefix(&bytes);
    }

    #[test]
    fn mutated_frames_never_panic(seed in any::<u64>(), flips in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut frame = sep::encode(&support::sep_message(&mut rng)).unwrap();
        for _ in 0..flips {
            let i = rng.random_range(0..frame.len());
            frame[i] = rng.random();
        }
        if let Ok(m) = sep::decode(&frame) {
            // Whatever decodes must satisfy the encoder's invariants.
            prop_assert!(sep::encode(&m).is_ok());
        }
    }

    #[test]
    fn api_decode_never_panics(s in "\\PC{0,200}") {
        let _ = api::decode_lines(s.as_bytes());
    }
}
