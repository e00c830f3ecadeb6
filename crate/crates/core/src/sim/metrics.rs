//! Run metrics and per-session summaries, computed from the trace alone so
//! that a stored trace can be re-reported.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::api::{ApiPhase, SessionId};
use crate::gnb::GnbEvent;
use crate::semf::{SemfTrace, SessionMode};
use crate::sep::MeasurementId;

use super::trace::{Direction, TraceLine, TraceRecord};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionMetrics {
    pub scans: u64,
    pub truths: u64,
    pub reported: u64,
    pub matched: u64,
    /// Matched over reported; 1 when nothing was reported.
    pub precision: f64,
    /// Matched over truths; 1 when there was nothing to find.
    pub recall: f64,
    pub gate_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_rmse_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity_rmse_m_per_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkStats {
    pub messages: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurstStats {
    pub tx_bursts: u64,
    pub rx_bursts: u64,
    pub tx_outside_downlink: u64,
    pub skipped_bursts: u64,
    /// Communication slots paused for legacy sensing receivers.
    pub pause_overhead_slots: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMetrics {
    pub scenario: String,
    pub seed: u64,
    pub detection: DetectionMetrics,
    /// Per link, e.g. `semf->gnb1` or `af:city->semf`.
    pub links: BTreeMap<String, LinkStats>,
    /// Sensing-protocol volume over the control plane.
    pub sep_total: LinkStats,
    pub api_total: LinkStats,
    pub sep_by_type: BTreeMap<String, u64>,
    pub bursts: BurstStats,
    /// Session count by final phase.
    pub sessions: BTreeMap<String, u64>,
    pub notifications: u64,
    pub protocol_violations: u64,
    pub end_slot: u64,
    /// Wall-clock time of the run; not derived from the trace.
    #[serde(default)]
    pub runtime_s: f64,
}

/// One summary row per API session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: SessionId,
    pub consumer_id: String,
    /// Final phase; `None` only if the trace is cut short.
    pub phase: Option<ApiPhase>,
    pub mode: Option<SessionMode>,
    pub store_hit: bool,
    pub legs: u64,
    pub sensing_requests: u64,
    pub notifications: u64,
    pub failure_cause: Option<String>,
}

fn link_name(direction: Direction, endpoint: &str) -> String {
    match direction {
        Direction::AfToSemf => format!("af:{endpoint}->semf"),
        Direction::SemfToAf => format!("semf->af:{endpoint}"),
        Direction::SemfToGnb => format!("semf->gnb{endpoint}"),
        Direction::GnbToSemf => format!("gnb{endpoint}->semf"),
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Aggregates a trace. `runtime_s` is left at zero.
pub fn compute_metrics(trace: &[TraceLine], scenario: &str, seed: u64) -> RunMetrics {
    let mut m = RunMetrics {
        scenario: scenario.into(),
        seed,
        ..RunMetrics::default()
    };
    let (mut pos_sq, mut vel_sq) = (0.0, 0.0);
    for line in trace {
        m.end_slot = m.end_slot.max(line.slot);
        match &line.record {
            TraceRecord::Api {
                direction,
                consumer,
                msg_type,
                bytes,
                ..
            } => {
                let l = m.links.entry(link_name(*direction, consumer)).or_default();
                l.messages += 1;
                l.bytes += bytes;
                m.api_total.messages += 1;
                m.api_total.bytes += bytes;
                if *direction == Direction::SemfToAf && msg_type == "SensingResultNotification" {
                    m.notifications += 1;
                }
            }
            TraceRecord::Sep {
                direction,
                gnb_id,
                msg_type,
                bytes,
                ..
            } => {
                let l = m
                    .links
                    .entry(link_name(*direction, &gnb_id.to_string()))
                    .or_default();
                l.messages += 1;
                l.bytes += bytes;
                m.sep_total.messages += 1;
                m.sep_total.bytes += bytes;
                *m.sep_by_type.entry(msg_type.clone()).or_default() += 1;
            }
            TraceRecord::Gnb { record, .. } => match record {
                GnbEvent::TxBurst { downlink, .. } => {
                    m.bursts.tx_bursts += 1;
                    m.bursts.tx_outside_downlink += u64::from(!downlink);
                }
                GnbEvent::RxBurst {
                    paused_comm_slots, ..
                } => {
                    m.bursts.rx_bursts += 1;
                    m.bursts.pause_overhead_slots += paused_comm_slots;
                }
                GnbEvent::BurstSkipped { .. } => m.bursts.skipped_bursts += 1,
                GnbEvent::Violation(_) => m.protocol_violations += 1,
                _ => {}
            },
            TraceRecord::Semf { record } => match record {
                SemfTrace::SessionEnded { phase, .. } => {
                    *m.sessions.entry(format!("{phase:?}")).or_default() += 1;
                }
                SemfTrace::Violation { .. } => m.protocol_violations += 1,
                _ => {}
            },
            TraceRecord::Truth {
                gate_m,
                truths,
                matches,
                false_alarms,
                ..
            } => {
                let d = &mut m.detection;
                d.scans += 1;
                d.gate_m = *gate_m;
                d.truths += truths.len() as u64;
                d.reported += (matches.len() + false_alarms.len()) as u64;
                d.matched += matches.len() as u64;
                for t in matches {
                    pos_sq += t.position_error_m * t.position_error_m;
                    vel_sq += t.velocity_error_m_per_s * t.velocity_error_m_per_s;
                }
            }
            TraceRecord::Fault { .. } | TraceRecord::Shutdown | TraceRecord::End { .. } => {}
        }
    }
    let d = &mut m.detection;
    d.precision = ratio(d.matched, d.reported);
    d.recall = ratio(d.matched, d.truths);
    if d.matched > 0 {
        d.position_rmse_m = Some((pos_sq / d.matched as f64).sqrt());
        d.velocity_rmse_m_per_s = Some((vel_sq / d.matched as f64).sqrt());
    }
    m
}

/// Rebuilds one row per API session from the trace.
pub fn session_summaries(trace: &[TraceLine]) -> Vec<SessionSummary> {
    let mut rows: BTreeMap<SessionId, SessionSummary> = BTreeMap::new();
    let mut owner: BTreeMap<MeasurementId, SessionId> = BTreeMap::new();
    for line in trace {
        match &line.record {
            TraceRecord::Semf { record } => match record {
                SemfTrace::PolicyDecision {
                    session_id,
                    consumer_id,
                    ..
                } => {
                    rows.entry(*session_id).or_insert_with(|| SessionSummary {
                        session_id: *session_id,
                        consumer_id: consumer_id.clone(),
                        phase: None,
                        mode: None,
                        store_hit: false,
                        legs: 0,
                        sensing_requests: 0,
                        notifications: 0,
                        failure_cause: None,
                    });
                }
                SemfTrace::StoreHit { session_id, .. } => {
                    if let Some(r) = rows.get_mut(session_id) {
                        r.store_hit = true;
                    }
                }
                SemfTrace::Selected {
                    session_id, mode, ..
                } => {
                    if let Some(r) = rows.get_mut(session_id) {
                        r.mode = Some(*mode);
                    }
                }
                SemfTrace::LegStarted {
                    session_id,
                    semf_measurement_id,
                    ..
                } => {
                    owner.insert(*semf_measurement_id, *session_id);
                    if let Some(r) = rows.get_mut(session_id) {
                        r.legs += 1;
                    }
                }
                SemfTrace::SessionEnded { session_id, phase } => {
                    if let Some(r) = rows.get_mut(session_id) {
                        r.phase = Some(*phase);
                    }
                }
                _ => {}
            },
            TraceRecord::Sep {
                direction: Direction::SemfToGnb,
                msg_type,
                semf_measurement_id: Some(id),
                ..
            } if msg_type == "SensingRequest" => {
                if let Some(r) = owner.get(id).and_then(|s| rows.get_mut(s)) {
                    r.sensing_requests += 1;
                }
            }
            TraceRecord::Api {
                direction: Direction::SemfToAf,
                msg_type,
                session_id: Some(sid),
                msg,
                ..
            } => {
                let Some(r) = rows.get_mut(sid) else { continue };
                match msg_type.as_str() {
                    "SensingResultNotification" => r.notifications += 1,
                    "SensingServiceFailure" => {
                        let cause = msg
                            .get("cause")
                            .and_then(|c| c.as_str())
                            .unwrap_or_default();
                        if cause != "UnknownSession" && r.failure_cause.is_none() {
                            r.failure_cause = Some(cause.to_string());
                        }
                    }
                    _ => {}
                }
            }
            _ => {}
        }
    }
    rows.into_values().collect()
}
