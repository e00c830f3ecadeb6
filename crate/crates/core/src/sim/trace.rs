//! Run trace records. One canonical JSON object per line, in processing
//! order.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::api::SessionId;
use crate::gnb::GnbEvent;
use crate::scene::Vec3;
use crate::semf::SemfTrace;
use crate::sep::{GnbId, MeasurementId, TrpId};

/// SeP bodies larger than this are traced without the message itself.
pub const MAX_TRACED_BODY: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AfToSemf,
    SemfToAf,
    SemfToGnb,
    GnbToSemf,
}

/// A reported object compared with the closest unclaimed truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthMatch {
    pub object_id: u64,
    pub truth_id: u32,
    pub position_error_m: f64,
    pub velocity_error_m_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthObject {
    pub id: u32,
    pub position: Vec3,
    pub velocity: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum TraceRecord {
    /// An ISaC-API message, logged when delivered.
    Api {
        direction: Direction,
        consumer: String,
        msg_type: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        session_id: Option<SessionId>,
        /// Length of the encoded line, newline included.
        bytes: u64,
        sent_slot: u64,
        msg: Value,
    },
    /// A sensing-protocol message, logged when delivered.
    Sep {
        direction: Direction,
        gnb_id: GnbId,
        msg_type: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        semf_measurement_id: Option<MeasurementId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ran_measurement_id: Option<MeasurementId>,
        /// Length of the frame, length prefix included.
        bytes: u64,
        sent_slot: u64,
        /// The frame body, unless it exceeds [`MAX_TRACED_BODY`].
        #[serde(default, skip_serializing_if = "Option::is_none")]
        msg: Option<Value>,
    },
    Semf {
        record: SemfTrace,
    },
    Gnb {
        gnb_id: GnbId,
        record: GnbEvent,
    },
    /// Ground truth for one delivered scan.
    Truth {
        session_id: SessionId,
        index: u64,
        t_s: f64,
        gate_m: f64,
        truths: Vec<TruthObject>,
        matches: Vec<TruthMatch>,
        false_alarms: Vec<u64>,
        missed: Vec<u32>,
    },
    Fault {
        fault: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gnb_id: Option<GnbId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        trp_id: Option<TrpId>,
    },
    /// Scripted run time is over; open sessions are ended.
    Shutdown,
    /// Last record of every run.
    End {
        /// Queued events past the drain window.
        undelivered: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub seq: u64,
    pub slot: u64,
    #[serde(flatten)]
    pub record: TraceRecord,
}

impl TraceLine {
    /// Canonical JSON line, newline included.
    pub fn encode(&self) -> Vec<u8> {
        let mut v = crate::canonical::to_canonical_vec(self).expect("trace records are finite");
        v.push(b'\n');
        v
    }
}

#[derive(Debug, thiserror::Error)]
#[error("trace line {line}: {reason}")]
pub struct TraceParseError {
    pub line: usize,
    pub reason: String,
}

/// Parses a trace written by [`encode_trace`].
pub fn parse_trace(bytes: &[u8]) -> Result<Vec<TraceLine>, TraceParseError> {
    bytes
        .split(|b| *b == b'\n')
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            serde_json::from_slice(l).map_err(|e| TraceParseError {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn encode_trace(lines: &[TraceLine]) -> Vec<u8> {
    lines.iter().flat_map(TraceLine::encode).collect()
}
