//! The application-facing sensing service: messages exchanged with
//! application functions, their newline-delimited wire format, session
//! lifecycle and result minimization.

mod codec;
mod session;

use serde::{Deserialize, Serialize};

pub use codec::{
    decode_line, decode_lines, encode_line, ApiDecodeError, ApiEncodeError, ApiReader,
};
pub use session::{minimize, present_fields, ApiPhase, ApiSession, IllegalTransition, SessionLink};

use crate::scene::Vec3;
use crate::semf::{DenyCause, MapAnnotation, ObjectLabel, Polygon, UnlocalizedDetection};
use crate::sep::TrpId;

pub type SessionId = u64;

/// Requested update behavior of a sensing service.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceQuality {
    /// Seconds between notifications of a periodic service.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub update_period_s: Option<f64>,
    /// Lifetime of a periodic service.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    pub one_shot: bool,
}

impl ServiceQuality {
    pub fn one_shot() -> Self {
        Self {
            update_period_s: None,
            duration_s: None,
            one_shot: true,
        }
    }

    pub fn periodic(update_period_s: f64, duration_s: f64) -> Self {
        Self {
            update_period_s: Some(update_period_s),
            duration_s: Some(duration_s),
            one_shot: false,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.one_shot {
            if self.update_period_s.is_some() || self.duration_s.is_some() {
                return Err("one-shot service with a period or duration".into());
            }
            return Ok(());
        }
        match (self.update_period_s, self.duration_s) {
            (Some(p), Some(d)) if p > 0.0 && d >= p && p.is_finite() && d.is_finite() => Ok(()),
            (Some(_), Some(_)) => {
                Err("periodic service needs 0 < update period <= duration".into())
            }
            _ => Err("periodic service needs an update period and a duration".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingServiceRequest {
    pub consumer_id: String,
    pub area: Polygon,
    pub purpose: String,
    /// Only objects of these classes are reported; empty means all.
    #[serde(default)]
    pub requested_object_classes: Vec<ObjectLabel>,
    pub quality: ServiceQuality,
    /// Oldest cached result the consumer accepts; absent disables the cache.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_result_age_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingServiceResponse {
    pub session_id: SessionId,
}

/// One reported object; every field is optional and present only when the
/// session's minimization profile allows it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarse_position: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<ObjectLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_position: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contributing_trps: Option<Vec<TrpId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<MapAnnotation>,
}

/// Sensing results after minimization.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinimizedResults {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objects: Vec<ObjectReport>,
    /// Ids of map statics that no detection confirmed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unconfirmed_statics: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections_2d: Option<Vec<UnlocalizedDetection>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingResultNotification {
    pub session_id: SessionId,
    pub timestamp_s: f64,
    pub results: MinimizedResults,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortOrigin {
    Consumer,
    Network,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingServiceAbort {
    pub session_id: SessionId,
    pub origin: AbortOrigin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ServiceFailureCause {
    PolicyDenied,
    NoConsent,
    NoCoverage,
    RanFailure,
    UnknownSession,
    InvalidRequest,
}

impl From<DenyCause> for ServiceFailureCause {
    fn from(c: DenyCause) -> Self {
        match c {
            DenyCause::NoConsent => ServiceFailureCause::NoConsent,
            DenyCause::InvalidRequest => ServiceFailureCause::InvalidRequest,
            DenyCause::UnknownConsumer
            | DenyCause::PurposeNotAllowed
            | DenyCause::AreaNotAllowed
            | DenyCause::UpdateTooFrequent => ServiceFailureCause::PolicyDenied,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingServiceFailure {
    /// Absent when the failing request never got a session.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<SessionId>,
    pub cause: ServiceFailureCause,
    #[serde(default)]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ApiMessage {
    SensingServiceRequest(SensingServiceRequest),
    SensingServiceResponse(SensingServiceResponse),
    SensingResultNotification(SensingResultNotification),
    SensingServiceAbort(SensingServiceAbort),
    SensingServiceFailure(SensingServiceFailure),
}

impl ApiMessage {
    pub const ALL_TYPES: [&'static str; 5] = [
        "SensingServiceRequest",
        "SensingServiceResponse",
        "SensingResultNotification",
        "SensingServiceAbort",
        "SensingServiceFailure",
    ];

    pub fn msg_type(&self) -> &'static str {
        match self {
            ApiMessage::SensingServiceRequest(_) => "SensingServiceRequest",
            ApiMessage::SensingServiceResponse(_) => "SensingServiceResponse",
            ApiMessage::SensingResultNotification(_) => "SensingResultNotification",
            ApiMessage::SensingServiceAbort(_) => "SensingServiceAbort",
            ApiMessage::SensingServiceFailure(_) => "SensingServiceFailure",
        }
    }

    /// The session the message refers to, if any.
    pub fn session_id(&self) -> Option<SessionId> {
        match self {
            ApiMessage::SensingServiceRequest(_) => None,
            ApiMessage::SensingServiceResponse(m) => Some(m.session_id),
            ApiMessage::SensingResultNotification(m) => Some(m.session_id),
            ApiMessage::SensingServiceAbort(m) => Some(m.session_id),
            ApiMessage::SensingServiceFailure(m) => m.session_id,
        }
    }

    /// Checks invariants serde cannot express.
    pub fn validate(&self) -> Result<(), String> {
        if self.session_id() == Some(0) {
            return Err("session id 0 is reserved".into());
        }
        match self {
            ApiMessage::SensingServiceRequest(r) => {
                if r.consumer_id.is_empty() {
                    return Err("empty consumer id".into());
                }
                if r.max_result_age_s.is_some_and(|a| !(a >= 0.0)) {
                    return Err("max result age must be non-negative".into());
                }
                Ok(())
            }
            ApiMessage::SensingResultNotification(n) if !(n.timestamp_s >= 0.0) => {
                Err("notification timestamp must be non-negative".into())
            }
            ApiMessage::SensingResultNotification(n)
                if n.results
                    .objects
                    .iter()
                    .any(|o| o.confidence.is_some_and(|c| !(0.0..=1.0).contains(&c))) =>
            {
                Err("confidence outside [0, 1]".into())
            }
            _ => Ok(()),
        }
    }
}
