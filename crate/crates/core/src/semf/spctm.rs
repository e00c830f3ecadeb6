//! Sensing policy, consent and transparency management: who may sense
//! where, how often, for what, and which result fields they get to see.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::area::Polygon;

/// A field of a delivered sensing result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultField {
    ObjectCount,
    /// Positions rounded to a coarse grid.
    CoarsePosition,
    Position,
    Velocity,
    Class,
    Confidence,
    ObjectId,
    PredictedPosition,
    ContributingTrps,
    GeomapAnnotation,
    /// Detections that could not be localized (range and speed only).
    #[serde(rename = "detections_2d")]
    Detections2D,
}

impl ResultField {
    pub const ALL: [ResultField; 11] = [
        ResultField::ObjectCount,
        ResultField::CoarsePosition,
        ResultField::Position,
        ResultField::Velocity,
        ResultField::Class,
        ResultField::Confidence,
        ResultField::ObjectId,
        ResultField::PredictedPosition,
        ResultField::ContributingTrps,
        ResultField::GeomapAnnotation,
        ResultField::Detections2D,
    ];

    /// Key of the field in a serialized result.
    pub fn key(self) -> &'static str {
        match self {
            ResultField::ObjectCount => "object_count",
            ResultField::CoarsePosition => "coarse_position",
            ResultField::Position => "position",
            ResultField::Velocity => "velocity",
            ResultField::Class => "class",
            ResultField::Confidence => "confidence",
            ResultField::ObjectId => "object_id",
            ResultField::PredictedPosition => "predicted_position",
            ResultField::ContributingTrps => "contributing_trps",
            ResultField::GeomapAnnotation => "annotation",
            ResultField::Detections2D => "detections_2d",
        }
    }
}

/// Grid size used for coarse positions, in meters.
pub const COARSE_POSITION_GRID_M: f64 = 10.0;

/// Fields a purpose can justify at most.
pub fn purpose_fields(purpose: &str) -> Option<BTreeSet<ResultField>> {
    use ResultField::*;
    let fields: &[ResultField] = match purpose {
        "presence_detection" => &[ObjectCount, CoarsePosition],
        "traffic_monitoring" => &[
            ObjectCount,
            CoarsePosition,
            Position,
            Velocity,
            Class,
            Confidence,
        ],
        "object_tracking" => &[
            ObjectCount,
            CoarsePosition,
            Position,
            Velocity,
            Class,
            Confidence,
            ObjectId,
            PredictedPosition,
        ],
        "environment_mapping" => &[
            ObjectCount,
            CoarsePosition,
            Position,
            Class,
            GeomapAnnotation,
        ],
        "network_diagnostics" => &ResultField::ALL,
        _ => return None,
    };
    Some(fields.iter().copied().collect())
}

/// The result fields one session may receive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinimizationProfile {
    pub fields: BTreeSet<ResultField>,
}

impl MinimizationProfile {
    pub fn allows(&self, f: ResultField) -> bool {
        self.fields.contains(&f)
    }

    pub fn full() -> Self {
        Self {
            fields: ResultField::ALL.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyRecord {
    pub consumer_id: String,
    pub allowed_area: Polygon,
    pub max_update_frequency_hz: f64,
    pub allowed_purposes: BTreeSet<String>,
    pub allowed_result_fields: BTreeSet<ResultField>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsentZone {
    pub area: Polygon,
    pub sensing_allowed: bool,
    pub owner: String,
}

/// What the policy check looks at.
#[derive(Debug, Clone, PartialEq)]
pub struct SpctmTrigger<'a> {
    pub consumer_id: &'a str,
    pub area: &'a Polygon,
    pub purpose: &'a str,
    /// `None` for a one-shot request.
    pub update_period_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DenyCause {
    UnknownConsumer,
    PurposeNotAllowed,
    AreaNotAllowed,
    UpdateTooFrequent,
    NoConsent,
    InvalidRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SpctmDecision {
    Allow { profile: MinimizationProfile },
    Deny { cause: DenyCause, detail: String },
}

fn deny(cause: DenyCause, detail: impl Into<String>) -> SpctmDecision {
    SpctmDecision::Deny {
        cause,
        detail: detail.into(),
    }
}

/// Decides whether a sensing request may run and with which profile.
///
/// Every matching policy of the consumer is tried in order; the first one
/// that admits the request decides the profile.
pub fn spctm_check(
    trigger: &SpctmTrigger<'_>,
    policies: &[PolicyRecord],
    consents: &[ConsentZone],
) -> SpctmDecision {
    if let Err(e) = trigger.area.validate() {
        return deny(DenyCause::InvalidRequest, format!("requested area: {e}"));
    }
    let Some(table) = purpose_fields(trigger.purpose) else {
        return deny(
            DenyCause::PurposeNotAllowed,
            format!("unknown purpose {:?}", trigger.purpose),
        );
    };
    let mine: Vec<&PolicyRecord> = policies
        .iter()
        .filter(|p| p.consumer_id == trigger.consumer_id)
        .collect();
    if mine.is_empty() {
        return deny(
            DenyCause::UnknownConsumer,
            format!("no policy for consumer {:?}", trigger.consumer_id),
        );
    }
    let mut last = None;
    let mut admitted = None;
    for p in mine {
        if !p.allowed_purposes.contains(trigger.purpose) {
            last = Some(deny(
                DenyCause::PurposeNotAllowed,
                format!("purpose {:?} not allowed", trigger.purpose),
            ));
            continue;
        }
        if !p.allowed_area.covers(trigger.area) {
            last = Some(deny(
                DenyCause::AreaNotAllowed,
                "requested area exceeds the allowed area",
            ));
            continue;
        }
        if let Some(period) = trigger.update_period_s {
            if !(period > 0.0) || 1.0 / period > p.max_update_frequency_hz + 1e-12 {
                last = Some(deny(
                    DenyCause::UpdateTooFrequent,
                    format!(
                        "update period {period} s exceeds {} Hz",
                        p.max_update_frequency_hz
                    ),
                ));
                continue;
            }
        }
        admitted = Some(p);
        break;
    }
    let Some(policy) = admitted else {
        return last.expect("at least one policy was examined");
    };
    for (i, z) in consents.iter().enumerate() {
        if !z.sensing_allowed && z.area.overlaps(trigger.area) {
            return deny(
                DenyCause::NoConsent,
                format!("area overlaps consent zone {i} of {:?}", z.owner),
            );
        }
    }
    SpctmDecision::Allow {
        profile: MinimizationProfile {
            fields: policy
                .allowed_result_fields
                .intersection(&table)
                .copied()
                .collect(),
        },
    }
}

/// Public notice that sensing starts over an area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransparencyEvent {
    pub session_id: u64,
    pub area: Polygon,
    pub purpose: String,
    pub t_s: f64,
}
