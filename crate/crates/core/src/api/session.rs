//! Session lifecycle on the API side and result minimization.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{MinimizedResults, ObjectReport, SessionId};
use crate::scene::Vec3;
use crate::semf::spctm::COARSE_POSITION_GRID_M;
use crate::semf::{MinimizationProfile, ObjectLabel, ResultField, ScanResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ApiPhase {
    Requested,
    Active,
    Done,
    Aborted,
    Failed,
}

impl ApiPhase {
    pub fn is_terminal(self) -> bool {
        matches!(self, ApiPhase::Done | ApiPhase::Aborted | ApiPhase::Failed)
    }

    pub fn can_move_to(self, to: ApiPhase) -> bool {
        use ApiPhase::*;
        matches!(
            (self, to),
            (Requested, Active)
                | (Requested, Failed)
                | (Requested, Aborted)
                | (Active, Done | Aborted | Failed)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("session {session_id}: illegal transition {from:?} -> {to:?}")]
pub struct IllegalTransition {
    pub session_id: SessionId,
    pub from: ApiPhase,
    pub to: ApiPhase,
}

/// Where a session's results come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionLink {
    /// Not decided yet, or the request was refused.
    None,
    Measurement,
    /// Served from results another session produced.
    StoreHit {
        source_session: SessionId,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiSession {
    pub session_id: SessionId,
    pub consumer_id: String,
    pub phase: ApiPhase,
    pub link: SessionLink,
    pub notifications: u64,
}

impl ApiSession {
    pub fn new(session_id: SessionId, consumer_id: impl Into<String>) -> Self {
        Self {
            session_id,
            consumer_id: consumer_id.into(),
            phase: ApiPhase::Requested,
            link: SessionLink::None,
            notifications: 0,
        }
    }

    pub fn advance(&mut self, to: ApiPhase) -> Result<(), IllegalTransition> {
        if !self.phase.can_move_to(to) {
            return Err(IllegalTransition {
                session_id: self.session_id,
                from: self.phase,
                to,
            });
        }
        self.phase = to;
        Ok(())
    }
}

fn coarse(p: Vec3) -> Vec3 {
    let g = COARSE_POSITION_GRID_M;
    let r = |v: f64| (v / g).round() * g + 0.0;
    Vec3::new(r(p.x), r(p.y), r(p.z))
}

const PER_OBJECT: [ResultField; 9] = [
    ResultField::ObjectId,
    ResultField::CoarsePosition,
    ResultField::Position,
    ResultField::Velocity,
    ResultField::Class,
    ResultField::Confidence,
    ResultField::PredictedPosition,
    ResultField::ContributingTrps,
    ResultField::GeomapAnnotation,
];

/// Reduces a scan to what `profile` allows. With a non-empty `classes`
/// list, only objects of those classes are kept (and counted).
pub fn minimize(
    scan: &ScanResult,
    profile: &MinimizationProfile,
    classes: &[ObjectLabel],
) -> MinimizedResults {
    let kept: Vec<usize> = (0..scan.objects.len())
        .filter(|i| classes.is_empty() || classes.contains(&scan.objects[*i].class))
        .collect();
    let a = |f| profile.allows(f);
    let objects = if PER_OBJECT.iter().any(|f| a(*f)) {
        kept.iter()
            .map(|&i| {
                let o = &scan.objects[i];
                ObjectReport {
                    object_id: a(ResultField::ObjectId).then_some(o.object_id),
                    coarse_position: a(ResultField::CoarsePosition).then(|| coarse(o.position)),
                    position: a(ResultField::Position).then_some(o.position),
                    velocity: a(ResultField::Velocity).then_some(o.velocity),
                    class: a(ResultField::Class).then_some(o.class),
                    confidence: a(ResultField::Confidence).then_some(o.confidence),
                    predicted_position: if a(ResultField::PredictedPosition) {
                        scan.predicted_positions.get(i).copied()
                    } else {
                        None
                    },
                    contributing_trps: a(ResultField::ContributingTrps)
                        .then(|| o.contributing_trps.clone()),
                    annotation: if a(ResultField::GeomapAnnotation) {
                        scan.annotations.get(i).copied()
                    } else {
                        None
                    },
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    MinimizedResults {
        object_count: a(ResultField::ObjectCount).then_some(kept.len()),
        objects,
        unconfirmed_statics: a(ResultField::GeomapAnnotation)
            .then(|| scan.unconfirmed_statics.clone()),
        detections_2d: a(ResultField::Detections2D).then(|| scan.unlocalized.clone()),
    }
}

/// The result fields that actually appear in `r`.
pub fn present_fields(r: &MinimizedResults) -> BTreeSet<ResultField> {
    let mut out = BTreeSet::new();
    if r.object_count.is_some() {
        out.insert(ResultField::ObjectCount);
    }
    if r.unconfirmed_statics.is_some() {
        out.insert(ResultField::GeomapAnnotation);
    }
    if r.detections_2d.is_some() {
        out.insert(ResultField::Detections2D);
    }
    for o in &r.objects {
        let flags = [
            (o.object_id.is_some(), ResultField::ObjectId),
            (o.coarse_position.is_some(), ResultField::CoarsePosition),
            (o.position.is_some(), ResultField::Position),
            (o.velocity.is_some(), ResultField::Velocity),
            (o.class.is_some(), ResultField::Class),
            (o.confidence.is_some(), ResultField::Confidence),
            (
                o.predicted_position.is_some(),
                ResultField::PredictedPosition,
            ),
            (o.contributing_trps.is_some(), ResultField::ContributingTrps),
            (o.annotation.is_some(), ResultField::GeomapAnnotation),
        ];
        out.extend(flags.into_iter().filter(|(p, _)| *p).map(|(_, f)| f));
    }
    out
}
