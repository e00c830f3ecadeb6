//! Object classification, fusion with the static map, SeMF-level tracking
//! and the result store.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::area::Polygon;
use super::fusion::{FusedObject, ObjectLabel};
use crate::l1sens::{multi_burst_filter, new_track, TrackConfig, TrackState};
use crate::scene::Vec3;

/// Below this speed an object counts as static, m/s.
pub const STATIC_SPEED_M_PER_S: f64 = 0.5;
/// Fastest pedestrian, m/s.
pub const HUMAN_MAX_SPEED_M_PER_S: f64 = 3.0;
/// Fastest car, m/s.
pub const CAR_MAX_SPEED_M_PER_S: f64 = 70.0;

/// A known static structure: an axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoStatic {
    pub id: u32,
    pub center: Vec3,
    pub half_extent: Vec3,
    #[serde(default = "default_static_label")]
    pub label: String,
}

fn default_static_label() -> String {
    "building".into()
}

impl GeoStatic {
    pub fn contains(&self, p: Vec3) -> bool {
        let d = p - self.center;
        d.x.abs() <= self.half_extent.x
            && d.y.abs() <= self.half_extent.y
            && d.z.abs() <= self.half_extent.z
    }
}

/// Speed-based rule table; static objects are buildings only where the map has one.
pub fn classify(obj: &FusedObject, geomap: &[GeoStatic]) -> ObjectLabel {
    let speed = obj.velocity.norm();
    if speed < STATIC_SPEED_M_PER_S {
        if geomap.iter().any(|g| g.contains(obj.position)) {
            ObjectLabel::Building
        } else {
            ObjectLabel::StaticUnknown
        }
    } else if speed <= HUMAN_MAX_SPEED_M_PER_S {
        ObjectLabel::Human
    } else if speed <= CAR_MAX_SPEED_M_PER_S {
        ObjectLabel::Car
    } else {
        ObjectLabel::Unclassified
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapAnnotation {
    KnownStatic,
    NewDetection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GeomapFusion {
    /// One annotation per fused object, in order.
    pub annotations: Vec<MapAnnotation>,
    /// Map statics no detection fell into.
    pub unconfirmed_statics: Vec<u32>,
}

pub fn geomap_fuse(geomap: &[GeoStatic], fused: &[FusedObject]) -> GeomapFusion {
    let annotations = fused
        .iter()
        .map(|o| {
            if geomap.iter().any(|g| g.contains(o.position)) {
                MapAnnotation::KnownStatic
            } else {
                MapAnnotation::NewDetection
            }
        })
        .collect();
    let unconfirmed_statics = geomap
        .iter()
        .filter(|g| !fused.iter().any(|o| g.contains(o.position)))
        .map(|g| g.id)
        .collect();
    GeomapFusion {
        annotations,
        unconfirmed_statics,
    }
}

/// Scans a track may go unmatched before it is retired on the next miss.
pub const MAX_MISSED_SCANS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemfTrack {
    pub state: TrackState,
    pub missed_scans: u32,
}

/// One tracked object after a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedObject {
    pub track_id: u64,
    pub position: Vec3,
    pub velocity: Vec3,
    pub predicted_position: Vec3,
}

/// SeMF-level tracks of one session, built from fused objects scan by scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemfTracker {
    pub cfg: TrackConfig,
    tracks: BTreeMap<u64, SemfTrack>,
    next_id: u64,
    last_t_s: Option<f64>,
}

impl SemfTracker {
    pub fn new(cfg: TrackConfig) -> Self {
        Self {
            cfg,
            tracks: BTreeMap::new(),
            next_id: 1,
            last_t_s: None,
        }
    }

    pub fn tracks(&self) -> impl Iterator<Item = (&u64, &SemfTrack)> {
        self.tracks.iter()
    }

    /// Associates `fused` to tracks at `t_s` (nearest predicted track within
    /// the gate, greedily by distance), updates, spawns and retires tracks,
    /// and predicts every matched or new object `horizon_s` ahead.
    ///
    /// Returns one entry per fused object, in order. Scans at a time before
    /// the previous one are ignored.
    pub fn track_predict(
        &mut self,
        fused: &[FusedObject],
        t_s: f64,
        horizon_s: f64,
    ) -> Vec<TrackedObject> {
        if self.last_t_s.is_some_and(|last| t_s < last) {
            return Vec::new();
        }
        self.last_t_s = Some(t_s);
        let mut pairs: Vec<(f64, usize, u64)> = Vec::new();
        for (i, o) in fused.iter().enumerate() {
            for (id, tr) in &self.tracks {
                let d = tr.state.predicted_position(t_s).distance(o.position);
                if d <= self.cfg.gate_m {
                    pairs.push((d, i, *id));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut assigned: BTreeMap<usize, u64> = BTreeMap::new();
        let mut taken = std::collections::BTreeSet::new();
        for (_, i, id) in pairs {
            if assigned.contains_key(&i) || taken.contains(&id) {
                continue;
            }
            assigned.insert(i, id);
            taken.insert(id);
        }
        let mut out = Vec::with_capacity(fused.len());
        for (i, o) in fused.iter().enumerate() {
            let id = match assigned.get(&i) {
                Some(id) => {
                    let tr = self.tracks.get_mut(id).expect("assigned tracks exist");
                    if let Ok(s) = multi_burst_filter(&tr.state, o.position, t_s, &self.cfg) {
                        tr.state = s;
                    }
                    tr.missed_scans = 0;
                    *id
                }
                None => {
                    let id = self.next_id;
                    self.next_id += 1;
                    self.tracks.insert(
                        id,
                        SemfTrack {
                            state: new_track(id, o.position, t_s, &self.cfg),
                            missed_scans: 0,
                        },
                    );
                    taken.insert(id);
                    id
                }
            };
            let s = &self.tracks[&id].state;
            out.push(TrackedObject {
                track_id: id,
                position: s.position,
                velocity: s.velocity,
                predicted_position: s.position + s.velocity * horizon_s,
            });
        }
        for (id, tr) in self.tracks.iter_mut() {
            if !taken.contains(id) {
                tr.missed_scans += 1;
            }
        }
        self.tracks
            .retain(|_, t| t.missed_scans <= MAX_MISSED_SCANS);
        out
    }
}

/// Everything the SeMF knows about an area after one scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub t_s: f64,
    pub objects: Vec<FusedObject>,
    pub annotations: Vec<MapAnnotation>,
    pub predicted_positions: Vec<Vec3>,
    pub unconfirmed_statics: Vec<u32>,
    pub unlocalized: Vec<super::fusion::UnlocalizedDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultStoreEntry {
    pub area: Polygon,
    pub produced_at_s: f64,
    pub freshness_ttl_s: f64,
    pub result: ScanResult,
    pub source_session: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultStore {
    /// Latest entry per producing session.
    entries: BTreeMap<u64, ResultStoreEntry>,
}

impl ResultStore {
    pub fn store(&mut self, entry: ResultStoreEntry) {
        assert!(
            entry.freshness_ttl_s > 0.0,
            "result store entries need a positive ttl"
        );
        self.entries.insert(entry.source_session, entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The freshest entry covering `area` that is no older than both its
    /// ttl and `max_age_s`.
    pub fn serve(&self, area: &Polygon, max_age_s: f64, now_s: f64) -> Option<&ResultStoreEntry> {
        self.entries
            .values()
            .filter(|e| {
                let age = now_s - e.produced_at_s;
                age >= 0.0 && age <= e.freshness_ttl_s && age <= max_age_s && e.area.covers(area)
            })
            .max_by(|a, b| {
                a.produced_at_s
                    .total_cmp(&b.produced_at_s)
                    .then(b.source_session.cmp(&a.source_session))
            })
    }

    /// Drops entries that can no longer serve anything.
    pub fn expire(&mut self, now_s: f64) {
        self.entries
            .retain(|_, e| now_s - e.produced_at_s <= e.freshness_ttl_s);
    }
}
