//! Point-to-track association and constant-velocity Kalman tracking.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Matrix3x6, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::{L1Error, TrackConfig};
use crate::scene::{ObjectClass, Vec3};

/// Estimated kinematic state of one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackState {
    pub object_id: u64,
    pub position: Vec3,
    pub velocity: Vec3,
    /// Row-major 6×6 covariance of `(position, velocity)`.
    pub covariance: [[f64; 6]; 6],
    pub last_update_time_s: f64,
    pub hit_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_hint: Option<ObjectClass>,
}

impl TrackState {
    pub fn covariance_matrix(&self) -> Matrix6<f64> {
        Matrix6::from_fn(|r, c| self.covariance[r][c])
    }

    fn set_covariance(&mut self, p: &Matrix6<f64>) {
        for r in 0..6 {
            for c in 0..6 {
                self.covariance[r][c] = p[(r, c)];
            }
        }
    }

    fn state(&self) -> Vector6<f64> {
        Vector6::new(
            self.position.x,
            self.position.y,
            self.position.z,
            self.velocity.x,
            self.velocity.y,
            self.velocity.z,
        )
    }

    /// Position extrapolated to `t_s` at constant velocity.
    pub fn predicted_position(&self, t_s: f64) -> Vec3 {
        let dt = (t_s - self.last_update_time_s).max(0.0);
        self.position + self.velocity * dt
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }
}

/// Starts a track at a measured position with zero velocity.
pub fn new_track(object_id: u64, position: Vec3, t_s: f64, cfg: &TrackConfig) -> TrackState {
    let mut covariance = [[0.0; 6]; 6];
    for (i, row) in covariance.iter_mut().enumerate() {
        row[i] = if i < 3 {
            cfg.measurement_noise
        } else {
            cfg.initial_velocity_variance
        };
    }
    TrackState {
        object_id,
        position,
        velocity: Vec3::ZERO,
        covariance,
        last_update_time_s: t_s,
        hit_count: 1,
        class_hint: None,
    }
}

fn transition(dt: f64) -> Matrix6<f64> {
    let mut f = Matrix6::identity();
    for i in 0..3 {
        f[(i, i + 3)] = dt;
    }
    f
}

fn process_noise(dt: f64, q: f64) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    for i in 0..3 {
        m[(i, i)] = q * dt.powi(3) / 3.0;
        m[(i, i + 3)] = q * dt.powi(2) / 2.0;
        m[(i + 3, i)] = q * dt.powi(2) / 2.0;
        m[(i + 3, i + 3)] = q * dt;
    }
    m
}

/// One predict/correct cycle with a 3D position measurement at `t_s`.
pub fn multi_burst_filter(
    track: &TrackState,
    measured_pos: Vec3,
    t_s: f64,
    cfg: &TrackConfig,
) -> Result<TrackState, L1Error> {
    if !(t_s >= track.last_update_time_s) {
        return Err(L1Error::NonMonotoneTime {
            last_s: track.last_update_time_s,
            t_s,
        });
    }
    let dt = t_s - track.last_update_time_s;
    let f = transition(dt);
    let x_pred = f * track.state();
    let p_pred =
        f * track.covariance_matrix() * f.transpose() + process_noise(dt, cfg.process_noise);

    let h = Matrix3x6::from_fn(|r, c| if r == c { 1.0 } else { 0.0 });
    let r = Matrix3::identity() * cfg.measurement_noise;
    let z = Vector3::new(measured_pos.x, measured_pos.y, measured_pos.z);
    let innovation = z - h * x_pred;
    let s = h * p_pred * h.transpose() + r;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| L1Error::InvalidConfig("singular innovation covariance".into()))?;
    let k = p_pred * h.transpose() * s_inv;
    let x = x_pred + k * innovation;
    // Joseph form keeps the covariance PSD under rounding.
    let i_kh = Matrix6::identity() - k * h;
    let p = i_kh * p_pred * i_kh.transpose() + k * r * k.transpose();
    let p = (p + p.transpose()) * 0.5;

    let mut out = track.clone();
    out.position = Vec3::new(x[0], x[1], x[2]);
    out.velocity = Vec3::new(x[3], x[4], x[5]);
    out.set_covariance(&p);
    out.last_update_time_s = t_s;
    out.hit_count = track.hit_count.saturating_add(1);
    Ok(out)
}

/// Unit direction of travel, or `None` when the speed is 0.1 m/s or less.
pub fn direction_of_travel(track: &TrackState) -> Option<Vec3> {
    if track.speed() > 0.1 {
        track.velocity.normalized()
    } else {
        None
    }
}

/// A localized detection ready for association.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizedPoint {
    pub position: Vec3,
    /// Linear weight used for centroids.
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Association {
    pub point: usize,
    pub track_id: u64,
    pub distance_m: f64,
}

/// A cluster of unassociated points, proposed as a new object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateObject {
    pub position: Vec3,
    pub members: Vec<usize>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectDetection {
    pub associations: Vec<Association>,
    pub groups: Vec<CandidateObject>,
}

/// Greedy nearest-neighbor association of points to track predictions at
/// `t_s`, then single-linkage grouping of the leftovers.
///
/// Candidate pairs are taken in ascending distance, ties broken by
/// `(point index, track id)`. Groups are ordered by their lowest member index.
pub fn object_detect(
    points: &[LocalizedPoint],
    tracks: &[TrackState],
    t_s: f64,
    gate_m: f64,
    group_epsilon_m: f64,
) -> ObjectDetection {
    let mut pairs: Vec<(f64, usize, u64)> = Vec::new();
    for (pi, p) in points.iter().enumerate() {
        for t in tracks {
            let d = p.position.distance(t.predicted_position(t_s));
            if d <= gate_m {
                pairs.push((d, pi, t.object_id));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut point_used = vec![false; points.len()];
    let mut track_used = std::collections::BTreeSet::new();
    let mut associations = Vec::new();
    for (d, pi, tid) in pairs {
        if point_used[pi] || track_used.contains(&tid) {
            continue;
        }
        point_used[pi] = true;
        track_used.insert(tid);
        associations.push(Association {
            point: pi,
            track_id: tid,
            distance_m: d,
        });
    }
    associations.sort_by_key(|a| a.point);

    // Single-linkage via union-find over the unassigned points.
    let free: Vec<usize> = (0..points.len()).filter(|i| !point_used[*i]).collect();
    let mut parent: Vec<usize> = (0..free.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for a in 0..free.len() {
        for b in a + 1..free.len() {
            if points[free[a]].position.distance(points[free[b]].position) <= group_epsilon_m {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for a in 0..free.len() {
        let root = find(&mut parent, a);
        clusters.entry(root).or_default().push(free[a]);
    }
    let groups = clusters
        .into_values()
        .map(|members| {
            let total: f64 = members.iter().map(|i| points[*i].weight).sum();
            let position = if total > 0.0 {
                members.iter().fold(Vec3::ZERO, |acc, i| {
                    acc + points[*i].position * points[*i].weight
                }) / total
            } else {
                members
                    .iter()
                    .fold(Vec3::ZERO, |acc, i| acc + points[*i].position)
                    / members.len() as f64
            };
            CandidateObject {
                position,
                members,
                weight: total,
            }
        })
        .collect();
    ObjectDetection {
        associations,
        groups,
    }
}

/// Per-receiver track store driven burst by burst.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tracker {
    tracks: BTreeMap<u64, TrackState>,
    next_id: u64,
}

impl Tracker {
    pub fn new() -> Self {
        Self {
            tracks: BTreeMap::new(),
            next_id: 1,
        }
    }

    pub fn tracks(&self) -> impl Iterator<Item = &TrackState> {
        self.tracks.values()
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    /// Associates, updates, spawns and prunes tracks for the points seen at `t_s`.
    pub fn step(
        &mut self,
        points: &[LocalizedPoint],
        t_s: f64,
        cfg: &TrackConfig,
        group_epsilon_m: f64,
    ) -> Result<ObjectDetection, L1Error> {
        if let Some(t) = self.tracks.values().find(|t| t.last_update_time_s > t_s) {
            return Err(L1Error::NonMonotoneTime {
                last_s: t.last_update_time_s,
                t_s,
            });
        }
        let current: Vec<TrackState> = self.tracks.values().cloned().collect();
        let det = object_detect(points, &current, t_s, cfg.gate_m, group_epsilon_m);
        for a in &det.associations {
            let updated = multi_burst_filter(
                &self.tracks[&a.track_id],
                points[a.point].position,
                t_s,
                cfg,
            )?;
            self.tracks.insert(a.track_id, updated);
        }
        for g in &det.groups {
            // A cluster inside the gate of a track already updated this burst
            // is a second return from the same object.
            let absorbed = self.tracks.values().any(|t| {
                t.last_update_time_s == t_s && t.position.distance(g.position) <= cfg.gate_m
            });
            if absorbed {
                continue;
            }
            let id = self.next_id.max(1);
            self.next_id = id + 1;
            self.tracks.insert(id, new_track(id, g.position, t_s, cfg));
        }
        self.tracks
            .retain(|_, t| t_s - t.last_update_time_s <= cfg.max_coast_s);
        Ok(det)
    }
}
