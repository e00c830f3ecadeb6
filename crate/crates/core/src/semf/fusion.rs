//! Combining per-TRP results into objects: clustering of monostatic
//! position estimates, and position/velocity solving from bistatic path
//! lengths of one TX and several RXs.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::l1sens::{localize_monostatic, SensingMeasurement, TargetPoint2D};
use crate::scene::Vec3;
use crate::sep::TrpId;

/// Default clustering distance between per-TRP estimates, meters.
pub const DEFAULT_FUSION_GATE_M: f64 = 5.0;

/// Iteration cap of the multistatic solver.
pub const GN_MAX_ITERATIONS: usize = 50;

/// Step length below which the multistatic solver has converged, meters.
pub const GN_STEP_TOLERANCE_M: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectLabel {
    Building,
    StaticUnknown,
    Human,
    Car,
    Unclassified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedObject {
    pub object_id: u64,
    pub position: Vec3,
    pub velocity: Vec3,
    pub class: ObjectLabel,
    pub confidence: f64,
    pub contributing_trps: Vec<TrpId>,
}

/// Confidence of an object seen by `count` independent TRPs.
pub fn fusion_confidence(count: usize) -> f64 {
    1.0 - 0.5f64.powi(count as i32)
}

/// One localized estimate of one TRP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrpEstimate {
    pub trp_id: TrpId,
    pub trp_position: Vec3,
    pub position: Vec3,
    /// Full velocity, when the TRP tracked the object.
    pub velocity: Option<Vec3>,
    /// Monostatic closing speed (negative path rate), when known.
    pub closing_speed_m_per_s: Option<f64>,
    /// Linear power weight.
    pub weight: f64,
}

/// Turns a monostatic measurement at `Targets4D` or `Objects` depth into
/// per-target estimates. Other depths yield nothing.
pub fn monostatic_estimates(
    trp_id: TrpId,
    trp_position: Vec3,
    m: &SensingMeasurement,
) -> Vec<TrpEstimate> {
    match m {
        SensingMeasurement::Targets4D(points) => points
            .iter()
            .map(|p| TrpEstimate {
                trp_id,
                trp_position,
                position: localize_monostatic(p, trp_position),
                velocity: None,
                closing_speed_m_per_s: Some(p.closing_speed_m_per_s),
                weight: p.complex_amplitude.norm_sqr().max(f64::MIN_POSITIVE),
            })
            .collect(),
        SensingMeasurement::Objects(tracks) => tracks
            .iter()
            .map(|t| TrpEstimate {
                trp_id,
                trp_position,
                position: t.position,
                velocity: Some(t.velocity),
                closing_speed_m_per_s: None,
                weight: 1.0,
            })
            .collect(),
        _ => Vec::new(),
    }
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    let mut i = i;
    while parent[i] != r {
        let next = parent[i];
        parent[i] = r;
        i = next;
    }
    r
}

/// Minimum-norm least-squares solution of `A v = b` for 3-vectors.
fn min_norm_solve(rows: &[Vec3], rhs: &[f64]) -> Vec3 {
    if rows.is_empty() {
        return Vec3::ZERO;
    }
    let a = DMatrix::from_fn(rows.len(), 3, |i, j| match j {
        0 => rows[i].x,
        1 => rows[i].y,
        _ => rows[i].z,
    });
    let b = DVector::from_column_slice(rhs);
    let svd = a.svd(true, true);
    match svd.solve(&b, 1e-9) {
        Ok(v) => Vec3::new(v[0], v[1], v[2]),
        Err(_) => Vec3::ZERO,
    }
}

/// Velocity of one object from monostatic estimates: the power-weighted
/// mean of tracked velocities if any TRP tracked it, otherwise the
/// minimum-norm solution of `v·û_i = -closing_i / 2` over the TRPs.
fn cluster_velocity(members: &[&TrpEstimate], position: Vec3) -> Vec3 {
    let tracked: Vec<&&TrpEstimate> = members.iter().filter(|e| e.velocity.is_some()).collect();
    if !tracked.is_empty() {
        let w: f64 = tracked.iter().map(|e| e.weight).sum();
        return tracked.iter().fold(Vec3::ZERO, |acc, e| {
            acc + e.velocity.expect("filtered") * (e.weight / w)
        });
    }
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for e in members {
        if let (Some(c), Some(u)) = (
            e.closing_speed_m_per_s,
            (position - e.trp_position).normalized(),
        ) {
            rows.push(u);
            rhs.push(-c / 2.0);
        }
    }
    min_norm_solve(&rows, &rhs)
}

/// Clusters estimates of all TRPs (single linkage within `gate_m`) and
/// fuses each cluster into one object.
pub fn fuse_multimonostatic(estimates: &[TrpEstimate], gate_m: f64) -> Vec<FusedObject> {
    let n = estimates.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if estimates[i].position.distance(estimates[j].position) <= gate_m {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut clusters: std::collections::BTreeMap<usize, Vec<&TrpEstimate>> = Default::default();
    for i in 0..n {
        let root = find(&mut parent, i);
        clusters.entry(root).or_default().push(&estimates[i]);
    }
    clusters
        .into_values()
        .enumerate()
        .map(|(k, members)| {
            let w: f64 = members.iter().map(|e| e.weight).sum();
            let position = members
                .iter()
                .fold(Vec3::ZERO, |acc, e| acc + e.position * (e.weight / w));
            let mut trps: Vec<TrpId> = members.iter().map(|e| e.trp_id).collect();
            trps.sort_unstable();
            trps.dedup();
            FusedObject {
                object_id: k as u64,
                position,
                velocity: cluster_velocity(&members, position),
                class: ObjectLabel::Unclassified,
                confidence: fusion_confidence(trps.len()),
                contributing_trps: trps,
            }
        })
        .collect()
}

/// One bistatic detection of one receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BistaticObservation {
    pub rx_trp_id: TrpId,
    pub rx_position: Vec3,
    pub path_length_m: f64,
    pub closing_speed_m_per_s: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultistaticFix {
    pub position: Vec3,
    pub velocity: Vec3,
    pub iterations: usize,
    /// Largest absolute path-length residual at the solution.
    pub max_residual_m: f64,
    /// Objective after the initial point and after every accepted step.
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum Unresolvable {
    #[error("{0} receivers, at least 3 needed")]
    TooFewLegs(usize),
    #[error("no convergence within {0} iterations")]
    NoConvergence(usize),
    #[error("path residual of {residual_mm} mm exceeds the {tolerance_mm} mm tolerance")]
    Residual { residual_mm: u64, tolerance_mm: u64 },
}

fn unit(v: Vec3) -> Vec3 {
    v.normalized().unwrap_or(Vec3::ZERO)
}

/// Rows `∂L_i/∂p = û_tx(p) + û_rx_i(p)` of the path-length Jacobian.
pub fn multistatic_jacobian(p: Vec3, tx: Vec3, rxs: &[Vec3]) -> Vec<Vec3> {
    let u_tx = unit(p - tx);
    rxs.iter().map(|rx| u_tx + unit(p - *rx)).collect()
}

fn residuals(p: Vec3, tx: Vec3, obs: &[BistaticObservation]) -> Vec<f64> {
    obs.iter()
        .map(|o| p.distance(tx) + p.distance(o.rx_position) - o.path_length_m)
        .collect()
}

fn objective(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

fn to_v(v: Vec3) -> Vector3<f64> {
    Vector3::new(v.x, v.y, v.z)
}

/// Solves for the position minimizing `Σ (|p−tx| + |p−rx_i| − L_i)²` with
/// damped Gauss-Newton from the receivers' centroid, then for the velocity
/// from the closing speeds: `closing_i = −v·(û_tx + û_rx_i)`.
///
/// `range_resolution_m` is the path-length bin; a solution whose largest
/// residual exceeds three of them is rejected.
pub fn fuse_multistatic(
    obs: &[BistaticObservation],
    tx: Vec3,
    range_resolution_m: f64,
) -> Result<MultistaticFix, Unresolvable> {
    let centroid = obs.iter().fold(Vec3::ZERO, |a, o| a + o.rx_position) / obs.len().max(1) as f64;
    fuse_multistatic_from(obs, tx, range_resolution_m, centroid)
}

/// [`fuse_multistatic`] started from `start`. Receivers on a line leave a
/// mirror solution; starting on the side of the target picks the right one.
pub fn fuse_multistatic_from(
    obs: &[BistaticObservation],
    tx: Vec3,
    range_resolution_m: f64,
    start: Vec3,
) -> Result<MultistaticFix, Unresolvable> {
    if obs.len() < 3 {
        return Err(Unresolvable::TooFewLegs(obs.len()));
    }
    let rxs: Vec<Vec3> = obs.iter().map(|o| o.rx_position).collect();
    let mut p = start;
    let mut r = residuals(p, tx, obs);
    let mut f = objective(&r);
    let mut trace = vec![f];
    let mut lambda: Option<f64> = None;
    let mut converged = false;
    let mut iterations = 0;
    'outer: while iterations < GN_MAX_ITERATIONS {
        let jac = multistatic_jacobian(p, tx, &rxs);
        let mut h = Matrix3::zeros();
        let mut g = Vector3::zeros();
        for (row, ri) in jac.iter().zip(&r) {
            let row = to_v(*row);
            h += row * row.transpose();
            g += row * *ri;
        }
        let mut lam = *lambda.get_or_insert(1e-3 * (h.trace() / 3.0).max(1e-12));
        loop {
            let damped = h + Matrix3::identity() * lam;
            let Some(inv) = damped.try_inverse() else {
                lam *= 10.0;
                continue;
            };
            let step = -(inv * g);
            let step = Vec3::new(step[0], step[1], step[2]);
            let candidate = p + step;
            let r_new = residuals(candidate, tx, obs);
            let f_new = objective(&r_new);
            if f_new <= f {
                p = candidate;
                r = r_new;
                f = f_new;
                trace.push(f);
                lambda = Some((lam / 10.0).max(1e-12));
                iterations += 1;
                if step.norm() < GN_STEP_TOLERANCE_M {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            if step.norm() < GN_STEP_TOLERANCE_M || lam > 1e12 {
                // No descent left at any damping: a stationary point.
                converged = true;
                break 'outer;
            }
            lam *= 10.0;
        }
    }
    if !converged {
        return Err(Unresolvable::NoConvergence(GN_MAX_ITERATIONS));
    }
    let max_residual = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let tolerance = 3.0 * range_resolution_m;
    if max_residual > tolerance {
        return Err(Unresolvable::Residual {
            residual_mm: (max_residual * 1e3).round() as u64,
            tolerance_mm: (tolerance * 1e3).round() as u64,
        });
    }
    let rows = multistatic_jacobian(p, tx, &rxs);
    let rhs: Vec<f64> = obs.iter().map(|o| -o.closing_speed_m_per_s).collect();
    Ok(MultistaticFix {
        position: p,
        velocity: min_norm_solve(&rows, &rhs),
        iterations,
        max_residual_m: max_residual,
        objective_trace: trace,
    })
}

/// Bistatic detections of one receive leg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RxLeg {
    pub rx_trp_id: TrpId,
    pub rx_position: Vec3,
    pub points: Vec<TargetPoint2D>,
}

/// A detection that could not be placed, reported as range and speed only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnlocalizedDetection {
    pub trp_id: TrpId,
    pub path_length_m: f64,
    pub closing_speed_m_per_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MultistaticResult {
    pub objects: Vec<FusedObject>,
    pub unlocalized: Vec<UnlocalizedDetection>,
}

/// Strongest points considered per leg during association.
const MAX_POINTS_PER_LEG: usize = 6;
/// Upper bound on candidate associations that are solved.
const MAX_HYPOTHESES: usize = 20_000;

/// Associates detections across receive legs and localizes every target
/// seen by at least three of them.
///
/// Each hypothesis picks at most one point per leg (at least three legs);
/// every hypothesis that solves within tolerance is a candidate. Candidates
/// are accepted greedily (more legs first, then smaller residual) as long
/// as none of their points is taken. A candidate within one range bin of
/// an accepted object is the same target seen through other points (for
/// instance Doppler sidelobes at the same delay); its points are absorbed.
///
/// The solver starts from `start` when given, else from the receivers'
/// centroid.
pub fn associate_multistatic(
    legs: &[RxLeg],
    tx: Vec3,
    range_resolution_m: f64,
    start: Option<Vec3>,
) -> MultistaticResult {
    let mut per_leg: Vec<Vec<usize>> = legs
        .iter()
        .map(|l| {
            let mut idx: Vec<usize> = (0..l.points.len()).collect();
            idx.sort_by(|a, b| {
                l.points[*b]
                    .power_db
                    .total_cmp(&l.points[*a].power_db)
                    .then(a.cmp(b))
            });
            idx.truncate(MAX_POINTS_PER_LEG);
            idx
        })
        .collect();
    let count = |pl: &[Vec<usize>]| {
        pl.iter()
            .fold(1usize, |acc, v| acc.saturating_mul(v.len() + 1))
    };
    while count(&per_leg) > MAX_HYPOTHESES {
        let longest = (0..per_leg.len())
            .max_by_key(|i| (per_leg[*i].len(), usize::MAX - i))
            .expect("non-empty");
        per_leg[longest].pop();
    }
    struct Candidate {
        picks: Vec<(usize, usize)>,
        fix: MultistaticFix,
    }
    let mut candidates = Vec::new();
    let mut choice = vec![0usize; legs.len()];
    loop {
        let picks: Vec<(usize, usize)> = choice
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0)
            .map(|(leg, c)| (leg, per_leg[leg][c - 1]))
            .collect();
        if picks.len() >= 3 {
            let obs: Vec<BistaticObservation> = picks
                .iter()
                .map(|&(leg, i)| {
                    let p = &legs[leg].points[i];
                    BistaticObservation {
                        rx_trp_id: legs[leg].rx_trp_id,
                        rx_position: legs[leg].rx_position,
                        path_length_m: p.path_length_m,
                        closing_speed_m_per_s: p.closing_speed_m_per_s,
                        weight: p.complex_amplitude.norm_sqr(),
                    }
                })
                .collect();
            let fix = match start {
                Some(s) => fuse_multistatic_from(&obs, tx, range_resolution_m, s),
                None => fuse_multistatic(&obs, tx, range_resolution_m),
            };
            if let Ok(fix) = fix {
                candidates.push(Candidate { picks, fix });
            }
        }
        // Odometer over the per-leg choices (0 = leg not used).
        let mut k = 0;
        loop {
            if k == legs.len() {
                break;
            }
            choice[k] += 1;
            if choice[k] <= per_leg[k].len() {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
        if k == legs.len() {
            break;
        }
    }
    candidates.sort_by(|a, b| {
        b.picks
            .len()
            .cmp(&a.picks.len())
            .then(a.fix.max_residual_m.total_cmp(&b.fix.max_residual_m))
    });
    let mut used = std::collections::BTreeSet::new();
    let mut result = MultistaticResult::default();
    for c in candidates {
        if c.picks.iter().any(|p| used.contains(p)) {
            continue;
        }
        used.extend(c.picks.iter().copied());
        if result
            .objects
            .iter()
            .any(|o| o.position.distance(c.fix.position) <= range_resolution_m)
        {
            continue;
        }
        let mut trps: Vec<TrpId> = c
            .picks
            .iter()
            .map(|(leg, _)| legs[*leg].rx_trp_id)
            .collect();
        trps.sort_unstable();
        result.objects.push(FusedObject {
            object_id: result.objects.len() as u64,
            position: c.fix.position,
            velocity: c.fix.velocity,
            class: ObjectLabel::Unclassified,
            confidence: fusion_confidence(trps.len()),
            contributing_trps: trps,
        });
    }
    for (li, leg) in legs.iter().enumerate() {
        for (pi, p) in leg.points.iter().enumerate() {
            if !used.contains(&(li, pi)) {
                result.unlocalized.push(UnlocalizedDetection {
                    trp_id: leg.rx_trp_id,
                    path_length_m: p.path_length_m,
                    closing_speed_m_per_s: p.closing_speed_m_per_s,
                });
            }
        }
    }
    result
}
