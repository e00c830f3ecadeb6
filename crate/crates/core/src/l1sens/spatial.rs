//! Spatial filtering across receive beams, and monostatic localization.

use std::f64::consts::{PI, TAU};

use super::{L1Error, PeriodogramAxes, TargetPoint2D, TargetPoint4D};
use crate::scene::{BeamPattern, Vec3};

/// Detections from one receive beam.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamDetections {
    pub beam: BeamPattern,
    pub axes: PeriodogramAxes,
    pub targets: Vec<TargetPoint2D>,
}

struct Group {
    /// Strongest contributor so far; its bins anchor the association window.
    best: TargetPoint2D,
    best_weight: f64,
    /// (weight, azimuth, zenith) per contributing beam.
    contributions: Vec<(f64, f64, f64)>,
}

fn wrap_pi(x: f64) -> f64 {
    if x > -PI && x <= PI {
        return x;
    }
    let y = (x + PI).rem_euclid(TAU) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}

/// Associates targets across beams (within one bin in both delay and
/// Doppler) and estimates angles as the power-weighted mean of the
/// contributing beams' pointing directions.
///
/// Weights are absolute `|amplitude|²` so beams with different noise floors
/// remain comparable. Azimuths are averaged as offsets from the first
/// contributor, so sweeps across ±π do not fold.
pub fn multi_beam_filter(per_beam: &[BeamDetections]) -> Result<Vec<TargetPoint4D>, L1Error> {
    let Some(first) = per_beam.first() else {
        return Err(L1Error::InvalidConfig(
            "multi-beam filter needs at least one beam".into(),
        ));
    };
    if per_beam.iter().any(|b| !b.axes.same_scale(&first.axes)) {
        return Err(L1Error::InconsistentAxes);
    }
    let mut groups: Vec<Group> = Vec::new();
    for bd in per_beam {
        let mut used = vec![false; groups.len()];
        for t in &bd.targets {
            let w = t.complex_amplitude.norm_sqr();
            let nearest = groups
                .iter()
                .enumerate()
                .filter(|(gi, g)| {
                    !used[*gi]
                        && (g.best.delay_bin - t.delay_bin).abs() <= 1.0
                        && (g.best.doppler_bin - t.doppler_bin).abs() <= 1.0
                })
                .min_by(|(_, a), (_, b)| {
                    let da =
                        (a.best.delay_bin - t.delay_bin).hypot(a.best.doppler_bin - t.doppler_bin);
                    let db =
                        (b.best.delay_bin - t.delay_bin).hypot(b.best.doppler_bin - t.doppler_bin);
                    da.total_cmp(&db)
                })
                .map(|(gi, _)| gi);
            let contribution = (w, bd.beam.pointing_azimuth_rad, bd.beam.pointing_zenith_rad);
            match nearest {
                Some(gi) => {
                    used[gi] = true;
                    let g = &mut groups[gi];
                    g.contributions.push(contribution);
                    if w > g.best_weight {
                        g.best = *t;
                        g.best_weight = w;
                    }
                }
                None => {
                    used.push(true);
                    groups.push(Group {
                        best: *t,
                        best_weight: w,
                        contributions: vec![contribution],
                    });
                }
            }
        }
    }

    let mut out: Vec<TargetPoint4D> = groups
        .iter()
        .map(|g| {
            let (_, az0, _) = g.contributions[0];
            let total: f64 = g.contributions.iter().map(|c| c.0).sum();
            let (az, zen) = if total > 0.0 {
                let d_az: f64 = g
                    .contributions
                    .iter()
                    .map(|c| c.0 * wrap_pi(c.1 - az0))
                    .sum::<f64>()
                    / total;
                let zen: f64 = g.contributions.iter().map(|c| c.0 * c.2).sum::<f64>() / total;
                (wrap_pi(az0 + d_az), zen)
            } else {
                let k = g.contributions.len() as f64;
                let d_az: f64 = g
                    .contributions
                    .iter()
                    .map(|c| wrap_pi(c.1 - az0))
                    .sum::<f64>()
                    / k;
                (
                    wrap_pi(az0 + d_az),
                    g.contributions.iter().map(|c| c.2).sum::<f64>() / k,
                )
            };
            TargetPoint4D::from_2d(&g.best, az, zen.clamp(0.0, PI))
        })
        .collect();
    out.sort_by(|a, b| b.power_db.total_cmp(&a.power_db));
    Ok(out)
}

/// Position of a monostatic target: half the path length along the estimated direction.
pub fn localize_monostatic(t: &TargetPoint4D, rx_pos: Vec3) -> Vec3 {
    rx_pos + Vec3::from_angles(t.azimuth_rad, t.zenith_rad) * (0.5 * t.path_length_m)
}
