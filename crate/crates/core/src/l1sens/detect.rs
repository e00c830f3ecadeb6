//! Noise-floor estimation and local-maximum target extraction.

use serde::{Deserialize, Serialize};

use super::{DetectConfig, Periodogram, TargetPoint2D};

/// Median of `|C|²` over all bins, in dB. Returns `-∞` when the median is zero.
pub fn estimate_noise_floor(p: &Periodogram) -> f64 {
    let mut powers: Vec<f64> = p.data().iter().map(|z| z.norm_sqr()).collect();
    if powers.is_empty() {
        return f64::NEG_INFINITY;
    }
    let mid = powers.len() / 2;
    let median = if powers.len() % 2 == 1 {
        *powers.select_nth_unstable_by(mid, f64::total_cmp).1
    } else {
        let (lower, upper, _) = powers.select_nth_unstable_by(mid, f64::total_cmp);
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (below + *upper)
    };
    to_db(median)
}

fn to_db(power: f64) -> f64 {
    if power > 0.0 {
        10.0 * power.log10()
    } else {
        f64::NEG_INFINITY
    }
}

/// Detection output plus the floors used to produce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detections {
    pub targets: Vec<TargetPoint2D>,
    /// Median floor, dB (may be `-∞`).
    pub noise_floor_db: f64,
    /// Floor the threshold was applied to: the median, raised if needed to
    /// the peak minus the configured dynamic range. The peak is the
    /// pre-clutter-removal reference when the periodogram carries one.
    pub effective_floor_db: f64,
}

/// Finds strict local maxima above `floor + threshold` and refines them.
pub fn detect_targets(p: &Periodogram, cfg: &DetectConfig) -> Detections {
    let n_bins = p.delay_bins();
    let m_bins = p.doppler_bins();
    let noise_floor_db = estimate_noise_floor(p);
    let peak_db = p.peak_db();
    let reference_db = p.reference_peak_db().map_or(peak_db, |r| r.max(peak_db));
    let effective_floor_db = noise_floor_db.max(reference_db - cfg.dynamic_range_db);
    let threshold_db = effective_floor_db + cfg.threshold_db_above_noise;

    let half = (cfg.neighborhood.max(3) / 2) as isize;
    let mut targets = Vec::new();
    if peak_db == f64::NEG_INFINITY {
        return Detections {
            targets,
            noise_floor_db,
            effective_floor_db,
        };
    }
    let threshold_lin = 10f64.powf(threshold_db / 10.0);
    for n in 0..n_bins {
        for i in 0..m_bins {
            let pw = p.power(n, i);
            if !(pw > threshold_lin) || !is_strict_local_max(p, n, i, half) {
                continue;
            }
            let dn = parabolic_offset(p, n, i, true);
            let di = parabolic_offset(p, n, i, false);
            let delay_bin = n as f64 + dn;
            let doppler_bin = i as f64 - p.axes().doppler_offset() as f64 + di;
            targets.push(TargetPoint2D {
                path_length_m: delay_bin.max(0.0) * p.axes().path_length_per_bin,
                closing_speed_m_per_s: doppler_bin * p.axes().speed_per_bin,
                power_db: to_db(pw) - effective_floor_db,
                complex_amplitude: p.at(n, i),
                delay_bin: delay_bin.max(0.0),
                doppler_bin,
            });
        }
    }
    // Stable sort: equal powers keep row-major scan order.
    targets.sort_by(|a, b| b.power_db.total_cmp(&a.power_db));
    targets.truncate(cfg.max_targets);
    Detections {
        targets,
        noise_floor_db,
        effective_floor_db,
    }
}

fn is_strict_local_max(p: &Periodogram, n: usize, i: usize, half: isize) -> bool {
    let center = p.power(n, i);
    let (rows, cols) = (p.delay_bins() as isize, p.doppler_bins() as isize);
    for dn in -half..=half {
        for di in -half..=half {
            if dn == 0 && di == 0 {
                continue;
            }
            let (nn, ii) = (n as isize + dn, i as isize + di);
            if nn < 0 || ii < 0 || nn >= rows || ii >= cols {
                continue;
            }
            if p.power(nn as usize, ii as usize) >= center {
                return false;
            }
        }
    }
    true
}

/// Vertex offset of the parabola through `|C|` at the bin and its two
/// neighbors along one axis, clamped to `[-0.5, 0.5]`.
fn parabolic_offset(p: &Periodogram, n: usize, i: usize, delay_axis: bool) -> f64 {
    let (idx, len) = if delay_axis {
        (n, p.delay_bins())
    } else {
        (i, p.doppler_bins())
    };
    if idx == 0 || idx + 1 >= len {
        return 0.0;
    }
    let mag = |j: usize| {
        if delay_axis {
            p.at(j, i).norm()
        } else {
            p.at(n, j).norm()
        }
    };
    let (a, b, c) = (mag(idx - 1), mag(idx), mag(idx + 1));
    let denom = a - 2.0 * b + c;
    if denom >= 0.0 || !denom.is_finite() {
        return 0.0;
    }
    (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
}
