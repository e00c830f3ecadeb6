//! Channel-domain stages: channel calculation, clutter removal, crop/decimate.

use num_complex::Complex64;

use super::{Crop, Decimation, L1Error};
use crate::grid::{ComplexGrid, GridMeta};

/// Transmit-reference magnitude below which an element is treated as unallocated.
pub const MIN_REFERENCE_MAGNITUDE: f64 = 1e-12;

/// Divides the received grid by the transmitted one, element by element.
///
/// Elements that are unallocated in either grid, or whose reference is weaker
/// than [`MIN_REFERENCE_MAGNITUDE`], are masked out of the result.
pub fn channel_calculation(
    rx_grid: &ComplexGrid,
    tx_grid: &ComplexGrid,
) -> Result<ComplexGrid, L1Error> {
    if rx_grid.shape() != tx_grid.shape() {
        return Err(L1Error::ShapeMismatch {
            expected: rx_grid.shape(),
            found: tx_grid.shape(),
        });
    }
    let (n, m) = rx_grid.shape();
    let mut h = ComplexGrid::zeros(n, m, *rx_grid.meta());
    for k in 0..n {
        for l in 0..m {
            let x = tx_grid.get(k, l);
            if !rx_grid.is_allocated(k, l)
                || !tx_grid.is_allocated(k, l)
                || x.norm() < MIN_REFERENCE_MAGNITUDE
            {
                h.mask_out(k, l);
            } else {
                h.set(k, l, rx_grid.get(k, l) / x);
            }
        }
    }
    Ok(h)
}

/// Removes the zero-Doppler component of every subcarrier by subtracting its
/// mean over (allocated) symbols.
pub fn clutter_removal(h: &ComplexGrid) -> ComplexGrid {
    let (n, m) = h.shape();
    let mut out = h.clone();
    for k in 0..n {
        let mut sum = Complex64::new(0.0, 0.0);
        let mut count = 0usize;
        for l in 0..m {
            if h.is_allocated(k, l) {
                sum += h.get(k, l);
                count += 1;
            }
        }
        if count == 0 {
            continue;
        }
        let mean = sum / count as f64;
        for l in 0..m {
            if h.is_allocated(k, l) {
                out.set(k, l, h.get(k, l) - mean);
            }
        }
    }
    out
}

/// Keeps the first `crop` subcarriers/symbols, then every `decimate`-th element.
///
/// Cropping shortens the kept bandwidth and observation time (coarser
/// resolution); decimation widens the element spacing (smaller unambiguous
/// range), and the grid metadata is updated accordingly.
pub fn crop_decimate(
    h: &ComplexGrid,
    crop: Option<Crop>,
    decimate: Decimation,
) -> Result<ComplexGrid, L1Error> {
    let (n, m) = h.shape();
    let crop = crop.unwrap_or(Crop {
        freq_keep: n,
        time_keep: m,
    });
    if crop.freq_keep > n || crop.time_keep > m {
        return Err(L1Error::InvalidConfig(format!(
            "crop ({}, {}) exceeds grid ({n}, {m})",
            crop.freq_keep, crop.time_keep
        )));
    }
    if decimate.freq_step == 0 || decimate.time_step == 0 {
        return Err(L1Error::InvalidConfig(
            "decimation steps must be at least 1".into(),
        ));
    }
    let rows: Vec<usize> = (0..crop.freq_keep).step_by(decimate.freq_step).collect();
    let cols: Vec<usize> = (0..crop.time_keep).step_by(decimate.time_step).collect();
    if rows.len() < 2 || cols.len() < 2 {
        return Err(L1Error::InvalidConfig(format!(
            "crop/decimate leaves a {}x{} grid; need at least 2x2",
            rows.len(),
            cols.len()
        )));
    }
    let meta = h.meta();
    let new_meta = GridMeta {
        carrier_freq_hz: meta.carrier_freq_hz,
        subcarrier_spacing_hz: meta.subcarrier_spacing_hz * decimate.freq_step as f64,
        symbol_period_s: meta.symbol_period_s * decimate.time_step as f64,
    };
    let mut out = ComplexGrid::zeros(rows.len(), cols.len(), new_meta);
    let mut allocation = Vec::with_capacity(rows.len() * cols.len());
    for (i, &k) in rows.iter().enumerate() {
        for (j, &l) in cols.iter().enumerate() {
            out.set(i, j, h.get(k, l));
            allocation.push(h.is_allocated(k, l));
        }
    }
    out.set_allocation(allocation);
    Ok(out)
}
