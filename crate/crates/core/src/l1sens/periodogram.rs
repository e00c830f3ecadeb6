//! Range/Doppler periodogram.
//!
//! `C[n, m] = 1/sqrt(N·M) · Σ_k Σ_l w_k w_l H[k, l] · e^{+j2πkn/N'} · e^{-j2πlm/M'}`
//! where `N×M` is the input grid, `N'×M'` the (zero-padded) transform size and
//! `w` an optional window (all ones by default). Delay bins `n` run `0..N'`;
//! Doppler bins are stored centered, `m = -⌊M'/2⌋ .. M' - ⌊M'/2⌋ - 1`.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{L1Error, Window};
use crate::grid::ComplexGrid;
use crate::SPEED_OF_LIGHT;

/// Physical scale of the periodogram axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodogramAxes {
    /// Transform size along delay (N').
    pub delay_bins: usize,
    /// Transform size along Doppler (M').
    pub doppler_bins: usize,
    /// `c / (N'·Δf)`.
    pub path_length_per_bin: f64,
    /// `c / (M'·T·f_c)`; positive bins are closing.
    pub speed_per_bin: f64,
}

impl PeriodogramAxes {
    pub fn doppler_offset(&self) -> usize {
        self.doppler_bins / 2
    }

    /// Lowest signed Doppler bin.
    pub fn min_doppler_bin(&self) -> i64 {
        -(self.doppler_offset() as i64)
    }

    pub fn same_scale(&self, other: &PeriodogramAxes) -> bool {
        self.delay_bins == other.delay_bins
            && self.doppler_bins == other.doppler_bins
            && rel_eq(self.path_length_per_bin, other.path_length_per_bin)
            && rel_eq(self.speed_per_bin, other.speed_per_bin)
    }
}

fn rel_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Periodogram {
    axes: PeriodogramAxes,
    /// Row-major `[n][i]` with `i = m + ⌊M'/2⌋`.
    data: Vec<Complex64>,
    /// Strongest bin before clutter removal, dB. Detection measures its
    /// dynamic range from here when set.
    reference_peak_db: Option<f64>,
}

impl Periodogram {
    pub fn axes(&self) -> &PeriodogramAxes {
        &self.axes
    }

    pub fn delay_bins(&self) -> usize {
        self.axes.delay_bins
    }

    pub fn doppler_bins(&self) -> usize {
        self.axes.doppler_bins
    }

    /// Value at delay bin `n` and column index `i` (centered order).
    #[inline]
    pub fn at(&self, n: usize, i: usize) -> Complex64 {
        self.data[n * self.axes.doppler_bins + i]
    }

    /// Value at delay bin `n` and signed Doppler bin `m`.
    pub fn get(&self, n: usize, m: i64) -> Complex64 {
        let i = m + self.axes.doppler_offset() as i64;
        self.at(n, i as usize)
    }

    pub fn power(&self, n: usize, i: usize) -> f64 {
        self.at(n, i).norm_sqr()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn reference_peak_db(&self) -> Option<f64> {
        self.reference_peak_db
    }

    pub fn set_reference_peak_db(&mut self, db: Option<f64>) {
        self.reference_peak_db = db.filter(|v| v.is_finite());
    }

    /// Strongest bin, dB; `-∞` for an all-zero periodogram.
    pub fn peak_db(&self) -> f64 {
        let peak = self.data.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
        if peak > 0.0 {
            10.0 * peak.log10()
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn total_energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

pub(crate) fn window_weights(window: Window, len: usize) -> Vec<f64> {
    match window {
        Window::Rectangular => vec![1.0; len],
        Window::BlackmanHarris => {
            let (a0, a1, a2, a3) = (0.35875, 0.48829, 0.14128, 0.01168);
            let denom = len as f64;
            (0..len)
                .map(|i| {
                    // periodic form, centered on the sample grid
                    let x = std::f64::consts::TAU * (i as f64 + 0.5) / denom;
                    a0 - a1 * x.cos() + a2 * (2.0 * x).cos() - a3 * (3.0 * x).cos()
                })
                .collect()
        }
    }
}

/// Computes the periodogram of `h` with transform size `n_fft × m_fft`.
pub fn periodogram(
    h: &ComplexGrid,
    n_fft: usize,
    m_fft: usize,
    window: Window,
) -> Result<Periodogram, L1Error> {
    let (n, m) = h.shape();
    if n_fft < n || m_fft < m {
        return Err(L1Error::InvalidConfig(format!(
            "transform size {n_fft}x{m_fft} smaller than grid {n}x{m}"
        )));
    }
    if n_fft < 2 || m_fft < 2 {
        return Err(L1Error::InvalidConfig(
            "transform sizes must be at least 2".into(),
        ));
    }
    let meta = h.meta();
    let axes = PeriodogramAxes {
        delay_bins: n_fft,
        doppler_bins: m_fft,
        path_length_per_bin: SPEED_OF_LIGHT / (n_fft as f64 * meta.subcarrier_spacing_hz),
        speed_per_bin: SPEED_OF_LIGHT
            / (m_fft as f64 * meta.symbol_period_s * meta.carrier_freq_hz),
    };

    let wk = window_weights(window, n);
    let wl = window_weights(window, m);
    let mut planner = FftPlanner::<f64>::new();
    let ifft_delay = planner.plan_fft_inverse(n_fft);
    let fft_doppler = planner.plan_fft_forward(m_fft);

    // Delay transform per symbol column; result laid out [l][n].
    let mut delay_major = vec![Complex64::new(0.0, 0.0); m * n_fft];
    let mut column = vec![Complex64::new(0.0, 0.0); n_fft];
    for l in 0..m {
        column
            .iter_mut()
            .for_each(|z| *z = Complex64::new(0.0, 0.0));
        for k in 0..n {
            column[k] = h.get(k, l) * (wk[k] * wl[l]);
        }
        ifft_delay.process(&mut column);
        delay_major[l * n_fft..(l + 1) * n_fft].copy_from_slice(&column);
    }

    let scale = 1.0 / ((n * m) as f64).sqrt();
    let offset = m_fft / 2;
    let mut data = vec![Complex64::new(0.0, 0.0); n_fft * m_fft];
    let mut row = vec![Complex64::new(0.0, 0.0); m_fft];
    for nd in 0..n_fft {
        row.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for l in 0..m {
            row[l] = delay_major[l * n_fft + nd];
        }
        fft_doppler.process(&mut row);
        for (raw, value) in row.iter().enumerate() {
            // raw index r holds m = r (r < M' - offset) or r - M' otherwise
            let i = (raw + offset) % m_fft;
            data[nd * m_fft + i] = value * scale;
        }
    }
    Ok(Periodogram {
        axes,
        data,
        reference_peak_db: None,
    })
}

#[derive(Serialize, Deserialize)]
struct PeriodogramRepr {
    axes: PeriodogramAxes,
    /// `[n][i]` nested arrays of `[re, im]`, Doppler in centered order.
    data: Vec<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference_peak_db: Option<f64>,
}

impl Serialize for Periodogram {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let m = self.axes.doppler_bins;
        let data = self
            .data
            .chunks(m)
            .map(|row| row.iter().map(|z| [z.re, z.im]).collect())
            .collect();
        PeriodogramRepr {
            axes: self.axes,
            data,
            reference_peak_db: self.reference_peak_db,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Periodogram {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let repr = PeriodogramRepr::deserialize(d)?;
        let a = repr.axes;
        if a.delay_bins < 2
            || a.doppler_bins < 2
            || !(a.path_length_per_bin > 0.0)
            || !(a.speed_per_bin > 0.0)
        {
            return Err(D::Error::custom("invalid periodogram axes"));
        }
        if repr.data.len() != a.delay_bins || repr.data.iter().any(|r| r.len() != a.doppler_bins) {
            return Err(D::Error::custom("periodogram data does not match its axes"));
        }
        let data = repr
            .data
            .iter()
            .flat_map(|r| r.iter().map(|p| Complex64::new(p[0], p[1])))
            .collect();
        if repr.reference_peak_db.is_some_and(|v| !v.is_finite()) {
            return Err(D::Error::custom("reference peak must be finite"));
        }
        Ok(Periodogram {
            axes: a,
            data,
            reference_peak_db: repr.reference_peak_db,
        })
    }
}
