//! Inputs shared by the benchmarks in `benches/`.

use std::f64::consts::TAU;

use isac_core::{ComplexGrid, RadioParams};
use num_complex::Complex64;

/// A point scatterer placed directly in periodogram bins.
#[derive(Debug, Clone, Copy)]
pub struct BinTarget {
    pub delay_bin: f64,
    /// Signed; positive bins are closing.
    pub doppler_bin: f64,
    pub amplitude: f64,
}

/// Effective channel at the default numerology holding `targets`, with a
/// static reflector at delay bin 3 so clutter removal has work to do.
pub fn desk_channel(targets: &[BinTarget]) -> ComplexGrid {
    let radio = RadioParams::default();
    let (n, m) = (radio.num_subcarriers, radio.num_symbols);
    let static_reflector = BinTarget {
        delay_bin: 3.0,
        doppler_bin: 0.0,
        amplitude: 10.0,
    };
    ComplexGrid::from_fn(n, m, radio.grid_meta(), |k, l| {
        std::iter::once(&static_reflector)
            .chain(targets)
            .map(|t| {
                let phase = -TAU * k as f64 * t.delay_bin / n as f64
                    + TAU * l as f64 * t.doppler_bin / m as f64;
                Complex64::from_polar(t.amplitude, phase)
            })
            .sum()
    })
}

/// Three movers spread over the delay-Doppler plane.
pub fn three_movers() -> Vec<BinTarget> {
    vec![
        BinTarget {
            delay_bin: 12.0,
            doppler_bin: 4.0,
            amplitude: 1.0,
        },
        BinTarget {
            delay_bin: 40.5,
            doppler_bin: -7.25,
            amplitude: 0.5,
        },
        BinTarget {
            delay_bin: 100.0,
            doppler_bin: 15.0,
            amplitude: 0.25,
        },
    ]
}
