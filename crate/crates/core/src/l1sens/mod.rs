//! The L1 sensing chain: effective channel → periodogram → target points →
//! tracked objects, truncated at a configurable processing depth.

mod channel;
mod detect;
mod periodogram;
mod pipeline;
mod spatial;
mod tracking;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use channel::{channel_calculation, clutter_removal, crop_decimate, MIN_REFERENCE_MAGNITUDE};
pub use detect::{detect_targets, estimate_noise_floor, Detections};
pub use periodogram::{periodogram, Periodogram, PeriodogramAxes};
pub use pipeline::{
    run_pipeline, BeamBurst, PipelineGeometry, PipelineOutput, SensingMeasurement, TxReference,
};
pub use spatial::{localize_monostatic, multi_beam_filter, BeamDetections};
pub use tracking::{
    direction_of_travel, multi_burst_filter, new_track, object_detect, Association,
    CandidateObject, LocalizedPoint, ObjectDetection, TrackState, Tracker,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum L1Error {
    #[error("grid shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid processing config: {0}")]
    InvalidConfig(String),
    #[error("bursts do not share periodogram axes")]
    InconsistentAxes,
    #[error("measurement time {t_s} precedes last update {last_s}")]
    NonMonotoneTime { last_s: f64, t_s: f64 },
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<L1Error>,
    },
}

impl L1Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> L1Error {
        L1Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

/// How far the chain runs before reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProcessingDepth {
    #[serde(rename = "ChannelIQ")]
    ChannelIq,
    PeriodogramOut,
    Targets2D,
    Targets4D,
    Objects,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crop {
    pub freq_keep: usize,
    pub time_keep: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decimation {
    pub freq_step: usize,
    pub time_step: usize,
}

impl Default for Decimation {
    fn default() -> Self {
        Self {
            freq_step: 1,
            time_step: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroPad {
    pub delay_bins: usize,
    pub doppler_bins: usize,
}

/// Taper applied along both axes before the periodogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Rectangular,
    /// 4-term Blackman-Harris; sidelobes near -92 dB.
    BlackmanHarris,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    pub threshold_db_above_noise: f64,
    /// Side length of the square local-maximum neighborhood (odd).
    pub neighborhood: usize,
    pub max_targets: usize,
    /// The effective floor is never placed more than this far below the
    /// strongest bin, so noiseless grids do not report numerical leakage.
    pub dynamic_range_db: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            threshold_db_above_noise: 12.0,
            neighborhood: 3,
            max_targets: 64,
            dynamic_range_db: 80.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackConfig {
    /// Association gate around a predicted track position, meters.
    pub gate_m: f64,
    /// Continuous white-acceleration spectral density, m²/s³.
    pub process_noise: f64,
    /// Position measurement variance per axis, m².
    pub measurement_noise: f64,
    /// Tracks not updated for this long are dropped.
    pub max_coast_s: f64,
    /// Velocity variance per axis given to a new track, m²/s².
    pub initial_velocity_variance: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            gate_m: 25.0,
            process_noise: 4.0,
            measurement_noise: 25.0,
            max_coast_s: 2.0,
            initial_velocity_variance: 400.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProcessingConfig {
    pub depth: ProcessingDepth,
    pub clutter_removal: bool,
    pub crop: Option<Crop>,
    pub decimate: Decimation,
    pub zero_pad: Option<ZeroPad>,
    pub window: Window,
    pub detect: DetectConfig,
    /// Single-linkage grouping distance, in raw path-length bins.
    pub group_epsilon_bins: f64,
    pub track: TrackConfig,
}

impl Default for ProcessingConfig {
    fn default() -> Self {
        Self {
            depth: ProcessingDepth::Targets2D,
            clutter_removal: true,
            crop: None,
            decimate: Decimation::default(),
            zero_pad: None,
            window: Window::Rectangular,
            detect: DetectConfig::default(),
            group_epsilon_bins: 1.5,
            track: TrackConfig::default(),
        }
    }
}

impl ProcessingConfig {
    /// Grid size after crop and decimation for an `n × m` input.
    pub fn kept_shape(&self, n: usize, m: usize) -> (usize, usize) {
        let crop = self.crop.unwrap_or(Crop {
            freq_keep: n,
            time_keep: m,
        });
        let rows = crop.freq_keep.div_ceil(self.decimate.freq_step.max(1));
        let cols = crop.time_keep.div_ceil(self.decimate.time_step.max(1));
        (rows, cols)
    }

    /// Transform sizes for an `n × m` input.
    pub fn transform_shape(&self, n: usize, m: usize) -> (usize, usize) {
        let kept = self.kept_shape(n, m);
        match self.zero_pad {
            Some(z) => (z.delay_bins, z.doppler_bins),
            None => kept,
        }
    }

    /// Checks the config against an `n × m` burst.
    pub fn validate(&self, n: usize, m: usize) -> Result<(), L1Error> {
        if let Some(c) = self.crop {
            if c.freq_keep > n || c.time_keep > m {
                return Err(L1Error::InvalidConfig(format!(
                    "crop ({}, {}) exceeds burst ({n}, {m})",
                    c.freq_keep, c.time_keep
                )));
            }
        }
        if self.decimate.freq_step == 0 || self.decimate.time_step == 0 {
            return Err(L1Error::InvalidConfig(
                "decimation steps must be at least 1".into(),
            ));
        }
        let (kn, km) = self.kept_shape(n, m);
        if kn < 2 || km < 2 {
            return Err(L1Error::InvalidConfig(format!(
                "processed grid {kn}x{km} is below 2x2"
            )));
        }
        if let Some(z) = self.zero_pad {
            if z.delay_bins < kn || z.doppler_bins < km {
                return Err(L1Error::InvalidConfig(format!(
                    "zero padding {}x{} smaller than processed grid {kn}x{km}",
                    z.delay_bins, z.doppler_bins
                )));
            }
        }
        let d = &self.detect;
        if !(d.threshold_db_above_noise > 0.0) || !d.threshold_db_above_noise.is_finite() {
            return Err(L1Error::InvalidConfig(
                "detection threshold must be positive".into(),
            ));
        }
        if d.neighborhood < 3 || d.neighborhood % 2 == 0 {
            return Err(L1Error::InvalidConfig(
                "neighborhood must be odd and at least 3".into(),
            ));
        }
        if !(d.dynamic_range_db > 0.0) {
            return Err(L1Error::InvalidConfig(
                "dynamic range must be positive".into(),
            ));
        }
        if !(self.group_epsilon_bins >= 0.0) || !self.group_epsilon_bins.is_finite() {
            return Err(L1Error::InvalidConfig(
                "group epsilon must be finite and non-negative".into(),
            ));
        }
        let t = &self.track;
        let positive = [
            t.gate_m,
            t.measurement_noise,
            t.max_coast_s,
            t.initial_velocity_variance,
        ];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || !(t.process_noise >= 0.0) {
            return Err(L1Error::InvalidConfig(
                "tracking parameters must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A detected local maximum of the periodogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetPoint2D {
    pub path_length_m: f64,
    pub closing_speed_m_per_s: f64,
    /// Power above the estimated noise floor.
    pub power_db: f64,
    /// Periodogram value at the peak bin, `[re, im]` on the wire.
    #[serde(with = "complex_pair")]
    pub complex_amplitude: Complex64,
    /// Refined (fractional) delay bin.
    pub delay_bin: f64,
    /// Refined (fractional) signed Doppler bin.
    pub doppler_bin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetPoint4D {
    pub path_length_m: f64,
    pub closing_speed_m_per_s: f64,
    pub power_db: f64,
    #[serde(with = "complex_pair")]
    pub complex_amplitude: Complex64,
    pub delay_bin: f64,
    pub doppler_bin: f64,
    pub azimuth_rad: f64,
    pub zenith_rad: f64,
}

impl TargetPoint4D {
    pub fn from_2d(p: &TargetPoint2D, azimuth_rad: f64, zenith_rad: f64) -> Self {
        Self {
            path_length_m: p.path_length_m,
            closing_speed_m_per_s: p.closing_speed_m_per_s,
            power_db: p.power_db,
            complex_amplitude: p.complex_amplitude,
            delay_bin: p.delay_bin,
            doppler_bin: p.doppler_bin,
            azimuth_rad,
            zenith_rad,
        }
    }

    pub fn to_2d(&self) -> TargetPoint2D {
        TargetPoint2D {
            path_length_m: self.path_length_m,
            closing_speed_m_per_s: self.closing_speed_m_per_s,
            power_db: self.power_db,
            complex_amplitude: self.complex_amplitude,
            delay_bin: self.delay_bin,
            doppler_bin: self.doppler_bin,
        }
    }
}

pub(crate) mod complex_pair {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(z: &Complex64, s: S) -> Result<S::Ok, S::Error> {
        [z.re, z.im].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Complex64, D::Error> {
        let [re, im] = <[f64; 2]>::deserialize(d)?;
        Ok(Complex64::new(re, im))
    }
}
