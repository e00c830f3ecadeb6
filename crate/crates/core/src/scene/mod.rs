//! Ground truth and radio physics.
//!
//! Point targets move at constant velocity. For a given transmitter, receiver
//! and receive beam, [`synthesize_channel`] produces the effective OFDM channel
//! grid the receiver would observe: one delay/Doppler component per target,
//! an optional zero-delay self-interference residual, and seeded complex
//! Gaussian noise.
//!
//! Sign convention: the Doppler shift is `f_D = -path_rate * f_c / c`, so a
//! closing target (path length shrinking) has a positive Doppler shift.

mod vec3;

use std::collections::BTreeSet;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{ComplexGrid, GridMeta};
use crate::SPEED_OF_LIGHT;

pub use vec3::Vec3;

/// Lowest gain a beam ever reports.
pub const BEAM_GAIN_FLOOR: f64 = 1e-120;

/// Gain of a beam at half its beamwidth from the pointing direction (−3 dB).
pub const HALF_WIDTH_GAIN: f64 = 0.501_187_233_627_272_3;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("object {0} coincides with a transmitter or receiver site")]
    DegenerateGeometry(u32),
    #[error("invalid radio parameters: {0}")]
    InvalidParams(String),
    #[error("invalid beam pattern: {0}")]
    InvalidBeam(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

/// OFDM numerology and power levels of one sensing burst.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioParams {
    pub carrier_freq_hz: f64,
    pub subcarrier_spacing_hz: f64,
    /// Subcarriers per burst (N).
    pub num_subcarriers: usize,
    /// Symbols per burst (M).
    pub num_symbols: usize,
    pub tx_power_dbm: f64,
    /// Noise power per grid sample; `None` means noiseless.
    #[serde(default)]
    pub noise_power_dbm: Option<f64>,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            carrier_freq_hz: 3.5e9,
            subcarrier_spacing_hz: 30e3,
            num_subcarriers: 256,
            num_symbols: 64,
            tx_power_dbm: 46.0,
            noise_power_dbm: None,
        }
    }
}

impl RadioParams {
    /// Symbol duration; the cyclic prefix is not modeled, so `T = 1/Δf`.
    pub fn symbol_duration_s(&self) -> f64 {
        1.0 / self.subcarrier_spacing_hz
    }

    pub fn grid_meta(&self) -> GridMeta {
        GridMeta {
            carrier_freq_hz: self.carrier_freq_hz,
            subcarrier_spacing_hz: self.subcarrier_spacing_hz,
            symbol_period_s: self.symbol_duration_s(),
        }
    }

    /// Path-length extent of one delay bin without zero padding: `c / (N·Δf)`.
    pub fn path_length_per_bin(&self) -> f64 {
        SPEED_OF_LIGHT / (self.num_subcarriers as f64 * self.subcarrier_spacing_hz)
    }

    /// Path-rate extent of one Doppler bin without zero padding: `c / (M·T·f_c)`.
    pub fn speed_per_bin(&self) -> f64 {
        SPEED_OF_LIGHT / (self.num_symbols as f64 * self.symbol_duration_s() * self.carrier_freq_hz)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let err = |m: &str| Err(SceneError::InvalidParams(m.to_string()));
        if self.num_subcarriers < 2 || self.num_symbols < 2 {
            return err("need at least 2 subcarriers and 2 symbols");
        }
        if !(self.subcarrier_spacing_hz > 0.0 && self.subcarrier_spacing_hz.is_finite()) {
            return err("subcarrier spacing must be positive");
        }
        if !(self.carrier_freq_hz > 0.0 && self.carrier_freq_hz.is_finite()) {
            return err("carrier frequency must be positive");
        }
        if !self.tx_power_dbm.is_finite() {
            return err("tx power must be finite");
        }
        if let Some(n) = self.noise_power_dbm {
            if !n.is_finite() {
                return err("noise power must be finite or absent");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Building,
    Car,
    Human,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundObject {
    pub id: u32,
    pub position: Vec3,
    #[serde(default)]
    pub velocity: Vec3,
    /// Linear amplitude scale standing in for radar cross-section.
    pub reflection_amplitude: f64,
    pub true_class: ObjectClass,
    #[serde(default)]
    pub is_static: bool,
}

impl GroundObject {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.reflection_amplitude > 0.0 && self.reflection_amplitude.is_finite()) {
            return Err(SceneError::InvalidScene(format!(
                "object {} reflection amplitude must be positive",
                self.id
            )));
        }
        if !self.position.is_finite() || !self.velocity.is_finite() {
            return Err(SceneError::InvalidScene(format!(
                "object {} has non-finite state",
                self.id
            )));
        }
        if self.is_static && self.velocity != Vec3::ZERO {
            return Err(SceneError::InvalidScene(format!(
                "static object {} has non-zero velocity",
                self.id
            )));
        }
        Ok(())
    }
}

/// Gaussian receive beam with one 3 dB beamwidth for both axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamPattern {
    pub pointing_azimuth_rad: f64,
    pub pointing_zenith_rad: f64,
    pub beamwidth_rad: f64,
}

impl BeamPattern {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.beamwidth_rad > 0.0 && self.beamwidth_rad <= std::f64::consts::PI) {
            return Err(SceneError::InvalidBeam(
                "beamwidth must lie in (0, π]".into(),
            ));
        }
        if !(0.0..=std::f64::consts::PI).contains(&self.pointing_zenith_rad) {
            return Err(SceneError::InvalidBeam("zenith must lie in [0, π]".into()));
        }
        if !self.pointing_azimuth_rad.is_finite() {
            return Err(SceneError::InvalidBeam("azimuth must be finite".into()));
        }
        Ok(())
    }

    pub fn direction(&self) -> Vec3 {
        Vec3::from_angles(self.pointing_azimuth_rad, self.pointing_zenith_rad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub objects: Vec<GroundObject>,
    pub time_s: f64,
}

impl SceneState {
    pub fn new(objects: Vec<GroundObject>) -> Result<Self, SceneError> {
        let mut ids = BTreeSet::new();
        for o in &objects {
            o.validate()?;
            if !ids.insert(o.id) {
                return Err(SceneError::InvalidScene(format!(
                    "duplicate object id {}",
                    o.id
                )));
            }
        }
        Ok(Self {
            objects,
            time_s: 0.0,
        })
    }

    pub fn empty() -> Self {
        Self {
            objects: Vec::new(),
            time_s: 0.0,
        }
    }
}

/// Bistatic path length `|obj-tx| + |obj-rx|` and its rate of change.
pub fn bistatic_geometry(
    tx_pos: Vec3,
    rx_pos: Vec3,
    obj: &GroundObject,
) -> Result<(f64, f64), SceneError> {
    let to_tx = obj.position - tx_pos;
    let to_rx = obj.position - rx_pos;
    let (d_tx, d_rx) = (to_tx.norm(), to_rx.norm());
    if d_tx <= 1e-9 || d_rx <= 1e-9 {
        return Err(SceneError::DegenerateGeometry(obj.id));
    }
    let rate = obj.velocity.dot(to_tx / d_tx) + obj.velocity.dot(to_rx / d_rx);
    Ok((d_tx + d_rx, rate))
}

fn gaussian_sigma(beamwidth: f64) -> f64 {
    // exp(-(bw/2)^2 / (2σ^2)) = 10^(-3/10)
    (beamwidth / 2.0) / (0.6 * std::f64::consts::LN_10).sqrt()
}

/// Linear gain of `beam` towards the direction `(direction_az, direction_zen)`.
pub fn beam_gain(beam: &BeamPattern, direction_az: f64, direction_zen: f64) -> f64 {
    let u = Vec3::from_angles(direction_az, direction_zen);
    let p = beam.direction();
    let offset = u.cross(p).norm().atan2(u.dot(p));
    let sigma = gaussian_sigma(beam.beamwidth_rad);
    (-(offset * offset) / (2.0 * sigma * sigma))
        .exp()
        .max(BEAM_GAIN_FLOOR)
}

fn dbm_to_amplitude(dbm: f64) -> f64 {
    10f64.powf(dbm / 20.0)
}

/// Synthesizes the effective channel observed by a receiver at `rx_pos` on `beam`
/// while a transmitter at `tx_pos` illuminates `scene`.
pub fn synthesize_channel(
    scene: &SceneState,
    tx_pos: Vec3,
    rx_pos: Vec3,
    beam: &BeamPattern,
    params: &RadioParams,
    si_residual_db: Option<f64>,
    seed: u64,
) -> Result<ComplexGrid, SceneError> {
    params.validate()?;
    beam.validate()?;
    let (n, m) = (params.num_subcarriers, params.num_symbols);
    let mut grid = ComplexGrid::zeros(n, m, params.grid_meta());
    let tx_amp = dbm_to_amplitude(params.tx_power_dbm);
    let df = params.subcarrier_spacing_hz;
    let t_sym = params.symbol_duration_s();
    let two_pi = std::f64::consts::TAU;

    let mut freq_term = vec![Complex64::new(0.0, 0.0); n];
    let mut time_term = vec![Complex64::new(0.0, 0.0); m];
    for obj in &scene.objects {
        let (path_length, path_rate) = bistatic_geometry(tx_pos, rx_pos, obj)?;
        let d_tx = obj.position.distance(tx_pos);
        let d_rx = obj.position.distance(rx_pos);
        let dir = obj.position - rx_pos;
        let gain = beam_gain(beam, dir.azimuth(), dir.zenith());
        let amp = tx_amp * obj.reflection_amplitude * gain / (d_tx * d_rx);
        let tau = path_length / SPEED_OF_LIGHT;
        let doppler = -path_rate * params.carrier_freq_hz / SPEED_OF_LIGHT;
        for (k, f) in freq_term.iter_mut().enumerate() {
            *f = Complex64::from_polar(amp, -two_pi * k as f64 * df * tau);
        }
        for (l, t) in time_term.iter_mut().enumerate() {
            *t = Complex64::from_polar(1.0, two_pi * l as f64 * t_sym * doppler);
        }
        for (k, f) in freq_term.iter().enumerate() {
            for (l, t) in time_term.iter().enumerate() {
                let v = grid.get(k, l) + f * t;
                grid.set(k, l, v);
            }
        }
    }

    if let Some(residual_db) = si_residual_db {
        let si = Complex64::new(dbm_to_amplitude(params.tx_power_dbm - residual_db), 0.0);
        grid.data_mut().iter_mut().for_each(|z| *z += si);
    }

    if let Some(noise_dbm) = params.noise_power_dbm {
        let sigma = (10f64.powf(noise_dbm / 10.0) / 2.0).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for z in grid.data_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *z += Complex64::new(re * sigma, im * sigma);
        }
    }
    Ok(grid)
}

/// Constant-velocity motion of every non-static object by `dt_s`.
pub fn advance(scene: &SceneState, dt_s: f64) -> SceneState {
    assert!(dt_s >= 0.0, "cannot advance a scene backwards");
    let objects = scene
        .objects
        .iter()
        .map(|o| {
            let mut o = o.clone();
            if !o.is_static {
                o.position += o.velocity * dt_s;
            }
            o
        })
        .collect();
    SceneState {
        objects,
        time_s: scene.time_s + dt_s,
    }
}
