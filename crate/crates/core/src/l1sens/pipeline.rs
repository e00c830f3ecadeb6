//! Composition of the chain stages, truncated at the configured depth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    channel_calculation, clutter_removal, crop_decimate, detect_targets, localize_monostatic,
    multi_beam_filter, periodogram, BeamDetections, L1Error, LocalizedPoint, Periodogram,
    ProcessingConfig, ProcessingDepth, TargetPoint2D, TargetPoint4D, TrackState, Tracker,
};
use crate::grid::ComplexGrid;
use crate::scene::{BeamPattern, Vec3};

/// TX and RX closer than this are treated as one site for localization.
pub const MONOSTATIC_TOLERANCE_M: f64 = 1.0;

/// One received burst and the beam it was captured with.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamBurst {
    pub beam: BeamPattern,
    pub rx: ComplexGrid,
}

/// What the received grids are divided by.
#[derive(Debug, Clone, PartialEq)]
pub enum TxReference {
    /// The RU already delivers channel estimates; division is skipped.
    Unit,
    Grid(ComplexGrid),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineGeometry {
    pub tx_pos: Vec3,
    pub rx_pos: Vec3,
}

impl PipelineGeometry {
    pub fn is_monostatic(&self) -> bool {
        self.tx_pos.distance(self.rx_pos) <= MONOSTATIC_TOLERANCE_M
    }
}

/// A measurement payload; the variant always matches the configured depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data")]
pub enum SensingMeasurement {
    /// Effective channel, one grid per beam.
    #[serde(rename = "ChannelIQ")]
    ChannelIq(Vec<ComplexGrid>),
    /// One periodogram per beam.
    PeriodogramOut(Vec<Periodogram>),
    Targets2D(Vec<TargetPoint2D>),
    Targets4D(Vec<TargetPoint4D>),
    Objects(Vec<TrackState>),
}

impl SensingMeasurement {
    pub fn depth(&self) -> ProcessingDepth {
        match self {
            SensingMeasurement::ChannelIq(_) => ProcessingDepth::ChannelIq,
            SensingMeasurement::PeriodogramOut(_) => ProcessingDepth::PeriodogramOut,
            SensingMeasurement::Targets2D(_) => ProcessingDepth::Targets2D,
            SensingMeasurement::Targets4D(_) => ProcessingDepth::Targets4D,
            SensingMeasurement::Objects(_) => ProcessingDepth::Objects,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub measurement: SensingMeasurement,
    /// Per-beam periodograms, when the chain got that far.
    pub periodograms: Vec<Periodogram>,
    /// Per-beam median noise floors in dB, when detection ran.
    pub noise_floors_db: Vec<f64>,
}

struct BeamResult {
    channel: Option<ComplexGrid>,
    periodogram: Option<Periodogram>,
    detections: Option<BeamDetections>,
    noise_floor_db: Option<f64>,
}

fn process_beam(
    burst: &BeamBurst,
    tx: &TxReference,
    cfg: &ProcessingConfig,
) -> Result<BeamResult, L1Error> {
    let h = match tx {
        TxReference::Unit => burst.rx.clone(),
        TxReference::Grid(x) => {
            channel_calculation(&burst.rx, x).map_err(|e| e.in_stage("channel_calculation"))?
        }
    };
    if cfg.depth == ProcessingDepth::ChannelIq {
        return Ok(BeamResult {
            channel: Some(h),
            periodogram: None,
            detections: None,
            noise_floor_db: None,
        });
    }
    let transform = |g: &ComplexGrid| -> Result<Periodogram, L1Error> {
        let g =
            crop_decimate(g, cfg.crop, cfg.decimate).map_err(|e| e.in_stage("crop_decimate"))?;
        let (nf, mf) = match cfg.zero_pad {
            Some(z) => (z.delay_bins, z.doppler_bins),
            None => g.shape(),
        };
        periodogram(&g, nf, mf, cfg.window).map_err(|e| e.in_stage("periodogram"))
    };
    let p = if cfg.clutter_removal {
        // The receiver's dynamic range is set by what arrived, static
        // returns included, not by what is left after subtracting them.
        let reference = transform(&h)?.peak_db();
        let mut p = transform(&clutter_removal(&h))?;
        p.set_reference_peak_db(Some(reference));
        p
    } else {
        transform(&h)?
    };
    if cfg.depth == ProcessingDepth::PeriodogramOut {
        return Ok(BeamResult {
            channel: None,
            periodogram: Some(p),
            detections: None,
            noise_floor_db: None,
        });
    }
    let d = detect_targets(&p, &cfg.detect);
    Ok(BeamResult {
        channel: None,
        detections: Some(BeamDetections {
            beam: burst.beam,
            axes: *p.axes(),
            targets: d.targets,
        }),
        periodogram: Some(p),
        noise_floor_db: Some(d.noise_floor_db),
    })
}

/// Runs the chain over the bursts of one measurement at time `t_s`.
///
/// At `Objects` depth the localized points are fed to `tracker`, which
/// carries state from burst to burst; without one, a fresh tracker is used.
pub fn run_pipeline(
    bursts: &[BeamBurst],
    tx: &TxReference,
    cfg: &ProcessingConfig,
    geometry: &PipelineGeometry,
    t_s: f64,
    tracker: Option<&mut Tracker>,
) -> Result<PipelineOutput, L1Error> {
    let Some(first) = bursts.first() else {
        return Err(L1Error::InvalidConfig("no bursts to process".into()));
    };
    let (n, m) = first.rx.shape();
    cfg.validate(n, m)?;
    if cfg.depth == ProcessingDepth::Objects && !geometry.is_monostatic() {
        return Err(L1Error::InvalidConfig(
            "object tracking in the RAN needs monostatic geometry".into(),
        ));
    }

    let results: Vec<BeamResult> = bursts
        .par_iter()
        .map(|b| process_beam(b, tx, cfg))
        .collect::<Result<_, _>>()?;

    let mut periodograms = Vec::new();
    let mut noise_floors_db = Vec::new();
    let mut channels = Vec::new();
    let mut per_beam = Vec::new();
    for r in results {
        channels.extend(r.channel);
        periodograms.extend(r.periodogram);
        noise_floors_db.extend(r.noise_floor_db);
        per_beam.extend(r.detections);
    }

    let measurement = match cfg.depth {
        ProcessingDepth::ChannelIq => SensingMeasurement::ChannelIq(channels),
        ProcessingDepth::PeriodogramOut => SensingMeasurement::PeriodogramOut(periodograms.clone()),
        ProcessingDepth::Targets2D => {
            if per_beam.len() == 1 {
                SensingMeasurement::Targets2D(per_beam.pop().map(|b| b.targets).unwrap_or_default())
            } else {
                // Merge the same target seen through several beams; angles are dropped.
                let merged =
                    multi_beam_filter(&per_beam).map_err(|e| e.in_stage("multi_beam_filter"))?;
                SensingMeasurement::Targets2D(merged.iter().map(|t| t.to_2d()).collect())
            }
        }
        ProcessingDepth::Targets4D => SensingMeasurement::Targets4D(
            multi_beam_filter(&per_beam).map_err(|e| e.in_stage("multi_beam_filter"))?,
        ),
        ProcessingDepth::Objects => {
            let cloud =
                multi_beam_filter(&per_beam).map_err(|e| e.in_stage("multi_beam_filter"))?;
            let site = (geometry.tx_pos + geometry.rx_pos) * 0.5;
            let points: Vec<LocalizedPoint> = cloud
                .iter()
                .map(|t| LocalizedPoint {
                    position: localize_monostatic(t, site),
                    weight: t.complex_amplitude.norm_sqr(),
                })
                .collect();
            // One path-length bin is half a bin of range.
            let eps_m = cfg.group_epsilon_bins * per_beam[0].axes.path_length_per_bin * 0.5;
            let mut local = Tracker::new();
            let tracker = tracker.unwrap_or(&mut local);
            tracker
                .step(&points, t_s, &cfg.track, eps_m)
                .map_err(|e| e.in_stage("multi_burst_filter"))?;
            SensingMeasurement::Objects(tracker.tracks().cloned().collect())
        }
    };
    Ok(PipelineOutput {
        measurement,
        periodograms,
        noise_floors_db,
    })
}
