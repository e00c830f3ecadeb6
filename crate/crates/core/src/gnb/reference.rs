//! TX signal generation and how a receiver gets hold of it.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{ComplexGrid, GridMeta};
use crate::sep::{Cause, CauseDiagnostics, ReferenceSource, SignalMode};

/// Known reference sequence of one TRP: unit magnitude, quadratic phase in
/// both axes with a per-TRP root, so concurrently transmitting TRPs use
/// distinct sequences.
pub fn reference_grid(n: usize, m: usize, meta: GridMeta, trp_id: u32) -> ComplexGrid {
    let root = f64::from(2 * trp_id + 1);
    ComplexGrid::from_fn(n, m, meta, |k, l| {
        let (k, l) = (k as f64, l as f64);
        let phase =
            -std::f64::consts::PI * root * (k * (k + 1.0) / n as f64 + l * (l + 1.0) / m as f64);
        Complex64::from_polar(1.0, phase)
    })
}

/// Communication payload on a sensing burst: random QPSK symbols on the
/// fraction `comm_load` of resource elements, nothing elsewhere.
fn comm_grid(
    n: usize,
    m: usize,
    meta: GridMeta,
    comm_load: f64,
    rng: &mut ChaCha8Rng,
) -> ComplexGrid {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut g = ComplexGrid::zeros(n, m, meta);
    for k in 0..n {
        for l in 0..m {
            let carries: f64 = rng.random();
            let bits: u8 = rng.random_range(0..4);
            if carries < comm_load {
                let re = if bits & 1 == 0 { s } else { -s };
                let im = if bits & 2 == 0 { s } else { -s };
                g.set(k, l, Complex64::new(re, im));
            }
        }
    }
    g
}

/// The grid a TX puts on the sensing resources of one burst.
///
/// `force_reference` makes an opportunistic TX fill every element with its
/// reference sequence, as it does after a receiver missed a burst.
pub fn tx_grid(
    signal: SignalMode,
    n: usize,
    m: usize,
    meta: GridMeta,
    trp_id: u32,
    comm_load: f64,
    force_reference: bool,
    seed: u64,
) -> ComplexGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match signal {
        SignalMode::PreconfiguredReference => reference_grid(n, m, meta, trp_id),
        SignalMode::ReuseCommunication => comm_grid(n, m, meta, comm_load, &mut rng),
        SignalMode::Opportunistic => {
            let reference = reference_grid(n, m, meta, trp_id);
            if force_reference {
                return reference;
            }
            let comm = comm_grid(n, m, meta, comm_load, &mut rng);
            ComplexGrid::from_fn(n, m, meta, |k, l| {
                if comm.get(k, l).norm() > 0.0 {
                    comm.get(k, l)
                } else {
                    reference.get(k, l)
                }
            })
        }
    }
}

/// Outcome of trying to obtain the TX grid at a receiver for one burst.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceOutcome {
    Acquired(ComplexGrid),
    /// The burst cannot be processed; nothing is reported for it.
    Skipped {
        reason: String,
    },
}

/// Checks that could never succeed on any burst; run at admission.
pub fn check_reference_source(
    source: &ReferenceSource,
    signal: SignalMode,
    burst_duration_ms: f64,
) -> Result<(), CauseDiagnostics> {
    match *source {
        ReferenceSource::Preconfigured => {
            if signal == SignalMode::PreconfiguredReference {
                Ok(())
            } else {
                Err(CauseDiagnostics::new(
                    Cause::InvalidConfig,
                    "a receiver can only generate the reference locally when the signal is fully preconfigured",
                ))
            }
        }
        ReferenceSource::Backhaul {
            latency_ms,
            buffer_ms,
        } => {
            if buffer_ms < burst_duration_ms {
                Err(CauseDiagnostics::new(
                    Cause::BufferOverflow,
                    format!(
                        "IQ buffer of {buffer_ms} ms cannot hold a {burst_duration_ms:.3} ms burst"
                    ),
                ))
            } else if latency_ms > buffer_ms {
                Err(CauseDiagnostics::new(
                    Cause::BackhaulTooSlow,
                    format!(
                        "backhaul latency {latency_ms} ms exceeds the {buffer_ms} ms buffer window"
                    ),
                ))
            } else {
                Ok(())
            }
        }
        // Decodability is a per-burst question.
        ReferenceSource::OverTheAir { .. } => Ok(()),
    }
}

/// Obtains the TX grid for one burst at a receiver.
pub fn acquire_tx_reference(
    source: &ReferenceSource,
    signal: SignalMode,
    tx: &ComplexGrid,
    burst_duration_ms: f64,
    wideband_precoding: bool,
) -> Result<ReferenceOutcome, CauseDiagnostics> {
    check_reference_source(source, signal, burst_duration_ms)?;
    match *source {
        // Generated locally from the configuration, which fully defines it.
        ReferenceSource::Preconfigured | ReferenceSource::Backhaul { .. } => {
            Ok(ReferenceOutcome::Acquired(tx.clone()))
        }
        ReferenceSource::OverTheAir {
            sinr_db,
            mcs_threshold_db,
        } => {
            if !wideband_precoding {
                Ok(ReferenceOutcome::Skipped {
                    reason: "per-sub-band precoding hides the transmitted symbols".into(),
                })
            } else if sinr_db >= mcs_threshold_db {
                Ok(ReferenceOutcome::Acquired(tx.clone()))
            } else {
                Ok(ReferenceOutcome::Skipped {
                    reason: format!(
                        "decoding failed at {sinr_db} dB SINR, {mcs_threshold_db} dB needed"
                    ),
                })
            }
        }
    }
}
