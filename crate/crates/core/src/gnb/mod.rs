//! The sensing-enabled gNB: RAN end of the sensing protocol, sensing
//! scheduler, radio-unit models and burst execution through the L1 chain.

mod node;
mod reference;
mod ru;
mod scheduler;

pub use node::{
    AllocationNote, Gnb, GnbConfig, GnbCounters, GnbEvent, GnbOutput, PeriodogramDump, TrpSite,
    Wakeup,
};
pub use reference::{
    acquire_tx_reference, check_reference_source, reference_grid, tx_grid, ReferenceOutcome,
};
pub use ru::{
    ru_capability_check, RuModel, RuVerdict, SicBudget, TddPattern, MONOSTATIC_MIN_SIC_DB,
};
pub use scheduler::{
    aggregate_gcd, schedule_sensing, AggregatedDemand, Allocation, SchedulerState, SensingDemand,
    MAX_HORIZON_SLOTS, SYMBOLS_PER_SLOT,
};

use crate::sep::{Cause, CauseDiagnostics};

/// Agreement between a TX gNB and its RX gNBs on a dynamically scheduled
/// burst: each RX must learn the slot and confirm before the lead time runs
/// out, one inter-gNB round trip per RX.
pub fn bistatic_handshake(
    lead_time_ms: f64,
    xn_latencies_ms: &[f64],
) -> Result<(), CauseDiagnostics> {
    match xn_latencies_ms.iter().find(|l| 2.0 * **l > lead_time_ms) {
        None => Ok(()),
        Some(l) => Err(CauseDiagnostics::new(
            Cause::HandshakeTimeout,
            format!(
                "round trip of {} ms does not fit a {lead_time_ms} ms lead time",
                2.0 * l
            ),
        )),
    }
}
