//! Deterministic simulation harness: scenario files, the event loop that
//! wires consumers, the SeMF and the gNBs together, the run trace and the
//! metrics computed from it.

pub mod config;
pub mod engine;
pub mod metrics;
pub mod report;
pub mod trace;

pub use config::{
    Faults, GnbSpec, Latencies, ReferenceChoice, RuFailureFault, ScenarioConfig, ScenarioError,
    ScriptEntry, TrpSpec, Violation, ViolationKind,
};
pub use engine::{run, Delivered, RunOutput, Simulation, DRAIN_S};
pub use metrics::{
    compute_metrics, session_summaries, DetectionMetrics, LinkStats, RunMetrics, SessionSummary,
};
pub use report::write_report;
pub use trace::{
    encode_trace, parse_trace, Direction, TraceLine, TraceRecord, TruthMatch, TruthObject,
};
