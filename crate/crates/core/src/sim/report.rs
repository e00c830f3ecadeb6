//! Output files of a run.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::gnb::PeriodogramDump;

use super::metrics::{RunMetrics, SessionSummary};
use super::trace::{encode_trace, TraceLine};

pub const METRICS_FILE: &str = "metrics.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const PERIODOGRAM_DIR: &str = "periodograms";

#[derive(Debug, serde::Serialize)]
struct SummaryRow<'a> {
    session_id: u64,
    consumer_id: &'a str,
    phase: String,
    mode: String,
    store_hit: bool,
    legs: u64,
    sensing_requests: u64,
    notifications: u64,
    failure_cause: &'a str,
}

/// Writes one CSV row per session.
pub fn write_summary<W: io::Write>(w: W, rows: &[SessionSummary]) -> io::Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(SummaryRow {
            session_id: r.session_id,
            consumer_id: &r.consumer_id,
            phase: r.phase.map(|p| format!("{p:?}")).unwrap_or_default(),
            mode: r.mode.map(|m| format!("{m:?}")).unwrap_or_default(),
            store_hit: r.store_hit,
            legs: r.legs,
            sensing_requests: r.sensing_requests,
            notifications: r.notifications,
            failure_cause: r.failure_cause.as_deref().unwrap_or(""),
        })
        .map_err(io::Error::other)?;
    }
    csv.flush()
}

/// Writes metrics.json, summary.csv, trace.jsonl and, when given,
/// one JSON file per periodogram. Returns the paths written.
pub fn write_report(
    out_dir: &Path,
    trace: &[TraceLine],
    metrics: &RunMetrics,
    sessions: &[SessionSummary],
    periodograms: &[PeriodogramDump],
) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let p = out_dir.join(METRICS_FILE);
    let mut json = serde_json::to_vec_pretty(metrics).map_err(io::Error::other)?;
    json.push(b'\n');
    fs::write(&p, json)?;
    written.push(p);

    let p = out_dir.join(SUMMARY_FILE);
    write_summary(fs::File::create(&p)?, sessions)?;
    written.push(p);

    let p = out_dir.join(TRACE_FILE);
    fs::write(&p, encode_trace(trace))?;
    written.push(p);

    if !periodograms.is_empty() {
        let dir = out_dir.join(PERIODOGRAM_DIR);
        fs::create_dir_all(&dir)?;
        for d in periodograms {
            let p = dir.join(format!(
                "ran{}_trp{}_slot{}_beam{}.json",
                d.ran_measurement_id, d.trp_id, d.slot, d.beam
            ));
            fs::write(&p, serde_json::to_vec(d).map_err(io::Error::other)?)?;
            written.push(p);
        }
    }
    Ok(written)
}
