//! `isacsim`: run scenarios, validate scenario files and recompute reports
//! from a saved trace.

use std::io::{BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::{debug, info, warn};

use isac_core::api::{self, ApiMessage, ApiReader};
use isac_core::sim::report::{METRICS_FILE, SUMMARY_FILE};
use isac_core::sim::{
    compute_metrics, parse_trace, session_summaries, write_report, RunMetrics, ScenarioConfig,
    ScenarioError, ScriptEntry, Simulation,
};

#[derive(Debug, Parser)]
#[command(
    name = "isacsim",
    version,
    about = "Deterministic ISaC network simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write metrics.json, summary.csv and trace.jsonl.
    Run {
        scenario: PathBuf,
        /// Overrides the seed in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write every periodogram the gNBs computed.
        #[arg(long)]
        dump_periodograms: bool,
        /// Accept one consumer connection and add its request lines to the
        /// script at t = 0; the consumer's messages are written back after
        /// the run.
        #[arg(long, value_name = "HOST:PORT")]
        api_listen: Option<String>,
    },
    /// Check a scenario file and list every violation.
    Validate { scenario: PathBuf },
    /// Recompute metrics and the session summary from a trace.
    Report {
        trace: PathBuf,
        /// Write metrics.json and summary.csv here instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Scenario name recorded in the metrics.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ISACSIM_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            seed,
            out,
            dump_periodograms,
            api_listen,
        } => run(
            &scenario,
            seed,
            &out,
            dump_periodograms,
            api_listen.as_deref(),
        ),
        Command::Validate { scenario } => validate(&scenario),
        Command::Report {
            trace,
            out,
            name,
            seed,
        } => report(&trace, out.as_deref(), name, seed),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load(path: &Path) -> Result<ScenarioConfig> {
    ScenarioConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn run(
    path: &Path,
    seed: Option<u64>,
    out: &Path,
    dump_periodograms: bool,
    api_listen: Option<&str>,
) -> Result<ExitCode> {
    let mut cfg = load(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let listener = match api_listen {
        Some(addr) => {
            let l = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            info!("waiting for a consumer on {}", l.local_addr()?);
            // Scripts and tests that bind port 0 read the real port here.
            eprintln!("listening on {}", l.local_addr()?);
            Some(l)
        }
        None => None,
    };
    let mut connection = None;
    if let Some(l) = listener {
        let (stream, peer) = l.accept().context("accepting the consumer connection")?;
        info!("consumer connected from {peer}");
        let consumer = read_requests(&mut cfg, BufReader::new(stream.try_clone()?))?;
        connection = Some((stream, consumer));
    }

    info!(
        "running {} (seed {}, {} s)",
        cfg.name, cfg.seed, cfg.duration_s
    );
    let started = Instant::now();
    let output = Simulation::new(cfg.clone(), dump_periodograms).run();
    let mut metrics = compute_metrics(&output.trace, &cfg.name, cfg.seed);
    metrics.runtime_s = started.elapsed().as_secs_f64();
    let sessions = session_summaries(&output.trace);
    let written = write_report(
        out,
        &output.trace,
        &metrics,
        &sessions,
        &output.periodograms,
    )
    .with_context(|| format!("writing report to {}", out.display()))?;
    for p in &written {
        debug!("wrote {}", p.display());
    }

    if let Some((stream, Some(consumer))) = connection {
        let mut w = BufWriter::new(stream);
        for d in output
            .to_consumers
            .iter()
            .filter(|d| d.consumer == consumer)
        {
            w.write_all(&api::encode_line(&d.message)?)?;
        }
        w.flush()?;
    }

    print_summary(&metrics);
    Ok(ExitCode::SUCCESS)
}

/// Adds every message on the connection to the script at t = 0 and returns
/// the consumer they belong to. The consumer is taken from the first
/// service request.
fn read_requests<R: std::io::BufRead>(cfg: &mut ScenarioConfig, r: R) -> Result<Option<String>> {
    let mut reader = ApiReader::new(r);
    let mut consumer: Option<String> = None;
    let mut incoming = Vec::new();
    while let Some(msg) = reader.next_message()? {
        let msg = match msg {
            Ok(m) => m,
            Err(e) => {
                warn!("skipping consumer line: {e}");
                continue;
            }
        };
        if let ApiMessage::SensingServiceRequest(req) = &msg {
            match &consumer {
                None => consumer = Some(req.consumer_id.clone()),
                Some(c) if *c != req.consumer_id => {
                    bail!(
                        "one connection carries one consumer, got {c} and {}",
                        req.consumer_id
                    )
                }
                Some(_) => {}
            }
        }
        incoming.push(msg);
    }
    let Some(c) = consumer.clone() else {
        if !incoming.is_empty() {
            bail!("the consumer sent no SensingServiceRequest");
        }
        return Ok(None);
    };
    info!("consumer {c} sent {} message(s)", incoming.len());
    let scripted: Vec<ScriptEntry> = incoming
        .into_iter()
        .map(|message| ScriptEntry {
            at_s: 0.0,
            consumer: c.clone(),
            message,
        })
        .collect();
    cfg.af_script.splice(0..0, scripted);
    Ok(consumer)
}

fn print_summary(m: &RunMetrics) {
    println!(
        "{}: seed {} precision {:.3} recall {:.3} sessions {:?} sep {} B in {} msgs ({:.2} s)",
        m.scenario,
        m.seed,
        m.detection.precision,
        m.detection.recall,
        m.sessions,
        m.sep_total.bytes,
        m.sep_total.messages,
        m.runtime_s
    );
}

fn validate(path: &Path) -> Result<ExitCode> {
    match ScenarioConfig::load(path) {
        Ok(cfg) => {
            println!("{}: ok ({})", path.display(), cfg.name);
            Ok(ExitCode::SUCCESS)
        }
        Err(ScenarioError::Invalid(violations)) => {
            eprintln!("{}: {} violation(s)", path.display(), violations.len());
            for v in &violations {
                eprintln!("  {v}");
            }
            Ok(ExitCode::FAILURE)
        }
        Err(e) => Err(e).with_context(|| format!("validating {}", path.display())),
    }
}

fn report(
    path: &Path,
    out: Option<&Path>,
    name: Option<String>,
    seed: Option<u64>,
) -> Result<ExitCode> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let trace = parse_trace(&bytes)?;
    // A trace written by `run` sits next to its metrics.json, which names
    // the scenario and seed the trace itself does not carry.
    let saved: Option<RunMetrics> = path
        .parent()
        .map(|d| d.join(METRICS_FILE))
        .and_then(|p| std::fs::read(p).ok())
        .and_then(|b| serde_json::from_slice(&b).ok());
    let name = name
        .or_else(|| saved.as_ref().map(|m| m.scenario.clone()))
        .unwrap_or_default();
    let seed = seed.or(saved.as_ref().map(|m| m.seed)).unwrap_or(0);
    let metrics = compute_metrics(&trace, &name, seed);
    let sessions = session_summaries(&trace);
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut json = serde_json::to_vec_pretty(&metrics)?;
            json.push(b'\n');
            std::fs::write(dir.join(METRICS_FILE), json)?;
            isac_core::sim::report::write_summary(
                std::fs::File::create(dir.join(SUMMARY_FILE))?,
                &sessions,
            )?;
            print_summary(&metrics);
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            serde_json::to_writer_pretty(&mut w, &metrics)?;
            writeln!(w)?;
            writeln!(w)?;
            isac_core::sim::report::write_summary(&mut w, &sessions)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
