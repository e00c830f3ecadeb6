//! The discrete-event loop. Time is counted in slots; every message is
//! delivered an integer number of slots after it was sent, latencies
//! rounded up. Events due in the same slot run in (priority, insertion)
//! order, so a run is a pure function of the scenario.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use crate::api::{encode_line, ApiMessage, ApiSession};
use crate::derive_seed;
use crate::gnb::{Gnb, GnbCounters, GnbOutput, PeriodogramDump, SYMBOLS_PER_SLOT};
use crate::scene::{advance, SceneState};
use crate::semf::{Semf, SemfOutput, SemfTimerKey, SemfTrace};
use crate::sep::{encode, GnbId, MeasurementId, SepMessage, TrpId};

use super::config::ScenarioConfig;
use super::trace::{Direction, TraceLine, TraceRecord, TruthMatch, TruthObject, MAX_TRACED_BODY};

/// Simulated time allowed after the scripted duration for aborts and
/// final reports to settle.
pub const DRAIN_S: f64 = 1.0;

/// Child-seed tag of the gNB noise streams.
const SEED_TAG_GNB: u64 = 1;

#[derive(Debug, Clone)]
enum Event {
    Fault {
        trp_id: TrpId,
    },
    FromAf {
        consumer: String,
        msg: ApiMessage,
    },
    ToGnb {
        gnb_id: GnbId,
        msg: SepMessage,
        sent_slot: u64,
    },
    ToSemf {
        gnb_id: GnbId,
        msg: SepMessage,
        sent_slot: u64,
    },
    Timer(SemfTimerKey),
    Burst {
        gnb_id: GnbId,
        ran_id: MeasurementId,
    },
}

impl Event {
    /// Same-slot order: faults, then consumer input, then deliveries, then
    /// timers, then bursts.
    fn priority(&self) -> u8 {
        match self {
            Event::Fault { .. } => 0,
            Event::FromAf { .. } => 1,
            Event::ToGnb { .. } | Event::ToSemf { .. } => 2,
            Event::Timer(_) => 3,
            Event::Burst { .. } => 4,
        }
    }
}

#[derive(Debug)]
struct Pending {
    slot: u64,
    priority: u8,
    seq: u64,
    event: Event,
}

impl Pending {
    fn key(&self) -> (u64, u8, u64) {
        (self.slot, self.priority, self.seq)
    }
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

/// A message the SeMF sent to a consumer.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivered {
    pub slot: u64,
    pub consumer: String,
    pub message: ApiMessage,
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<TraceLine>,
    pub to_consumers: Vec<Delivered>,
    pub sessions: Vec<ApiSession>,
    pub periodograms: Vec<PeriodogramDump>,
    pub counters: BTreeMap<GnbId, GnbCounters>,
    pub slot_ms: f64,
    pub end_slot: u64,
}

pub struct Simulation {
    cfg: ScenarioConfig,
    slot_ms: f64,
    ngc_slots: u64,
    scene0: SceneState,
    semf: Semf,
    gnbs: BTreeMap<GnbId, Gnb>,
    trp_gnb: BTreeMap<TrpId, GnbId>,
    queue: BinaryHeap<Reverse<Pending>>,
    next_seq: u64,
    now: u64,
    trace: Vec<TraceLine>,
    to_consumers: Vec<Delivered>,
    periodograms: Vec<PeriodogramDump>,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig, dump_periodograms: bool) -> Self {
        let slot_ms = f64::from(SYMBOLS_PER_SLOT) / cfg.radio.subcarrier_spacing_hz * 1e3;
        let to_slots = |ms: f64| (ms / slot_ms - 1e-9).ceil().max(0.0) as u64;
        let gnbs = cfg
            .gnb_configs()
            .into_iter()
            .map(|g| {
                let id = g.gnb_id;
                let mut gnb = Gnb::new(g);
                gnb.reject_requests = cfg.faults.reject_request.contains(&id);
                gnb.fail_trp_info = cfg.faults.trp_info_failure.contains(&id);
                gnb.dump_periodograms = dump_periodograms;
                (id, gnb)
            })
            .collect();
        let mut sim = Self {
            slot_ms,
            ngc_slots: to_slots(cfg.latencies.ngc_ms),
            scene0: cfg.scene(),
            semf: Semf::new(cfg.semf_config()),
            gnbs,
            trp_gnb: cfg.trps.iter().map(|t| (t.trp_id, t.gnb_id)).collect(),
            queue: BinaryHeap::new(),
            next_seq: 0,
            now: 0,
            trace: Vec::new(),
            to_consumers: Vec::new(),
            periodograms: Vec::new(),
            cfg,
        };
        for e in sim.cfg.af_script.clone() {
            let slot = sim.slot_of(e.at_s);
            sim.schedule(
                slot,
                Event::FromAf {
                    consumer: e.consumer,
                    msg: e.message,
                },
            );
        }
        for f in sim.cfg.faults.ru_failure.clone() {
            let slot = sim.slot_of(f.at_s);
            sim.schedule(slot, Event::Fault { trp_id: f.trp_id });
        }
        sim
    }

    pub fn slot_ms(&self) -> f64 {
        self.slot_ms
    }

    fn slot_of(&self, t_s: f64) -> u64 {
        (t_s * 1e3 / self.slot_ms - 1e-9).ceil().max(0.0) as u64
    }

    fn now_s(&self) -> f64 {
        self.now as f64 * self.slot_ms * 1e-3
    }

    fn schedule(&mut self, slot: u64, event: Event) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Pending {
            slot,
            priority: event.priority(),
            seq,
            event,
        }));
    }

    fn record(&mut self, record: TraceRecord) {
        let seq = self.trace.len() as u64;
        self.trace.push(TraceLine {
            seq,
            slot: self.now,
            record,
        });
    }

    fn record_sep(
        &mut self,
        direction: Direction,
        gnb_id: GnbId,
        msg: &SepMessage,
        sent_slot: u64,
    ) {
        let frame = encode(msg).expect("protocol actors only emit valid messages");
        let (semf_id, ran_id) = msg.measurement_ids();
        let body = (frame.len() - 4 <= MAX_TRACED_BODY)
            .then(|| serde_json::from_slice(&frame[4..]).expect("frame bodies are JSON"));
        self.record(TraceRecord::Sep {
            direction,
            gnb_id,
            msg_type: msg.msg_type().into(),
            semf_measurement_id: semf_id,
            ran_measurement_id: ran_id,
            bytes: frame.len() as u64,
            sent_slot,
            msg: body,
        });
    }

    fn record_api(&mut self, direction: Direction, consumer: &str, msg: &ApiMessage) {
        let (bytes, body) = match encode_line(msg) {
            Ok(line) => (
                line.len() as u64,
                serde_json::from_slice(&line).expect("encoded lines are JSON"),
            ),
            // A scripted message can break an invariant the codec enforces;
            // the SeMF still sees and answers it.
            Err(e) => (0, serde_json::Value::String(e.to_string())),
        };
        self.record(TraceRecord::Api {
            direction,
            consumer: consumer.into(),
            msg_type: msg.msg_type().into(),
            session_id: msg.session_id(),
            bytes,
            sent_slot: self.now,
            msg: body,
        });
    }

    fn apply_semf(&mut self, out: SemfOutput) {
        // A session's last messages are traced before the record that ends it.
        let (ended, events): (Vec<_>, Vec<_>) = out
            .events
            .into_iter()
            .partition(|ev| matches!(ev, SemfTrace::SessionEnded { .. }));
        for ev in events {
            let truth = match &ev {
                SemfTrace::Scan {
                    session_id,
                    index,
                    t_s,
                    objects,
                    ..
                } => Some(self.truth_record(*session_id, *index, *t_s, objects)),
                _ => None,
            };
            self.record(TraceRecord::Semf { record: ev });
            if let Some(t) = truth {
                self.record(t);
            }
        }
        for (consumer, msg) in out.to_af {
            self.record_api(Direction::SemfToAf, &consumer, &msg);
            self.to_consumers.push(Delivered {
                slot: self.now,
                consumer,
                message: msg,
            });
        }
        for ev in ended {
            self.record(TraceRecord::Semf { record: ev });
        }
        for (gnb_id, msg) in out.to_ran {
            let slot = self.now + self.ngc_slots;
            self.schedule(
                slot,
                Event::ToGnb {
                    gnb_id,
                    msg,
                    sent_slot: self.now,
                },
            );
        }
        for (key, after_ms) in out.timers {
            let slot = self.now + (after_ms as f64 / self.slot_ms - 1e-9).ceil().max(0.0) as u64;
            self.schedule(slot, Event::Timer(key));
        }
    }

    fn apply_gnb(&mut self, gnb_id: GnbId, out: GnbOutput) {
        for ev in out.events {
            self.record(TraceRecord::Gnb { gnb_id, record: ev });
        }
        for msg in out.to_semf {
            let slot = self.now + self.ngc_slots;
            self.schedule(
                slot,
                Event::ToSemf {
                    gnb_id,
                    msg,
                    sent_slot: self.now,
                },
            );
        }
        for w in out.wakeups {
            self.schedule(
                w.slot.max(self.now),
                Event::Burst {
                    gnb_id,
                    ran_id: w.ran_measurement_id,
                },
            );
        }
        self.periodograms.extend(out.periodograms);
    }

    /// Compares a scan with the moving objects inside the session's area.
    /// Pairs are claimed closest first; a pair farther apart than the gate
    /// (two monostatic range bins) is no match.
    fn truth_record(
        &self,
        session_id: u64,
        index: u64,
        t_s: f64,
        objects: &[crate::semf::FusedObject],
    ) -> TraceRecord {
        let gate_m = self.cfg.radio.path_length_per_bin();
        let area = self
            .semf
            .session(session_id)
            .map(|s| s.request.area.clone());
        let scene = advance(&self.scene0, t_s - self.scene0.time_s);
        let truths: Vec<TruthObject> = scene
            .objects
            .iter()
            .filter(|o| !o.is_static && area.as_ref().is_some_and(|a| a.contains(o.position)))
            .map(|o| TruthObject {
                id: o.id,
                position: o.position,
                velocity: o.velocity,
            })
            .collect();
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (i, o) in objects.iter().enumerate() {
            for (j, t) in truths.iter().enumerate() {
                let d = o.position.distance(t.position);
                if d <= gate_m {
                    pairs.push((d, i, j));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut obj_used = vec![false; objects.len()];
        let mut truth_used = vec![false; truths.len()];
        let mut matches = Vec::new();
        for (d, i, j) in pairs {
            if obj_used[i] || truth_used[j] {
                continue;
            }
            obj_used[i] = true;
            truth_used[j] = true;
            matches.push(TruthMatch {
                object_id: objects[i].object_id,
                truth_id: truths[j].id,
                position_error_m: d,
                velocity_error_m_per_s: objects[i].velocity.distance(truths[j].velocity),
            });
        }
        matches.sort_by_key(|m| m.object_id);
        TraceRecord::Truth {
            session_id,
            index,
            t_s,
            gate_m,
            false_alarms: objects
                .iter()
                .zip(&obj_used)
                .filter(|(_, u)| !**u)
                .map(|(o, _)| o.object_id)
                .collect(),
            missed: truths
                .iter()
                .zip(&truth_used)
                .filter(|(_, u)| !**u)
                .map(|(t, _)| t.id)
                .collect(),
            truths,
            matches,
        }
    }

    fn step(&mut self, p: Pending) {
        self.now = p.slot;
        let now_s = self.now_s();
        match p.event {
            Event::Fault { trp_id } => {
                let gnb_id = self.trp_gnb[&trp_id];
                self.record(TraceRecord::Fault {
                    fault: "ru_failure".into(),
                    gnb_id: Some(gnb_id),
                    trp_id: Some(trp_id),
                });
                let out = self
                    .gnbs
                    .get_mut(&gnb_id)
                    .expect("validated")
                    .inject_ru_failure(trp_id);
                self.apply_gnb(gnb_id, out);
            }
            Event::FromAf { consumer, msg } => {
                self.record_api(Direction::AfToSemf, &consumer, &msg);
                let out = self.semf.handle_api(&consumer, msg, now_s);
                self.apply_semf(out);
            }
            Event::ToGnb {
                gnb_id,
                msg,
                sent_slot,
            } => {
                self.record_sep(Direction::SemfToGnb, gnb_id, &msg, sent_slot);
                let now = self.now;
                let out = self
                    .gnbs
                    .get_mut(&gnb_id)
                    .expect("SeMF only knows configured gNBs")
                    .handle_sep(msg, now);
                self.apply_gnb(gnb_id, out);
            }
            Event::ToSemf {
                gnb_id,
                msg,
                sent_slot,
            } => {
                self.record_sep(Direction::GnbToSemf, gnb_id, &msg, sent_slot);
                let out = self.semf.on_sep(gnb_id, msg, now_s);
                self.apply_semf(out);
            }
            Event::Timer(key) => {
                let out = self.semf.on_timer(key, now_s);
                self.apply_semf(out);
            }
            Event::Burst { gnb_id, ran_id } => {
                let seed = derive_seed(self.cfg.seed, &[SEED_TAG_GNB, u64::from(gnb_id)]);
                let scene0 = &self.scene0;
                let out = self
                    .gnbs
                    .get_mut(&gnb_id)
                    .expect("configured")
                    .execute_burst(ran_id, scene0, seed);
                self.apply_gnb(gnb_id, out);
            }
        }
    }

    fn run_until(&mut self, last_slot: u64) {
        while self
            .queue
            .peek()
            .is_some_and(|Reverse(p)| p.slot <= last_slot)
        {
            let Reverse(p) = self.queue.pop().expect("peeked");
            self.step(p);
        }
    }

    /// Runs the script, ends open sessions at the scripted duration and
    /// lets the network settle for [`DRAIN_S`].
    pub fn run(mut self) -> RunOutput {
        let end_slot = self.slot_of(self.cfg.duration_s);
        self.run_until(end_slot);
        self.now = self.now.max(end_slot);
        let out = self.semf.shutdown(self.now_s());
        if !out.to_af.is_empty() || !out.to_ran.is_empty() {
            self.record(TraceRecord::Shutdown);
        }
        self.apply_semf(out);
        let drain_end = end_slot + self.slot_of(DRAIN_S);
        self.run_until(drain_end);
        self.now = self.now.max(drain_end);
        let undelivered = self.queue.len() as u64;
        self.record(TraceRecord::End { undelivered });
        RunOutput {
            sessions: self.semf.api_sessions().into_iter().cloned().collect(),
            trace: self.trace,
            to_consumers: self.to_consumers,
            periodograms: self.periodograms,
            counters: self
                .gnbs
                .iter()
                .map(|(id, g)| (*id, g.counters()))
                .collect(),
            slot_ms: self.slot_ms,
            end_slot: self.now,
        }
    }

    pub fn semf(&self) -> &Semf {
        &self.semf
    }

    pub fn gnb(&self, id: GnbId) -> Option<&Gnb> {
        self.gnbs.get(&id)
    }
}

/// Runs a scenario to completion.
pub fn run(cfg: &ScenarioConfig) -> RunOutput {
    Simulation::new(cfg.clone(), false).run()
}
