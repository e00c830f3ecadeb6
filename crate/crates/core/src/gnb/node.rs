//! One gNB as a single-owner actor: it consumes protocol messages, burst
//! wakeups and fault injections, and returns everything it wants to happen
//! next as a [`GnbOutput`].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::bistatic_handshake;
use super::reference::{acquire_tx_reference, check_reference_source, tx_grid, ReferenceOutcome};
use super::ru::{ru_capability_check, RuModel, RuVerdict};
use super::scheduler::{SchedulerState, SensingDemand, SYMBOLS_PER_SLOT};
use crate::derive_seed;
use crate::l1sens::{
    run_pipeline, BeamBurst, Periodogram, PipelineGeometry, ProcessingDepth, Tracker, TxReference,
};
use crate::scene::{advance, synthesize_channel, RadioParams, SceneState};
use crate::sep::{
    trp_information_procedure, Cause, CauseDiagnostics, GnbId, MeasurementId, ProcedurePhase,
    ProtocolViolation, RanAction, RanEvent, RanProcedure, Role, Scheduling, SensingFailure,
    SensingMode, SensingRequest, SensingUpdate, SepMessage, TimingMode, TrpConfigListEntry, TrpId,
    TrpInfo, TrpInformationFailure, TrpRegistrySide, TrpResultListEntry,
};

/// A TRP together with the radio unit behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrpSite {
    pub info: TrpInfo,
    pub ru: RuModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GnbConfig {
    pub gnb_id: GnbId,
    /// Carrier, spacing and power levels; burst sizes come from each request.
    pub radio: RadioParams,
    pub trps: Vec<TrpSite>,
    /// Fraction of downlink resources carrying communication.
    #[serde(default)]
    pub comm_load: f64,
    /// One-way latency towards other gNBs.
    pub xn_latency_ms: f64,
}

/// Asks the caller to invoke [`Gnb::execute_burst`] at `slot`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Wakeup {
    pub ran_measurement_id: MeasurementId,
    pub slot: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationNote {
    pub trp_id: TrpId,
    pub period_slots: u32,
    pub offset_slot: u64,
    pub symbols: u32,
    pub over_delivery: f64,
}

/// Decisions worth tracing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event")]
pub enum GnbEvent {
    Admitted {
        semf_measurement_id: MeasurementId,
        ran_measurement_id: MeasurementId,
        allocations: Vec<AllocationNote>,
    },
    Rejected {
        semf_measurement_id: MeasurementId,
        cause: CauseDiagnostics,
    },
    Handshake {
        semf_measurement_id: MeasurementId,
        ok: bool,
    },
    TxBurst {
        ran_measurement_id: MeasurementId,
        trp_id: TrpId,
        slot: u64,
        span_slots: u64,
        downlink: bool,
    },
    RxBurst {
        ran_measurement_id: MeasurementId,
        trp_id: TrpId,
        slot: u64,
        time_s: f64,
        paused_comm_slots: u64,
        depth: ProcessingDepth,
    },
    BurstSkipped {
        ran_measurement_id: MeasurementId,
        trp_id: TrpId,
        slot: u64,
        reason: String,
    },
    UpdateApplied {
        ran_measurement_id: MeasurementId,
    },
    UpdateRejected {
        ran_measurement_id: MeasurementId,
        cause: CauseDiagnostics,
    },
    RuFailed {
        trp_id: TrpId,
    },
    Released {
        ran_measurement_id: MeasurementId,
        phase: ProcedurePhase,
    },
    Violation(ProtocolViolation),
}

/// One periodogram kept for a debug dump.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodogramDump {
    pub ran_measurement_id: MeasurementId,
    pub trp_id: TrpId,
    pub slot: u64,
    pub beam: usize,
    pub periodogram: Periodogram,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GnbOutput {
    pub to_semf: Vec<SepMessage>,
    pub wakeups: Vec<Wakeup>,
    pub events: Vec<GnbEvent>,
    pub periodograms: Vec<PeriodogramDump>,
}

impl GnbOutput {
    fn send(&mut self, msg: SepMessage) {
        self.to_semf.push(msg);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GnbCounters {
    pub tx_bursts: u64,
    pub rx_bursts: u64,
    /// TX bursts touching a non-downlink slot; stays zero by construction.
    pub tx_outside_downlink: u64,
    pub skipped_bursts: u64,
    /// Communication slots suppressed on legacy receivers.
    pub pause_overhead_slots: u64,
    pub handshakes: u64,
}

#[derive(Debug, Clone)]
struct Leg {
    entry: TrpConfigListEntry,
    verdict: RuVerdict,
    tracker: Tracker,
}

#[derive(Debug, Clone)]
struct Task {
    fsm: RanProcedure,
    legs: Vec<Leg>,
    start_slot: u64,
    report_period_slots: u64,
    bursts_done: u64,
    force_reference: bool,
    released: bool,
}

pub struct Gnb {
    cfg: GnbConfig,
    sites: BTreeMap<TrpId, TrpSite>,
    schedulers: BTreeMap<TrpId, SchedulerState>,
    failed_trps: BTreeSet<TrpId>,
    tasks: BTreeMap<MeasurementId, Task>,
    next_ran_id: MeasurementId,
    counters: GnbCounters,
    /// Injected fault: refuse every sensing request.
    pub reject_requests: bool,
    /// Injected fault: fail TRP information requests.
    pub fail_trp_info: bool,
    pub dump_periodograms: bool,
}

fn ms_to_slots(ms: f64, slot_ms: f64) -> u64 {
    (ms / slot_ms - 1e-9).ceil().max(0.0) as u64
}

impl Gnb {
    pub fn new(cfg: GnbConfig) -> Self {
        let sites: BTreeMap<_, _> = cfg
            .trps
            .iter()
            .map(|s| (s.info.trp_id, s.clone()))
            .collect();
        let schedulers = sites
            .iter()
            .map(|(id, s)| (*id, SchedulerState::new(s.ru.pattern(), cfg.comm_load)))
            .collect();
        Self {
            cfg,
            sites,
            schedulers,
            failed_trps: BTreeSet::new(),
            tasks: BTreeMap::new(),
            next_ran_id: 1,
            counters: GnbCounters::default(),
            reject_requests: false,
            fail_trp_info: false,
            dump_periodograms: false,
        }
    }

    pub fn id(&self) -> GnbId {
        self.cfg.gnb_id
    }

    pub fn config(&self) -> &GnbConfig {
        &self.cfg
    }

    pub fn counters(&self) -> GnbCounters {
        self.counters
    }

    pub fn scheduler(&self, trp: TrpId) -> Option<&SchedulerState> {
        self.schedulers.get(&trp)
    }

    /// Duration of one slot in ms.
    pub fn slot_ms(&self) -> f64 {
        f64::from(SYMBOLS_PER_SLOT) / self.cfg.radio.subcarrier_spacing_hz * 1e3
    }

    pub fn procedure(&self, ran_id: MeasurementId) -> Option<&RanProcedure> {
        self.tasks.get(&ran_id).map(|t| &t.fsm)
    }

    pub fn procedures(&self) -> impl Iterator<Item = &RanProcedure> {
        self.tasks.values().map(|t| &t.fsm)
    }

    fn registry_side(&self) -> TrpRegistrySide {
        let mut side = TrpRegistrySide::default();
        side.gnbs.insert(self.cfg.gnb_id, Vec::new());
        for s in self.sites.values() {
            side.insert(s.info.clone());
        }
        side
    }

    /// Handles one protocol message from the SeMF at `now_slot`.
    pub fn handle_sep(&mut self, msg: SepMessage, now_slot: u64) -> GnbOutput {
        let mut out = GnbOutput::default();
        match msg {
            SepMessage::TrpInformationRequest(req) => {
                let reply = if self.fail_trp_info {
                    SepMessage::TrpInformationFailure(TrpInformationFailure {
                        gnb_id: req.gnb_id,
                        cause: CauseDiagnostics::new(
                            Cause::ResourceUnavailable,
                            "TRP information unavailable",
                        ),
                    })
                } else {
                    trp_information_procedure(&self.registry_side(), &req)
                };
                out.send(reply);
            }
            SepMessage::SensingRequest(req) => self.on_request(req, now_slot, &mut out),
            SepMessage::SensingAbort(abort) => {
                match self.tasks.get_mut(&abort.ran_measurement_id) {
                    // Stopping the bursts happens in `release_finished` below.
                    Some(task) => {
                        if let Err(v) = task.fsm.handle(RanEvent::Abort(abort)) {
                            out.events.push(GnbEvent::Violation(v));
                        }
                    }
                    None => out.events.push(GnbEvent::Violation(ProtocolViolation {
                        phase: ProcedurePhase::Idle,
                        event: "SensingAbort".into(),
                        reason: format!(
                            "no measurement with ids ({}, {})",
                            abort.semf_measurement_id, abort.ran_measurement_id
                        ),
                    })),
                }
            }
            SepMessage::SensingUpdate(update) => self.on_update(update, &mut out),
            other => out.events.push(GnbEvent::Violation(ProtocolViolation {
                phase: ProcedurePhase::Idle,
                event: other.msg_type().into(),
                reason: "message is never sent towards the RAN".into(),
            })),
        }
        self.release_finished(&mut out);
        out
    }

    fn admit(
        &mut self,
        req: &SensingRequest,
        ran_id: MeasurementId,
    ) -> Result<Vec<Leg>, CauseDiagnostics> {
        if self.reject_requests {
            return Err(CauseDiagnostics::new(
                Cause::ResourceUnavailable,
                "gNB refuses sensing requests",
            ));
        }
        let slot_ms = self.slot_ms();
        let mut legs = Vec::with_capacity(req.trp_config_list.len());
        let mut seen = BTreeSet::new();
        for e in &req.trp_config_list {
            let site = self.sites.get(&e.trp_id).ok_or_else(|| {
                CauseDiagnostics::new(
                    Cause::UnknownTrp,
                    format!("no TRP {} at this gNB", e.trp_id),
                )
            })?;
            if !seen.insert(e.trp_id) {
                return Err(CauseDiagnostics::new(
                    Cause::InvalidConfig,
                    format!("TRP {} listed twice", e.trp_id),
                ));
            }
            if self.failed_trps.contains(&e.trp_id) {
                return Err(CauseDiagnostics::new(
                    Cause::RuFailure,
                    format!("RU of TRP {} is down", e.trp_id),
                ));
            }
            let verdict = ru_capability_check(&site.ru, e.role, e.mode)?;
            if e.beams.len() > site.ru.beams_supported as usize {
                return Err(CauseDiagnostics::new(
                    Cause::UnsupportedMode,
                    format!(
                        "TRP {} supports {} beams, {} requested",
                        e.trp_id,
                        site.ru.beams_supported,
                        e.beams.len()
                    ),
                ));
            }
            let bandwidth =
                f64::from(e.resource.subcarriers) * self.cfg.radio.subcarrier_spacing_hz;
            if bandwidth > site.info.max_bandwidth_hz {
                return Err(CauseDiagnostics::new(
                    Cause::ResourceUnavailable,
                    format!(
                        "{bandwidth} Hz exceeds the {} Hz of TRP {}",
                        site.info.max_bandwidth_hz, e.trp_id
                    ),
                ));
            }
            if e.role.receives() {
                if e.beams.is_empty() {
                    return Err(CauseDiagnostics::new(
                        Cause::InvalidConfig,
                        "a receiving entry needs a beam",
                    ));
                }
                e.processing
                    .validate(
                        e.resource.subcarriers as usize,
                        e.resource.burst_symbols as usize,
                    )
                    .map_err(|err| CauseDiagnostics::new(Cause::InvalidConfig, err.to_string()))?;
                if e.processing.depth == ProcessingDepth::Objects
                    && e.mode != SensingMode::Monostatic
                {
                    return Err(CauseDiagnostics::new(
                        Cause::InvalidConfig,
                        "object tracking in the RAN needs monostatic geometry",
                    ));
                }
            }
            match (e.role, e.mode, &e.bistatic) {
                (Role::Rx, SensingMode::Bistatic, Some(link)) => {
                    let burst_ms = f64::from(e.resource.burst_symbols)
                        / self.cfg.radio.subcarrier_spacing_hz
                        * 1e3;
                    check_reference_source(&link.reference, e.resource.signal, burst_ms)?;
                    if let Scheduling::Dynamic { lead_time_ms } = link.scheduling {
                        self.counters.handshakes += 1;
                        bistatic_handshake(lead_time_ms, &[self.cfg.xn_latency_ms])?;
                    }
                }
                (Role::Rx, SensingMode::Bistatic, None) => {
                    return Err(CauseDiagnostics::new(
                        Cause::InvalidConfig,
                        "bistatic RX entry without TX link",
                    ));
                }
                _ => {}
            }
            legs.push(Leg {
                entry: e.clone(),
                verdict,
                tracker: Tracker::new(),
            });
        }
        if let TimingMode::Periodic {
            report_period_ms, ..
        } = req.measurement_timing.mode
        {
            if (report_period_ms as f64) < slot_ms {
                return Err(CauseDiagnostics::new(
                    Cause::InvalidConfig,
                    "report period shorter than a slot",
                ));
            }
        }
        // Resources last, so a failure above leaves the schedulers untouched.
        let mut admitted = Vec::new();
        for leg in &legs {
            let e = &leg.entry;
            let demand = SensingDemand {
                period_slots: e.resource.period_slots,
                symbols: e.resource.burst_symbols,
                subcarriers: e.resource.subcarriers,
            };
            let sched = self
                .schedulers
                .get_mut(&e.trp_id)
                .expect("every site has a scheduler");
            if let Err(c) = sched.admit(ran_id, demand) {
                for trp in admitted {
                    self.schedulers
                        .get_mut(&trp)
                        .expect("admitted above")
                        .release(ran_id);
                }
                return Err(c);
            }
            admitted.push(e.trp_id);
        }
        Ok(legs)
    }

    fn on_request(&mut self, req: SensingRequest, now_slot: u64, out: &mut GnbOutput) {
        let semf_id = req.semf_measurement_id;
        let duplicate = self
            .tasks
            .values()
            .any(|t| t.fsm.semf_id() == semf_id && !t.fsm.phase().is_terminal());
        if duplicate {
            let cause = CauseDiagnostics::new(
                Cause::DuplicateMeasurementId,
                format!("measurement {semf_id} is already running"),
            );
            out.events.push(GnbEvent::Rejected {
                semf_measurement_id: semf_id,
                cause: cause.clone(),
            });
            out.send(SepMessage::SensingFailure(SensingFailure {
                semf_measurement_id: semf_id,
                cause,
            }));
            return;
        }
        let ran_id = self.next_ran_id;
        let dynamic = req.trp_config_list.iter().any(
            |e| matches!(e.bistatic, Some(l) if matches!(l.scheduling, Scheduling::Dynamic { .. })),
        );
        let admission = self.admit(&req, ran_id);
        if dynamic {
            out.events.push(GnbEvent::Handshake {
                semf_measurement_id: semf_id,
                ok: !matches!(&admission, Err(c) if c.cause == Cause::HandshakeTimeout),
            });
        }
        let mut fsm = RanProcedure::new(semf_id);
        let (legs, verdict) = match admission {
            Ok(legs) => (legs, Ok(())),
            Err(c) => {
                out.events.push(GnbEvent::Rejected {
                    semf_measurement_id: semf_id,
                    cause: c.clone(),
                });
                (Vec::new(), Err(c))
            }
        };
        let accepted = verdict.is_ok();
        let actions = match fsm.handle(RanEvent::Request {
            request: req.clone(),
            verdict,
            ran_id,
        }) {
            Ok(a) => a,
            Err(v) => {
                out.events.push(GnbEvent::Violation(v));
                return;
            }
        };
        for a in actions {
            if let RanAction::Send(m) = a {
                out.send(m);
            }
        }
        if !accepted {
            return;
        }
        self.next_ran_id += 1;
        let slot_ms = self.slot_ms();
        let start_slot = req.measurement_timing.start_ms.map_or(now_slot + 1, |ms| {
            ms_to_slots(ms as f64, slot_ms).max(now_slot + 1)
        });
        let report_period_slots = match req.measurement_timing.mode {
            TimingMode::OneShot => 0,
            TimingMode::Periodic {
                report_period_ms, ..
            } => ms_to_slots(report_period_ms as f64, slot_ms),
        };
        let allocations = legs
            .iter()
            .map(|l| {
                let a = self.schedulers[&l.entry.trp_id]
                    .allocation_for(ran_id)
                    .expect("admitted legs are allocated");
                AllocationNote {
                    trp_id: l.entry.trp_id,
                    period_slots: a.demand.period_slots,
                    offset_slot: a.offset_slot,
                    symbols: a.demand.symbols,
                    over_delivery: a.members[&ran_id],
                }
            })
            .collect();
        out.events.push(GnbEvent::Admitted {
            semf_measurement_id: semf_id,
            ran_measurement_id: ran_id,
            allocations,
        });
        let task = Task {
            fsm,
            legs,
            start_slot,
            report_period_slots,
            bursts_done: 0,
            force_reference: false,
            released: false,
        };
        let wake = self.burst_slot(&task, ran_id);
        self.tasks.insert(ran_id, task);
        out.wakeups.push(Wakeup {
            ran_measurement_id: ran_id,
            slot: wake,
        });
    }

    /// Slot at which every leg has had its burst for the next report.
    fn burst_slot(&self, task: &Task, ran_id: MeasurementId) -> u64 {
        let due = task.start_slot + task.bursts_done * task.report_period_slots;
        task.legs
            .iter()
            .map(|l| self.leg_slot(l, ran_id, due))
            .max()
            .unwrap_or(due)
    }

    fn leg_slot(&self, leg: &Leg, ran_id: MeasurementId, due: u64) -> u64 {
        self.schedulers[&leg.entry.trp_id]
            .allocation_for(ran_id)
            .map_or(due, |a| a.next_occasion(due))
    }

    fn on_update(&mut self, update: SensingUpdate, out: &mut GnbOutput) {
        let ran_id = update.ran_measurement_id;
        let Some(task) = self.tasks.get(&ran_id) else {
            out.events.push(GnbEvent::Violation(ProtocolViolation {
                phase: ProcedurePhase::Idle,
                event: "SensingUpdate".into(),
                reason: format!("no measurement with RAN id {ran_id}"),
            }));
            return;
        };
        let old: Vec<TrpConfigListEntry> = task.legs.iter().map(|l| l.entry.clone()).collect();
        let verdict = self.check_update(&old, &update.trp_config_list, ran_id);
        let task = self.tasks.get_mut(&ran_id).expect("looked up above");
        match task.fsm.handle(RanEvent::Update {
            update: update.clone(),
            verdict,
        }) {
            Ok(actions) => {
                for a in actions {
                    match a {
                        RanAction::ApplyUpdate(list) => {
                            for (leg, e) in task.legs.iter_mut().zip(list) {
                                leg.entry = e;
                            }
                            out.events.push(GnbEvent::UpdateApplied {
                                ran_measurement_id: ran_id,
                            });
                        }
                        RanAction::UpdateRejected(cause) => {
                            out.events.push(GnbEvent::UpdateRejected {
                                ran_measurement_id: ran_id,
                                cause,
                            })
                        }
                        RanAction::Send(m) => out.send(m),
                        _ => {}
                    }
                }
            }
            Err(v) => out.events.push(GnbEvent::Violation(v)),
        }
    }

    /// Only the allocation period and the beams of an entry may change.
    /// Re-plans the schedulers; on rejection nothing changes.
    fn check_update(
        &mut self,
        old: &[TrpConfigListEntry],
        new: &[TrpConfigListEntry],
        ran_id: MeasurementId,
    ) -> Result<(), CauseDiagnostics> {
        let invalid = |why: String| CauseDiagnostics::new(Cause::InvalidConfig, why);
        if old.len() != new.len() {
            return Err(invalid("an update cannot add or remove TRPs".into()));
        }
        for (o, n) in old.iter().zip(new) {
            let mut normalized = n.clone();
            normalized.resource.period_slots = o.resource.period_slots;
            normalized.beams = o.beams.clone();
            if &normalized != o {
                return Err(invalid(format!(
                    "TRP {}: only the period and the beams can be updated",
                    n.trp_id
                )));
            }
            let site = &self.sites[&o.trp_id];
            if n.beams.len() > site.ru.beams_supported as usize
                || (n.role.receives() && n.beams.is_empty())
            {
                return Err(CauseDiagnostics::new(
                    Cause::UnsupportedMode,
                    "beam count not supported",
                ));
            }
        }
        let mut changed: Vec<&TrpConfigListEntry> = Vec::new();
        for (o, n) in old.iter().zip(new) {
            if o.resource.period_slots == n.resource.period_slots {
                continue;
            }
            let demand = SensingDemand {
                period_slots: n.resource.period_slots,
                symbols: n.resource.burst_symbols,
                subcarriers: n.resource.subcarriers,
            };
            let sched = self.schedulers.get_mut(&n.trp_id).expect("site exists");
            if let Err(c) = sched.admit(ran_id, demand) {
                for p in &changed {
                    let undo = SensingDemand {
                        period_slots: p.resource.period_slots,
                        symbols: p.resource.burst_symbols,
                        subcarriers: p.resource.subcarriers,
                    };
                    self.schedulers
                        .get_mut(&p.trp_id)
                        .expect("site exists")
                        .admit(ran_id, undo)
                        .expect("the previous plan was feasible");
                }
                return Err(c);
            }
            changed.push(o);
        }
        Ok(())
    }

    /// Fault injection: the RU of `trp` stops working.
    pub fn inject_ru_failure(&mut self, trp: TrpId) -> GnbOutput {
        let mut out = GnbOutput::default();
        if !self.failed_trps.insert(trp) {
            return out;
        }
        out.events.push(GnbEvent::RuFailed { trp_id: trp });
        for task in self.tasks.values_mut() {
            if task.fsm.is_sensing() && task.legs.iter().any(|l| l.entry.trp_id == trp) {
                let cause =
                    CauseDiagnostics::new(Cause::RuFailure, format!("RU of TRP {trp} failed"));
                match task.fsm.handle(RanEvent::LocalFailure(cause)) {
                    Ok(actions) => {
                        for a in actions {
                            if let RanAction::Send(m) = a {
                                out.send(m);
                            }
                        }
                    }
                    Err(v) => out.events.push(GnbEvent::Violation(v)),
                }
            }
        }
        self.release_finished(&mut out);
        out
    }

    fn release_finished(&mut self, out: &mut GnbOutput) {
        for (ran_id, task) in self.tasks.iter_mut() {
            if task.released || task.fsm.is_sensing() || task.fsm.phase() == ProcedurePhase::Idle {
                continue;
            }
            task.released = true;
            for leg in &task.legs {
                if let Some(s) = self.schedulers.get_mut(&leg.entry.trp_id) {
                    s.release(*ran_id);
                }
            }
            out.events.push(GnbEvent::Released {
                ran_measurement_id: *ran_id,
                phase: task.fsm.phase(),
            });
        }
    }

    /// Executes the next burst of measurement `ran_id` on every leg.
    ///
    /// `scene0` is the ground truth at its own `time_s`; each leg observes
    /// it advanced to that leg's burst time. Stale wakeups are ignored.
    pub fn execute_burst(
        &mut self,
        ran_id: MeasurementId,
        scene0: &SceneState,
        seed: u64,
    ) -> GnbOutput {
        let mut out = GnbOutput::default();
        let Some(task) = self.tasks.get(&ran_id) else {
            return out;
        };
        if !task.fsm.is_sensing() {
            return out;
        }
        let due = task.start_slot + task.bursts_done * task.report_period_slots;
        let slot_s = self.slot_ms() * 1e-3;
        let slots: Vec<u64> = task
            .legs
            .iter()
            .map(|l| self.leg_slot(l, ran_id, due))
            .collect();
        let mut task = self.tasks.remove(&ran_id).expect("looked up above");
        let mut results = Vec::new();
        let force_reference = std::mem::take(&mut task.force_reference);
        for (leg, slot) in task.legs.iter_mut().zip(slots) {
            let e = &leg.entry;
            let site = &self.sites[&e.trp_id];
            let sched = &self.schedulers[&e.trp_id];
            let span = u64::from(e.resource.burst_symbols.div_ceil(SYMBOLS_PER_SLOT));
            if e.role.transmits() {
                let downlink = (slot..slot + span).all(|s| sched.is_downlink(s));
                self.counters.tx_bursts += 1;
                if !downlink {
                    self.counters.tx_outside_downlink += 1;
                }
                out.events.push(GnbEvent::TxBurst {
                    ran_measurement_id: ran_id,
                    trp_id: e.trp_id,
                    slot,
                    span_slots: span,
                    downlink,
                });
            }
            if !e.role.receives() {
                continue;
            }
            let t = slot as f64 * slot_s;
            let params = RadioParams {
                num_subcarriers: e.resource.subcarriers as usize,
                num_symbols: e.resource.burst_symbols as usize,
                ..self.cfg.radio
            };
            let (n, m) = (params.num_subcarriers, params.num_symbols);
            let rx_pos = site.info.position;
            let (tx_pos, tx_trp) = match &e.bistatic {
                Some(link) => (link.tx_position, link.tx_trp_id),
                None => (rx_pos, e.trp_id),
            };
            let burst_seed = derive_seed(seed, &[ran_id, u64::from(e.trp_id), slot]);
            let x = tx_grid(
                e.resource.signal,
                n,
                m,
                params.grid_meta(),
                tx_trp,
                self.cfg.comm_load,
                force_reference,
                derive_seed(burst_seed, &[u64::from(tx_trp)]),
            );
            let skip = |reason: String, out: &mut GnbOutput| {
                out.events.push(GnbEvent::BurstSkipped {
                    ran_measurement_id: ran_id,
                    trp_id: e.trp_id,
                    slot,
                    reason,
                });
            };
            let reference = match &e.bistatic {
                Some(link) => {
                    let burst_ms = m as f64 / params.subcarrier_spacing_hz * 1e3;
                    match acquire_tx_reference(
                        &link.reference,
                        e.resource.signal,
                        &x,
                        burst_ms,
                        e.wideband_precoding,
                    ) {
                        Ok(ReferenceOutcome::Acquired(g)) => g,
                        Ok(ReferenceOutcome::Skipped { reason }) => {
                            self.counters.skipped_bursts += 1;
                            if e.resource.signal == crate::sep::SignalMode::Opportunistic {
                                task.force_reference = true;
                            }
                            skip(reason, &mut out);
                            continue;
                        }
                        Err(c) => {
                            self.counters.skipped_bursts += 1;
                            skip(c.diagnostics, &mut out);
                            continue;
                        }
                    }
                }
                None => x.clone(),
            };
            let scene_t = if t >= scene0.time_s {
                advance(scene0, t - scene0.time_s)
            } else {
                scene0.clone()
            };
            let bursts: Result<Vec<BeamBurst>, _> = e
                .beams
                .iter()
                .enumerate()
                .map(|(bi, beam)| {
                    synthesize_channel(
                        &scene_t,
                        tx_pos,
                        rx_pos,
                        beam,
                        &params,
                        leg.verdict.si_residual_db,
                        derive_seed(burst_seed, &[bi as u64]),
                    )
                    .map(|h| BeamBurst {
                        beam: *beam,
                        rx: h.hadamard(&x),
                    })
                })
                .collect();
            let bursts = match bursts {
                Ok(b) => b,
                Err(err) => {
                    self.counters.skipped_bursts += 1;
                    skip(err.to_string(), &mut out);
                    continue;
                }
            };
            let geometry = PipelineGeometry { tx_pos, rx_pos };
            let output = match run_pipeline(
                &bursts,
                &TxReference::Grid(reference),
                &e.processing,
                &geometry,
                t,
                Some(&mut leg.tracker),
            ) {
                Ok(o) => o,
                Err(err) => {
                    self.counters.skipped_bursts += 1;
                    skip(err.to_string(), &mut out);
                    continue;
                }
            };
            let paused = if leg.verdict.pauses_comm { span } else { 0 };
            self.counters.pause_overhead_slots += paused;
            self.counters.rx_bursts += 1;
            out.events.push(GnbEvent::RxBurst {
                ran_measurement_id: ran_id,
                trp_id: e.trp_id,
                slot,
                time_s: t,
                paused_comm_slots: paused,
                depth: e.processing.depth,
            });
            if self.dump_periodograms {
                for (bi, p) in output.periodograms.into_iter().enumerate() {
                    out.periodograms.push(PeriodogramDump {
                        ran_measurement_id: ran_id,
                        trp_id: e.trp_id,
                        slot,
                        beam: bi,
                        periodogram: p,
                    });
                }
            }
            results.push(TrpResultListEntry {
                trp_id: e.trp_id,
                timestamp_s: t,
                payload: output.measurement,
            });
        }
        match task.fsm.handle(RanEvent::BurstResult(results)) {
            Ok(actions) => {
                for a in actions {
                    if let RanAction::Send(m) = a {
                        out.send(m);
                    }
                }
            }
            Err(v) => out.events.push(GnbEvent::Violation(v)),
        }
        task.bursts_done += 1;
        if task.fsm.is_sensing() {
            let wake = self.burst_slot(&task, ran_id);
            out.wakeups.push(Wakeup {
                ran_measurement_id: ran_id,
                slot: wake,
            });
        }
        self.tasks.insert(ran_id, task);
        self.release_finished(&mut out);
        out
    }
}
