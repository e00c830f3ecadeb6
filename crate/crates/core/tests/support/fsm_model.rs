//! Exhaustive exploration of one sensing measurement with the SeMF and RAN
//! procedure machines composed over two FIFO channels.

use std::collections::{BTreeSet, VecDeque};

use isac_core::l1sens::{ProcessingConfig, SensingMeasurement};
use isac_core::sep::{
    Cause, CauseDiagnostics, FailureReason, MeasurementTiming, ProcedurePhase, RanAction, RanEvent,
    RanProcedure, ResourceConfig, Role, SemfAction, SemfEvent, SemfProcedure, SemfTimer,
    SensingMode, SepMessage, SignalMode, TrpConfigListEntry, TrpResultListEntry,
};

pub const SEMF_ID: u64 = 5;
pub const RAN_ID: u64 = 77;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Step {
    SemfStart,
    SemfStop,
    SemfLocalFailure,
    SemfTimer(SemfTimer),
    DeliverToRan { accept: bool },
    DeliverToSemf,
    RanBurst,
    RanLocalFailure,
}

/// How a run of the composed machines ended, as seen by the SeMF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Outcome {
    OneShotDone,
    PeriodicComplete,
    /// SeMF-initiated termination with a Sensing Abort.
    AbortedBySemf,
    /// RAN-initiated termination with a Sensing Failure Indication.
    IndicatedByRan,
    Rejected,
    TimedOut,
    LocalFailure,
    StoppedBeforeStart,
}

#[derive(Debug, Clone)]
pub struct World {
    pub semf: SemfProcedure,
    pub ran: RanProcedure,
    to_ran: VecDeque<SepMessage>,
    to_semf: VecDeque<SepMessage>,
    armed: BTreeSet<SemfTimer>,
    /// Every message put on the wire, in order.
    pub sent_by_semf: Vec<SepMessage>,
    pub sent_by_ran: Vec<SepMessage>,
    /// Result batches handed to the consumer by the SeMF, with the
    /// message that carried them.
    pub delivered: Vec<&'static str>,
    pub trail: Vec<Step>,
}

pub fn entry() -> TrpConfigListEntry {
    TrpConfigListEntry {
        trp_id: 1,
        role: Role::TxRx,
        mode: SensingMode::Monostatic,
        resource: ResourceConfig {
            period_slots: 10,
            burst_symbols: 64,
            subcarriers: 256,
            signal: SignalMode::PreconfiguredReference,
        },
        processing: ProcessingConfig::default(),
        beams: vec![],
        bistatic: None,
        wideband_precoding: false,
    }
}

fn burst() -> Vec<TrpResultListEntry> {
    vec![TrpResultListEntry {
        trp_id: 1,
        timestamp_s: 0.1,
        payload: SensingMeasurement::Targets2D(vec![]),
    }]
}

fn terminal_msg(m: &SepMessage) -> bool {
    matches!(
        m,
        SepMessage::SensingResponse(_) | SepMessage::SensingFailure(_)
    )
}

impl World {
    pub fn new(timing: MeasurementTiming) -> Self {
        Self {
            semf: SemfProcedure::new(SEMF_ID, vec![entry()], timing),
            ran: RanProcedure::new(SEMF_ID),
            to_ran: VecDeque::new(),
            to_semf: VecDeque::new(),
            armed: BTreeSet::new(),
            sent_by_semf: Vec::new(),
            sent_by_ran: Vec::new(),
            delivered: Vec::new(),
            trail: Vec::new(),
        }
    }

    /// Steps a well-behaved SeMF caller and RAN may take now. Peer messages
    /// and timers can race freely; local commands are only issued in phases
    /// where the caller would issue them.
    pub fn enabled(&self) -> Vec<Step> {
        use ProcedurePhase as P;
        let mut v = Vec::new();
        match self.semf.phase() {
            P::Idle => v.extend([Step::SemfStart, Step::SemfStop]),
            P::AwaitingResponse | P::Active => v.extend([Step::SemfStop, Step::SemfLocalFailure]),
            P::Terminating => v.push(Step::SemfStop),
            _ => {}
        }
        v.extend(self.armed.iter().map(|t| Step::SemfTimer(*t)));
        match self.to_ran.front() {
            Some(SepMessage::SensingRequest(_)) => {
                v.push(Step::DeliverToRan { accept: true });
                v.push(Step::DeliverToRan { accept: false });
            }
            Some(_) => v.push(Step::DeliverToRan { accept: true }),
            None => {}
        }
        if !self.to_semf.is_empty() {
            v.push(Step::DeliverToSemf);
        }
        if self.ran.is_sensing() {
            v.extend([Step::RanBurst, Step::RanLocalFailure]);
        }
        v
    }

    fn semf_event(&mut self, ev: SemfEvent) -> Result<(), String> {
        let before = self.semf.phase();
        let was_terminal = before.is_terminal();
        let is_peer_msg = matches!(ev, SemfEvent::Received(_));
        let carrier = match &ev {
            SemfEvent::Received(m) => m.msg_type(),
            _ => "",
        };
        match self.semf.handle(ev) {
            Ok(actions) => {
                if was_terminal && self.semf.phase() != before {
                    return Err(format!("SeMF left terminal phase {before:?}"));
                }
                for a in actions {
                    match a {
                        SemfAction::Send(m) => {
                            if was_terminal {
                                return Err(format!(
                                    "SeMF sent {} from terminal phase",
                                    m.msg_type()
                                ));
                            }
                            self.sent_by_semf.push(m.clone());
                            self.to_ran.push_back(m);
                        }
                        SemfAction::Results(_) => self.delivered.push(carrier),
                        SemfAction::ArmTimer { timer, .. } => {
                            self.armed.insert(timer);
                        }
                    }
                }
                Ok(())
            }
            Err(v) => {
                if self.semf.phase() != before {
                    return Err("rejected SeMF event changed the phase".into());
                }
                // Only a late peer message to a finished SeMF may be refused.
                if !(is_peer_msg && was_terminal) {
                    return Err(format!("unexpected SeMF violation: {v}"));
                }
                Ok(())
            }
        }
    }

    fn ran_event(&mut self, ev: RanEvent) -> Result<(), String> {
        let before = self.ran.phase();
        match self.ran.handle(ev) {
            Ok(actions) => {
                if before.is_terminal() && self.ran.phase() != before {
                    return Err(format!("RAN left terminal phase {before:?}"));
                }
                for a in actions {
                    if let RanAction::Send(m) = a {
                        if before.is_terminal() {
                            return Err(format!("RAN sent {} from terminal phase", m.msg_type()));
                        }
                        self.sent_by_ran.push(m.clone());
                        self.to_semf.push_back(m);
                    }
                }
                Ok(())
            }
            Err(v) => Err(format!("unexpected RAN violation: {v}")),
        }
    }

    pub fn apply(&mut self, step: Step) -> Result<(), String> {
        self.trail.push(step);
        let diag = |c| CauseDiagnostics::new(c, "injected");
        match step {
            Step::SemfStart => self.semf_event(SemfEvent::Start)?,
            Step::SemfStop => self.semf_event(SemfEvent::Stop)?,
            Step::SemfLocalFailure => {
                self.semf_event(SemfEvent::LocalFailure(diag(Cause::SemfSideFailure)))?
            }
            Step::SemfTimer(t) => {
                self.armed.remove(&t);
                self.semf_event(SemfEvent::Timer(t))?
            }
            Step::DeliverToSemf => {
                let m = self.to_semf.pop_front().expect("enabled");
                self.semf_event(SemfEvent::Received(m))?
            }
            Step::DeliverToRan { accept } => match self.to_ran.pop_front().expect("enabled") {
                SepMessage::SensingRequest(request) => self.ran_event(RanEvent::Request {
                    request,
                    verdict: if accept {
                        Ok(())
                    } else {
                        Err(diag(Cause::ResourceUnavailable))
                    },
                    ran_id: RAN_ID,
                })?,
                SepMessage::SensingAbort(a) => self.ran_event(RanEvent::Abort(a))?,
                SepMessage::SensingUpdate(update) => self.ran_event(RanEvent::Update {
                    update,
                    verdict: Ok(()),
                })?,
                m => return Err(format!("SeMF put {} on the wire", m.msg_type())),
            },
            Step::RanBurst => self.ran_event(RanEvent::BurstResult(burst()))?,
            Step::RanLocalFailure => {
                self.ran_event(RanEvent::LocalFailure(diag(Cause::RuFailure)))?
            }
        }
        self.check()
    }

    /// Invariants that must hold after every step.
    pub fn check(&self) -> Result<(), String> {
        let one_shot = self.semf.timing().is_one_shot();
        if self.semf.phase() == ProcedurePhase::Failed && self.semf.failure().is_none() {
            return Err("SeMF failed without a reason".into());
        }
        // SeMF side: exactly one request, first; aborts only with a known RAN id.
        for (i, m) in self.sent_by_semf.iter().enumerate() {
            match m {
                SepMessage::SensingRequest(_) if i == 0 => {}
                SepMessage::SensingAbort(a) if i > 0 => {
                    if a.ran_measurement_id != RAN_ID || a.semf_measurement_id != SEMF_ID {
                        return Err("abort with wrong ids".into());
                    }
                }
                m => return Err(format!("SeMF message {} at position {i}", m.msg_type())),
            }
        }
        let aborts = self
            .sent_by_semf
            .iter()
            .filter(|m| matches!(m, SepMessage::SensingAbort(_)))
            .count();
        if aborts > 1 {
            return Err("more than one abort".into());
        }
        // RAN side: the request is answered exactly once, by Response or
        // Failure, before any report or failure indication.
        let outcomes = self.sent_by_ran.iter().filter(|m| terminal_msg(m)).count();
        if outcomes > 1 {
            return Err("request answered more than once".into());
        }
        if let Some(first) = self.sent_by_ran.first() {
            if !terminal_msg(first) {
                return Err(format!(
                    "{} sent before the request was answered",
                    first.msg_type()
                ));
            }
            if self.sent_by_semf.is_empty() {
                return Err("RAN answered a request that was never sent".into());
            }
        }
        let mut indications = 0;
        for m in &self.sent_by_ran {
            match m {
                SepMessage::SensingFailure(_) if self.sent_by_ran.len() > 1 => {
                    return Err("messages after a Sensing Failure".into())
                }
                SepMessage::SensingResponse(r) if r.trp_result_list.is_some() != one_shot => {
                    return Err("results in the response iff one-shot".into())
                }
                SepMessage::SensingReport(_) if one_shot => {
                    return Err("report on a one-shot measurement".into())
                }
                SepMessage::SensingFailureIndication(_) => indications += 1,
                _ => {}
            }
        }
        if indications > 1 {
            return Err("failure indicated more than once".into());
        }
        if indications == 1
            && !matches!(
                self.sent_by_ran.last(),
                Some(SepMessage::SensingFailureIndication(_))
            )
        {
            return Err("messages after a failure indication".into());
        }
        if one_shot && self.delivered.iter().any(|c| *c != "SensingResponse") {
            return Err("one-shot results delivered outside the response".into());
        }
        Ok(())
    }

    pub fn outcome(&self) -> Option<Outcome> {
        let phase = self.semf.phase();
        if !phase.is_terminal() {
            return None;
        }
        let aborted = self
            .sent_by_semf
            .iter()
            .any(|m| matches!(m, SepMessage::SensingAbort(_)));
        Some(match self.semf.failure() {
            Some(FailureReason::Rejected(_)) => Outcome::Rejected,
            Some(FailureReason::Indicated(_)) => Outcome::IndicatedByRan,
            Some(FailureReason::Timeout) => Outcome::TimedOut,
            Some(FailureReason::Local(_)) => Outcome::LocalFailure,
            None if self.sent_by_semf.is_empty() => Outcome::StoppedBeforeStart,
            None if aborted => Outcome::AbortedBySemf,
            None if self.semf.timing().is_one_shot() => Outcome::OneShotDone,
            None => Outcome::PeriodicComplete,
        })
    }

    /// Request/outcome pairs observed on the wire.
    pub fn pairings(&self) -> Vec<(&'static str, &'static str)> {
        match (
            self.sent_by_semf.first(),
            self.sent_by_ran.iter().find(|m| terminal_msg(m)),
        ) {
            (Some(req), Some(out)) => vec![(req.msg_type(), out.msg_type())],
            _ => vec![],
        }
    }
}

#[derive(Debug, Default)]
pub struct Exploration {
    pub states: u64,
    pub outcomes: BTreeSet<Outcome>,
    pub pairings: BTreeSet<(&'static str, &'static str)>,
    pub failures: Vec<String>,
}

/// Depth-first enumeration of every interleaving of enabled steps up to `depth`.
pub fn explore(timing: MeasurementTiming, depth: usize) -> Exploration {
    let mut ex = Exploration::default();
    fn go(w: World, depth: usize, ex: &mut Exploration) {
        ex.states += 1;
        if let Some(o) = w.outcome() {
            ex.outcomes.insert(o);
        }
        ex.pairings.extend(w.pairings());
        if depth == 0 {
            return;
        }
        for step in w.enabled() {
            let mut next = w.clone();
            match next.apply(step) {
                Ok(()) => go(next, depth - 1, ex),
                Err(e) => {
                    if ex.failures.len() < 10 {
                        ex.failures.push(format!("{e} after {:?}", next.trail));
                    }
                }
            }
        }
    }
    go(World::new(timing), depth, &mut ex);
    ex
}
