//! Per-measurement procedure state machines for both protocol ends.
//!
//! Each machine is a plain value driven by [`SemfProcedure::handle`] or
//! [`RanProcedure::handle`]. An event that is illegal in the current phase
//! returns a [`ProtocolViolation`], is appended to the machine's violation
//! log and leaves the phase unchanged. Timer events that arrive after the
//! phase they guard has been left are stale and ignored.

use serde::{Deserialize, Serialize};

use super::{
    Cause, CauseDiagnostics, MeasurementId, MeasurementTiming, SensingAbort, SensingFailure,
    SensingFailureIndication, SensingReport, SensingRequest, SensingResponse, SensingUpdate,
    SepMessage, TrpConfigListEntry, TrpResultListEntry,
};

/// Default wait for a response to a request, in simulated ms.
pub const DEFAULT_RESPONSE_TIMEOUT_MS: u64 = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProcedurePhase {
    Idle,
    AwaitingResponse,
    Active,
    Terminating,
    Done,
    Failed,
}

impl ProcedurePhase {
    pub fn is_terminal(self) -> bool {
        matches!(self, ProcedurePhase::Done | ProcedurePhase::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureReason {
    /// The peer answered the request with a failure.
    Rejected(CauseDiagnostics),
    /// The peer terminated a running measurement.
    Indicated(CauseDiagnostics),
    /// No answer within the response timeout.
    Timeout,
    /// A failure on this side.
    Local(CauseDiagnostics),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("protocol violation in {phase:?} on {event}: {reason}")]
pub struct ProtocolViolation {
    pub phase: ProcedurePhase,
    pub event: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SemfTimer {
    /// Guards the answer to a request.
    Response,
    /// Configured measurement duration, counted by the caller from the
    /// first burst.
    Duration,
    /// Grace period after an abort during which late messages are absorbed.
    Drain,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SemfEvent {
    /// Send the request.
    Start,
    /// Stop the measurement.
    Stop,
    /// Change the configuration of an active measurement.
    Update(Vec<TrpConfigListEntry>),
    /// A failure on the SeMF side that ends the measurement.
    LocalFailure(CauseDiagnostics),
    Received(SepMessage),
    Timer(SemfTimer),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SemfAction {
    Send(SepMessage),
    /// Measurement results for the consumer.
    Results(Vec<TrpResultListEntry>),
    ArmTimer {
        timer: SemfTimer,
        after_ms: u64,
    },
}

fn event_name_semf(ev: &SemfEvent) -> String {
    match ev {
        SemfEvent::Start => "Start".into(),
        SemfEvent::Stop => "Stop".into(),
        SemfEvent::Update(_) => "Update".into(),
        SemfEvent::LocalFailure(_) => "LocalFailure".into(),
        SemfEvent::Received(m) => m.msg_type().into(),
        SemfEvent::Timer(t) => format!("Timer({t:?})"),
    }
}

/// The SeMF end of one sensing measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct SemfProcedure {
    semf_id: MeasurementId,
    ran_id: Option<MeasurementId>,
    config: Vec<TrpConfigListEntry>,
    timing: MeasurementTiming,
    phase: ProcedurePhase,
    failure: Option<FailureReason>,
    reports: u64,
    /// Stop arrived before the response: abort once the RAN id is known.
    abort_pending: bool,
    pub response_timeout_ms: u64,
    pub drain_ms: u64,
    violations: Vec<ProtocolViolation>,
}

impl SemfProcedure {
    pub fn new(
        semf_id: MeasurementId,
        config: Vec<TrpConfigListEntry>,
        timing: MeasurementTiming,
    ) -> Self {
        Self {
            semf_id,
            ran_id: None,
            config,
            timing,
            phase: ProcedurePhase::Idle,
            failure: None,
            reports: 0,
            abort_pending: false,
            response_timeout_ms: DEFAULT_RESPONSE_TIMEOUT_MS,
            drain_ms: DEFAULT_RESPONSE_TIMEOUT_MS,
            violations: Vec::new(),
        }
    }

    pub fn phase(&self) -> ProcedurePhase {
        self.phase
    }

    pub fn semf_id(&self) -> MeasurementId {
        self.semf_id
    }

    pub fn ran_id(&self) -> Option<MeasurementId> {
        self.ran_id
    }

    pub fn timing(&self) -> &MeasurementTiming {
        &self.timing
    }

    pub fn config(&self) -> &[TrpConfigListEntry] {
        &self.config
    }

    pub fn failure(&self) -> Option<&FailureReason> {
        self.failure.as_ref()
    }

    pub fn reports_received(&self) -> u64 {
        self.reports
    }

    pub fn violations(&self) -> &[ProtocolViolation] {
        &self.violations
    }

    fn violation(&mut self, ev: &SemfEvent, reason: impl Into<String>) -> ProtocolViolation {
        let v = ProtocolViolation {
            phase: self.phase,
            event: event_name_semf(ev),
            reason: reason.into(),
        };
        log::debug!("semf measurement {}: {v}", self.semf_id);
        self.violations.push(v.clone());
        v
    }

    fn abort(&self, ran_id: MeasurementId, cause: Option<CauseDiagnostics>) -> SemfAction {
        SemfAction::Send(SepMessage::SensingAbort(SensingAbort {
            semf_measurement_id: self.semf_id,
            ran_measurement_id: ran_id,
            cause,
        }))
    }

    fn ids_match(&self, semf: MeasurementId, ran: MeasurementId) -> bool {
        semf == self.semf_id && Some(ran) == self.ran_id
    }

    fn enter_terminating(&mut self) -> SemfAction {
        self.phase = ProcedurePhase::Terminating;
        SemfAction::ArmTimer {
            timer: SemfTimer::Drain,
            after_ms: self.drain_ms,
        }
    }

    pub fn handle(&mut self, ev: SemfEvent) -> Result<Vec<SemfAction>, ProtocolViolation> {
        use ProcedurePhase as P;
        let mut out = Vec::new();
        match (self.phase, &ev) {
            (_, SemfEvent::Timer(t)) => match (self.phase, t) {
                (P::AwaitingResponse, SemfTimer::Response) => {
                    self.phase = P::Failed;
                    self.failure = Some(FailureReason::Timeout);
                }
                (P::Terminating, SemfTimer::Response) if self.abort_pending => {
                    self.phase = P::Done;
                }
                (P::Active, SemfTimer::Duration) => self.phase = P::Done,
                (P::Terminating, SemfTimer::Drain) => self.phase = P::Done,
                _ => {}
            },
            (P::Idle, SemfEvent::Start) => {
                out.push(SemfAction::Send(SepMessage::SensingRequest(
                    SensingRequest {
                        semf_measurement_id: self.semf_id,
                        trp_config_list: self.config.clone(),
                        measurement_timing: self.timing,
                    },
                )));
                out.push(SemfAction::ArmTimer {
                    timer: SemfTimer::Response,
                    after_ms: self.response_timeout_ms,
                });
                self.phase = P::AwaitingResponse;
            }
            (P::Idle, SemfEvent::Stop) => self.phase = P::Done,
            (P::AwaitingResponse, SemfEvent::Stop) => {
                self.abort_pending = true;
                self.phase = P::Terminating;
            }
            (P::AwaitingResponse, SemfEvent::LocalFailure(c)) => {
                self.abort_pending = true;
                self.failure = Some(FailureReason::Local(c.clone()));
                self.phase = P::Terminating;
            }
            (P::AwaitingResponse, SemfEvent::Received(SepMessage::SensingResponse(r)))
                if r.semf_measurement_id == self.semf_id =>
            {
                self.ran_id = Some(r.ran_measurement_id);
                if self.timing.is_one_shot() {
                    let Some(results) = &r.trp_result_list else {
                        return Err(self.violation(&ev, "one-shot response without results"));
                    };
                    out.push(SemfAction::Results(results.clone()));
                    self.phase = P::Done;
                } else {
                    if r.trp_result_list.is_some() {
                        return Err(self.violation(&ev, "periodic response carries results"));
                    }
                    if let MeasurementTiming {
                        mode: super::TimingMode::Periodic { duration_ms, .. },
                        ..
                    } = self.timing
                    {
                        out.push(SemfAction::ArmTimer {
                            timer: SemfTimer::Duration,
                            after_ms: duration_ms + self.drain_ms,
                        });
                    }
                    self.phase = P::Active;
                }
            }
            (P::AwaitingResponse, SemfEvent::Received(SepMessage::SensingFailure(f)))
                if f.semf_measurement_id == self.semf_id =>
            {
                self.failure = Some(FailureReason::Rejected(f.cause.clone()));
                self.phase = P::Failed;
            }
            (P::Active, SemfEvent::Received(SepMessage::SensingReport(r))) => {
                if !self.ids_match(r.semf_measurement_id, r.ran_measurement_id) {
                    return Err(self.violation(&ev, "report ids do not match the measurement"));
                }
                self.reports += 1;
                out.push(SemfAction::Results(r.trp_result_list.clone()));
                if self.reports >= self.timing.expected_reports() {
                    self.phase = P::Done;
                }
            }
            (P::Active, SemfEvent::Received(SepMessage::SensingFailureIndication(f))) => {
                if !self.ids_match(f.semf_measurement_id, f.ran_measurement_id) {
                    return Err(
                        self.violation(&ev, "failure indication ids do not match the measurement")
                    );
                }
                self.failure = Some(FailureReason::Indicated(f.cause.clone()));
                self.phase = P::Failed;
            }
            (P::Active, SemfEvent::Stop) => {
                let ran = self.ran_id.expect("active measurement has a RAN id");
                out.push(self.abort(ran, None));
                out.push(self.enter_terminating());
            }
            (P::Active, SemfEvent::LocalFailure(c)) => {
                let ran = self.ran_id.expect("active measurement has a RAN id");
                self.failure = Some(FailureReason::Local(c.clone()));
                out.push(self.abort(
                    ran,
                    Some(CauseDiagnostics::new(
                        Cause::SemfSideFailure,
                        c.diagnostics.clone(),
                    )),
                ));
                out.push(self.enter_terminating());
            }
            (P::Active, SemfEvent::Update(list)) => {
                let ran = self.ran_id.expect("active measurement has a RAN id");
                self.config = list.clone();
                out.push(SemfAction::Send(SepMessage::SensingUpdate(SensingUpdate {
                    semf_measurement_id: self.semf_id,
                    ran_measurement_id: ran,
                    trp_config_list: list.clone(),
                })));
            }
            (P::Terminating, SemfEvent::Stop) => {}
            (P::Terminating, SemfEvent::Received(msg)) => {
                let (semf, ran) = msg.measurement_ids();
                if semf != Some(self.semf_id) {
                    return Err(self.violation(&ev, "message for another measurement"));
                }
                match msg {
                    SepMessage::SensingResponse(r) if self.abort_pending => {
                        self.abort_pending = false;
                        self.ran_id = Some(r.ran_measurement_id);
                        if self.timing.is_one_shot() {
                            self.phase = P::Done;
                        } else {
                            let cause = match &self.failure {
                                Some(FailureReason::Local(c)) => Some(CauseDiagnostics::new(
                                    Cause::SemfSideFailure,
                                    c.diagnostics.clone(),
                                )),
                                _ => None,
                            };
                            out.push(self.abort(r.ran_measurement_id, cause));
                            out.push(self.enter_terminating());
                        }
                    }
                    SepMessage::SensingFailure(_) if self.abort_pending => {
                        self.abort_pending = false;
                        self.phase = P::Done;
                    }
                    SepMessage::SensingReport(_) | SepMessage::SensingFailureIndication(_)
                        if !self.abort_pending && ran == self.ran_id => {}
                    _ => return Err(self.violation(&ev, "unexpected message while terminating")),
                }
            }
            _ => return Err(self.violation(&ev, "event not allowed in this phase")),
        }
        if self.phase == P::Failed && self.failure.is_none() {
            unreachable!("failed without a reason");
        }
        if self.phase.is_terminal() && matches!(self.failure, Some(FailureReason::Local(_))) {
            self.phase = P::Failed;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RanEvent {
    /// A request together with the gNB's admission verdict and the RAN id
    /// it would allocate.
    Request {
        request: SensingRequest,
        verdict: Result<(), CauseDiagnostics>,
        ran_id: MeasurementId,
    },
    /// Results of one executed burst (one report period).
    BurstResult(Vec<TrpResultListEntry>),
    /// An update with the gNB's verdict on it.
    Update {
        update: SensingUpdate,
        verdict: Result<(), CauseDiagnostics>,
    },
    Abort(SensingAbort),
    /// RAN-side failure such as an RU fault.
    LocalFailure(CauseDiagnostics),
}

#[derive(Debug, Clone, PartialEq)]
pub enum RanAction {
    Send(SepMessage),
    /// Begin executing bursts for the accepted configuration.
    StartBursts,
    StopBursts,
    ApplyUpdate(Vec<TrpConfigListEntry>),
    UpdateRejected(CauseDiagnostics),
}

fn event_name_ran(ev: &RanEvent) -> String {
    match ev {
        RanEvent::Request { .. } => "SensingRequest".into(),
        RanEvent::BurstResult(_) => "BurstResult".into(),
        RanEvent::Update { .. } => "SensingUpdate".into(),
        RanEvent::Abort(_) => "SensingAbort".into(),
        RanEvent::LocalFailure(_) => "LocalFailure".into(),
    }
}

/// The RAN end of one sensing measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct RanProcedure {
    semf_id: MeasurementId,
    ran_id: Option<MeasurementId>,
    config: Vec<TrpConfigListEntry>,
    timing: MeasurementTiming,
    phase: ProcedurePhase,
    failure: Option<FailureReason>,
    reports: u64,
    violations: Vec<ProtocolViolation>,
}

impl RanProcedure {
    pub fn new(semf_id: MeasurementId) -> Self {
        Self {
            semf_id,
            ran_id: None,
            config: Vec::new(),
            timing: MeasurementTiming::one_shot(),
            phase: ProcedurePhase::Idle,
            failure: None,
            reports: 0,
            violations: Vec::new(),
        }
    }

    pub fn phase(&self) -> ProcedurePhase {
        self.phase
    }

    pub fn semf_id(&self) -> MeasurementId {
        self.semf_id
    }

    pub fn ran_id(&self) -> Option<MeasurementId> {
        self.ran_id
    }

    pub fn config(&self) -> &[TrpConfigListEntry] {
        &self.config
    }

    pub fn timing(&self) -> &MeasurementTiming {
        &self.timing
    }

    pub fn failure(&self) -> Option<&FailureReason> {
        self.failure.as_ref()
    }

    pub fn reports_sent(&self) -> u64 {
        self.reports
    }

    pub fn violations(&self) -> &[ProtocolViolation] {
        &self.violations
    }

    /// Whether bursts should be executed for this measurement.
    pub fn is_sensing(&self) -> bool {
        matches!(
            self.phase,
            ProcedurePhase::AwaitingResponse | ProcedurePhase::Active
        )
    }

    fn violation(&mut self, ev: &RanEvent, reason: impl Into<String>) -> ProtocolViolation {
        let v = ProtocolViolation {
            phase: self.phase,
            event: event_name_ran(ev),
            reason: reason.into(),
        };
        log::debug!("ran measurement {:?}: {v}", self.ran_id);
        self.violations.push(v.clone());
        v
    }

    pub fn handle(&mut self, ev: RanEvent) -> Result<Vec<RanAction>, ProtocolViolation> {
        use ProcedurePhase as P;
        let mut out = Vec::new();
        match (self.phase, &ev) {
            (
                P::Idle,
                RanEvent::Request {
                    request,
                    verdict,
                    ran_id,
                },
            ) => {
                if request.semf_measurement_id != self.semf_id {
                    return Err(self.violation(&ev, "request for another measurement"));
                }
                match verdict {
                    Err(cause) => {
                        out.push(RanAction::Send(SepMessage::SensingFailure(
                            SensingFailure {
                                semf_measurement_id: self.semf_id,
                                cause: cause.clone(),
                            },
                        )));
                        self.failure = Some(FailureReason::Local(cause.clone()));
                        self.phase = P::Failed;
                    }
                    Ok(()) => {
                        self.ran_id = Some(*ran_id);
                        self.config = request.trp_config_list.clone();
                        self.timing = request.measurement_timing;
                        out.push(RanAction::StartBursts);
                        if self.timing.is_one_shot() {
                            self.phase = P::AwaitingResponse;
                        } else {
                            out.push(RanAction::Send(SepMessage::SensingResponse(
                                SensingResponse {
                                    semf_measurement_id: self.semf_id,
                                    ran_measurement_id: *ran_id,
                                    trp_result_list: None,
                                },
                            )));
                            self.phase = P::Active;
                        }
                    }
                }
            }
            (P::AwaitingResponse, RanEvent::BurstResult(results)) => {
                out.push(RanAction::StopBursts);
                out.push(RanAction::Send(SepMessage::SensingResponse(
                    SensingResponse {
                        semf_measurement_id: self.semf_id,
                        ran_measurement_id: self.ran_id.expect("accepted measurement has a RAN id"),
                        trp_result_list: Some(results.clone()),
                    },
                )));
                self.phase = P::Done;
            }
            (P::AwaitingResponse, RanEvent::LocalFailure(cause)) => {
                // The request is still unanswered, so it is answered with a failure.
                out.push(RanAction::StopBursts);
                out.push(RanAction::Send(SepMessage::SensingFailure(
                    SensingFailure {
                        semf_measurement_id: self.semf_id,
                        cause: cause.clone(),
                    },
                )));
                self.failure = Some(FailureReason::Local(cause.clone()));
                self.phase = P::Failed;
            }
            (P::Active, RanEvent::BurstResult(results)) => {
                self.reports += 1;
                out.push(RanAction::Send(SepMessage::SensingReport(SensingReport {
                    semf_measurement_id: self.semf_id,
                    ran_measurement_id: self.ran_id.expect("active measurement has a RAN id"),
                    trp_result_list: results.clone(),
                })));
                if self.reports >= self.timing.expected_reports() {
                    out.push(RanAction::StopBursts);
                    self.phase = P::Done;
                }
            }
            (P::Active, RanEvent::LocalFailure(cause)) => {
                out.push(RanAction::StopBursts);
                out.push(RanAction::Send(SepMessage::SensingFailureIndication(
                    SensingFailureIndication {
                        semf_measurement_id: self.semf_id,
                        ran_measurement_id: self.ran_id.expect("active measurement has a RAN id"),
                        cause: cause.clone(),
                    },
                )));
                self.failure = Some(FailureReason::Local(cause.clone()));
                self.phase = P::Failed;
            }
            (P::Active, RanEvent::Update { update, verdict }) => {
                if update.semf_measurement_id != self.semf_id
                    || Some(update.ran_measurement_id) != self.ran_id
                {
                    return Err(self.violation(&ev, "update ids do not match the measurement"));
                }
                match verdict {
                    Ok(()) => {
                        self.config = update.trp_config_list.clone();
                        out.push(RanAction::ApplyUpdate(update.trp_config_list.clone()));
                    }
                    Err(cause) => out.push(RanAction::UpdateRejected(cause.clone())),
                }
            }
            (_, RanEvent::Abort(a)) => {
                let known = self.ran_id.is_some();
                if !known
                    || a.semf_measurement_id != self.semf_id
                    || Some(a.ran_measurement_id) != self.ran_id
                {
                    return Err(self.violation(&ev, "abort for unknown measurement ids"));
                }
                match self.phase {
                    P::Active | P::AwaitingResponse => {
                        out.push(RanAction::StopBursts);
                        self.phase = P::Done;
                    }
                    // Aborts are unconfirmed, so a repeated or late one is harmless.
                    _ => {}
                }
            }
            // Bursts or faults racing the end of the measurement.
            (P::Done | P::Failed, RanEvent::BurstResult(_) | RanEvent::LocalFailure(_)) => {}
            (P::Done | P::Failed, RanEvent::Update { .. }) => {}
            _ => return Err(self.violation(&ev, "event not allowed in this phase")),
        }
        Ok(out)
    }
}
