//! The SeMF actor. API requests become sensing sessions made of one
//! measurement per gNB over the sensing protocol; reports are fused scan
//! by scan, stored, minimized and delivered as notifications.
//!
//! The actor is event driven and owns no clock: every entry point takes the
//! current time and returns the messages, timers and trace events it
//! produced.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use super::area::Polygon;
use super::discovery::DISCOVERY_BACKOFF_MS;
use super::discovery::{
    trp_discover, trp_select, DiscoveryOutcome, RoleAssignment, SessionMode, TrpRegistry,
};
use super::fusion::{
    associate_multistatic, fuse_multimonostatic, monostatic_estimates, FusedObject, RxLeg,
    TrpEstimate, UnlocalizedDetection, DEFAULT_FUSION_GATE_M,
};
use super::spctm::{
    spctm_check, ConsentZone, MinimizationProfile, PolicyRecord, SpctmDecision, SpctmTrigger,
};
use super::spctm::{DenyCause, TransparencyEvent};
use super::world::{
    classify, geomap_fuse, GeoStatic, ResultStore, ResultStoreEntry, ScanResult, SemfTracker,
};
use crate::api::{
    minimize, AbortOrigin, ApiMessage, ApiPhase, ApiSession, SensingResultNotification,
    SensingServiceAbort, SensingServiceFailure, SensingServiceRequest, SensingServiceResponse,
    ServiceFailureCause, SessionId, SessionLink,
};
use crate::l1sens::{
    detect_targets, multi_beam_filter, run_pipeline, BeamBurst, BeamDetections, L1Error,
    PipelineGeometry, ProcessingConfig, ProcessingDepth, SensingMeasurement, TargetPoint2D,
    TargetPoint4D, TrackConfig, TxReference, Window,
};
use crate::scene::{BeamPattern, RadioParams, Vec3};
use crate::sep::{
    BistaticLink, FailureReason, GnbId, MeasurementId, MeasurementTiming, ProcedurePhase,
    ProtocolViolation, ReferenceSource, ResourceConfig, Role, Scheduling, SemfAction, SemfEvent,
    SemfProcedure, SemfTimer, SensingMode, SepMessage, SignalMode, TrpConfigListEntry, TrpId,
    TrpInfo, TrpResultListEntry, DEFAULT_RESPONSE_TIMEOUT_MS,
};
use crate::SPEED_OF_LIGHT;

/// How the SeMF configures the measurements it starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrchestrationConfig {
    /// Processing requested from the RAN; bistatic receivers are capped at
    /// `Targets4D`.
    pub processing: ProcessingConfig,
    /// Receive beams per TRP at most.
    pub max_beams: u32,
    /// Allocation period of every sensing leg, in slots.
    pub period_slots: u32,
    pub signal: SignalMode,
    /// Set by whoever builds the SeMF; not part of a configuration file.
    #[serde(skip)]
    pub reference: ReferenceSource,
    pub scheduling: Scheduling,
    pub fusion_gate_m: f64,
    pub result_ttl_s: f64,
    pub prediction_horizon_s: f64,
    /// Extra wait before the first multistatic burst, on top of two NG-C
    /// round trips.
    pub start_margin_ms: u64,
    /// Report period of a one-shot request run as a single-report
    /// multistatic measurement.
    pub one_shot_report_ms: u64,
    pub response_timeout_ms: u64,
    pub drain_ms: u64,
    pub track: TrackConfig,
}

impl Default for OrchestrationConfig {
    fn default() -> Self {
        Self {
            processing: ProcessingConfig {
                depth: ProcessingDepth::Targets4D,
                window: Window::BlackmanHarris,
                ..ProcessingConfig::default()
            },
            max_beams: 8,
            period_slots: 20,
            signal: SignalMode::PreconfiguredReference,
            reference: ReferenceSource::Preconfigured,
            scheduling: Scheduling::SemiStatic,
            fusion_gate_m: DEFAULT_FUSION_GATE_M,
            result_ttl_s: 10.0,
            prediction_horizon_s: 1.0,
            start_margin_ms: 20,
            one_shot_report_ms: 100,
            response_timeout_ms: DEFAULT_RESPONSE_TIMEOUT_MS,
            drain_ms: DEFAULT_RESPONSE_TIMEOUT_MS,
            track: TrackConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemfConfig {
    /// Every gNB the SeMF may discover.
    pub gnbs: Vec<GnbId>,
    pub radio: RadioParams,
    /// One-way SeMF to gNB latency, used to time multistatic starts.
    pub ngc_latency_ms: f64,
    pub policies: Vec<PolicyRecord>,
    pub consents: Vec<ConsentZone>,
    pub geomap: Vec<GeoStatic>,
    pub orchestration: OrchestrationConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SemfTimerKey {
    Procedure {
        semf_measurement_id: MeasurementId,
        timer: SemfTimer,
    },
    DiscoveryRetry {
        gnb_id: GnbId,
    },
}

/// Trace records of SeMF decisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event")]
pub enum SemfTrace {
    PolicyDecision {
        session_id: SessionId,
        consumer_id: String,
        allowed: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cause: Option<DenyCause>,
        detail: String,
    },
    Transparency(TransparencyEvent),
    StoreHit {
        session_id: SessionId,
        source_session: SessionId,
    },
    Discovery {
        gnb_id: GnbId,
        outcome: String,
    },
    Selected {
        session_id: SessionId,
        mode: SessionMode,
        roles: Vec<(TrpId, Role)>,
    },
    LegStarted {
        session_id: SessionId,
        semf_measurement_id: MeasurementId,
        gnb_id: GnbId,
        trps: Vec<TrpId>,
    },
    LegFailed {
        session_id: SessionId,
        semf_measurement_id: MeasurementId,
        gnb_id: GnbId,
        reason: FailureReason,
    },
    Scan {
        session_id: SessionId,
        index: u64,
        t_s: f64,
        objects: Vec<FusedObject>,
        unlocalized: usize,
        legs: usize,
    },
    ProcessingError {
        session_id: SessionId,
        trp_id: TrpId,
        error: String,
    },
    NotificationDropped {
        session_id: SessionId,
        phase: ApiPhase,
    },
    SessionEnded {
        session_id: SessionId,
        phase: ApiPhase,
    },
    Violation {
        semf_measurement_id: MeasurementId,
        violation: ProtocolViolation,
    },
    UnroutedMessage {
        gnb_id: GnbId,
        msg_type: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SemfOutput {
    pub to_ran: Vec<(GnbId, SepMessage)>,
    /// Messages for a consumer, by consumer id.
    pub to_af: Vec<(String, ApiMessage)>,
    pub timers: Vec<(SemfTimerKey, u64)>,
    pub events: Vec<SemfTrace>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SessionStatus {
    /// Waiting for TRP information.
    Discovering,
    Running,
    Finished,
}

/// One gNB's part of a session.
#[derive(Debug, Clone, PartialEq)]
pub struct Leg {
    pub gnb_id: GnbId,
    pub procedure: SemfProcedure,
    /// Hosts the multistatic transmitter.
    pub tx: bool,
    /// Result lists received so far.
    pub delivered: u64,
    /// Failure already handled.
    pub dropped: bool,
}

impl Leg {
    /// Can still deliver results.
    fn live(&self) -> bool {
        !self.dropped
            && matches!(
                self.procedure.phase(),
                ProcedurePhase::Idle | ProcedurePhase::AwaitingResponse | ProcedurePhase::Active
            )
    }
}

type ScanParts = BTreeMap<MeasurementId, Vec<TrpResultListEntry>>;

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSession {
    pub api: ApiSession,
    pub request: SensingServiceRequest,
    pub profile: MinimizationProfile,
    pub status: SessionStatus,
    pub mode: Option<SessionMode>,
    pub assignments: Vec<RoleAssignment>,
    pub legs: BTreeMap<MeasurementId, Leg>,
    scans: BTreeMap<u64, ScanParts>,
    next_scan: u64,
    tracker: SemfTracker,
}

impl MeasurementSession {
    pub fn session_id(&self) -> SessionId {
        self.api.session_id
    }
}

/// The sensing management function.
#[derive(Debug, Clone)]
pub struct Semf {
    cfg: SemfConfig,
    registry: TrpRegistry,
    store: ResultStore,
    sessions: BTreeMap<SessionId, MeasurementSession>,
    /// Sessions refused before a measurement session existed.
    refused: BTreeMap<SessionId, ApiSession>,
    owner: BTreeMap<MeasurementId, SessionId>,
    next_session: SessionId,
    next_measurement: MeasurementId,
}

fn ceil_ms(s: f64) -> u64 {
    (s * 1e3 - 1e-9).ceil().max(0.0) as u64
}

fn wrap_pi(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(TAU) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}

/// Receive beams of a TRP at `from` covering `area`: up to `max_beams`
/// beams spread evenly over the azimuth extent of the area, each
/// `beamwidth` wide, pointing at the ground-plane centroid's zenith. An
/// area narrower than one beam gets a single beam at its centroid.
pub fn area_beams(from: Vec3, area: &Polygon, beamwidth: f64, max_beams: u32) -> Vec<BeamPattern> {
    let centroid = area.centroid();
    let to_c = centroid - from;
    let zenith = if to_c.norm() > 0.0 {
        to_c.zenith()
    } else {
        PI / 2.0
    };
    let beam = |az: f64| BeamPattern {
        pointing_azimuth_rad: wrap_pi(az),
        pointing_zenith_rad: zenith.clamp(0.0, PI),
        beamwidth_rad: beamwidth,
    };
    let max_beams = max_beams.max(1);
    let (lo, extent) = if area.contains(from) {
        (0.0, TAU)
    } else {
        let az_c = to_c.y.atan2(to_c.x);
        let offs: Vec<f64> = area
            .vertex_azimuths(from)
            .iter()
            .map(|a| wrap_pi(a - az_c))
            .collect();
        let lo = offs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = offs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (az_c + lo, hi - lo)
    };
    if extent < beamwidth || !extent.is_finite() {
        return vec![beam(to_c.y.atan2(to_c.x))];
    }
    let n = ((extent / beamwidth).ceil() as u32).clamp(1, max_beams);
    (0..n)
        .map(|i| beam(lo + (f64::from(i) + 0.5) * extent / f64::from(n)))
        .collect()
}

/// Angle-resolved targets of one receive entry, running the missing stages
/// centrally for shallow payloads. `None` when the payload has no angles.
fn targets_4d(
    entry: &TrpConfigListEntry,
    payload: &SensingMeasurement,
    geometry: &PipelineGeometry,
    t_s: f64,
) -> Result<Option<Vec<TargetPoint4D>>, L1Error> {
    let central = ProcessingConfig {
        depth: ProcessingDepth::Targets4D,
        ..entry.processing.clone()
    };
    match payload {
        SensingMeasurement::ChannelIq(grids) => {
            let bursts: Vec<BeamBurst> = entry
                .beams
                .iter()
                .zip(grids)
                .map(|(b, g)| BeamBurst {
                    beam: *b,
                    rx: g.clone(),
                })
                .collect();
            // The RAN already divided by the TX grid.
            let out = run_pipeline(&bursts, &TxReference::Unit, &central, geometry, t_s, None)?;
            match out.measurement {
                SensingMeasurement::Targets4D(p) => Ok(Some(p)),
                _ => unreachable!("pipeline output matches the requested depth"),
            }
        }
        SensingMeasurement::PeriodogramOut(ps) => {
            let per_beam: Vec<BeamDetections> = entry
                .beams
                .iter()
                .zip(ps)
                .map(|(b, p)| BeamDetections {
                    beam: *b,
                    axes: *p.axes(),
                    targets: detect_targets(p, &central.detect).targets,
                })
                .collect();
            multi_beam_filter(&per_beam).map(Some)
        }
        SensingMeasurement::Targets4D(p) => Ok(Some(p.clone())),
        SensingMeasurement::Targets2D(_) | SensingMeasurement::Objects(_) => Ok(None),
    }
}

impl Semf {
    pub fn new(cfg: SemfConfig) -> Self {
        Self {
            cfg,
            registry: TrpRegistry::default(),
            store: ResultStore::default(),
            sessions: BTreeMap::new(),
            refused: BTreeMap::new(),
            owner: BTreeMap::new(),
            next_session: 1,
            next_measurement: 1,
        }
    }

    pub fn config(&self) -> &SemfConfig {
        &self.cfg
    }

    pub fn registry(&self) -> &TrpRegistry {
        &self.registry
    }

    pub fn store(&self) -> &ResultStore {
        &self.store
    }

    pub fn sessions(&self) -> impl Iterator<Item = &MeasurementSession> {
        self.sessions.values()
    }

    pub fn session(&self, id: SessionId) -> Option<&MeasurementSession> {
        self.sessions.get(&id)
    }

    /// Every API session, refused ones included, by id.
    pub fn api_sessions(&self) -> Vec<&ApiSession> {
        let mut all: Vec<&ApiSession> = self
            .sessions
            .values()
            .map(|s| &s.api)
            .chain(self.refused.values())
            .collect();
        all.sort_by_key(|s| s.session_id);
        all
    }

    /// Handles a message from consumer `consumer`.
    pub fn handle_api(&mut self, consumer: &str, msg: ApiMessage, now_s: f64) -> SemfOutput {
        let mut out = SemfOutput::default();
        match msg {
            ApiMessage::SensingServiceRequest(req) => self.on_request(req, now_s, &mut out),
            ApiMessage::SensingServiceAbort(a) => {
                self.on_consumer_abort(consumer, a.session_id, now_s, &mut out)
            }
            other => out.to_af.push((
                consumer.to_string(),
                ApiMessage::SensingServiceFailure(SensingServiceFailure {
                    session_id: other.session_id(),
                    cause: ServiceFailureCause::InvalidRequest,
                    detail: format!("{} is not a consumer message", other.msg_type()),
                }),
            )),
        }
        out
    }

    fn refuse(
        &mut self,
        mut api: ApiSession,
        cause: ServiceFailureCause,
        detail: String,
        out: &mut SemfOutput,
    ) {
        api.advance(ApiPhase::Failed)
            .expect("requested sessions can fail");
        out.to_af.push((
            api.consumer_id.clone(),
            ApiMessage::SensingServiceFailure(SensingServiceFailure {
                session_id: Some(api.session_id),
                cause,
                detail,
            }),
        ));
        out.events.push(SemfTrace::SessionEnded {
            session_id: api.session_id,
            phase: ApiPhase::Failed,
        });
        self.refused.insert(api.session_id, api);
    }

    fn on_request(&mut self, req: SensingServiceRequest, now_s: f64, out: &mut SemfOutput) {
        let sid = self.next_session;
        self.next_session += 1;
        let api = ApiSession::new(sid, req.consumer_id.clone());
        if let Err(e) = req.quality.validate() {
            out.events.push(SemfTrace::PolicyDecision {
                session_id: sid,
                consumer_id: req.consumer_id.clone(),
                allowed: false,
                cause: Some(DenyCause::InvalidRequest),
                detail: e.clone(),
            });
            return self.refuse(api, ServiceFailureCause::InvalidRequest, e, out);
        }
        let trigger = SpctmTrigger {
            consumer_id: &req.consumer_id,
            area: &req.area,
            purpose: &req.purpose,
            update_period_s: if req.quality.one_shot {
                None
            } else {
                req.quality.update_period_s
            },
        };
        let profile = match spctm_check(&trigger, &self.cfg.policies, &self.cfg.consents) {
            SpctmDecision::Deny { cause, detail } => {
                out.events.push(SemfTrace::PolicyDecision {
                    session_id: sid,
                    consumer_id: req.consumer_id.clone(),
                    allowed: false,
                    cause: Some(cause),
                    detail: detail.clone(),
                });
                return self.refuse(api, cause.into(), detail, out);
            }
            SpctmDecision::Allow { profile } => profile,
        };
        out.events.push(SemfTrace::PolicyDecision {
            session_id: sid,
            consumer_id: req.consumer_id.clone(),
            allowed: true,
            cause: None,
            detail: String::new(),
        });
        out.events.push(SemfTrace::Transparency(TransparencyEvent {
            session_id: sid,
            area: req.area.clone(),
            purpose: req.purpose.clone(),
            t_s: now_s,
        }));
        let mut session = MeasurementSession {
            api,
            request: req,
            profile,
            status: SessionStatus::Discovering,
            mode: None,
            assignments: Vec::new(),
            legs: BTreeMap::new(),
            scans: BTreeMap::new(),
            next_scan: 0,
            tracker: SemfTracker::new(self.cfg.orchestration.track),
        };

        if session.request.quality.one_shot {
            if let Some(max_age) = session.request.max_result_age_s {
                self.store.expire(now_s);
                if let Some(hit) = self.store.serve(&session.request.area, max_age, now_s) {
                    let source = hit.source_session;
                    let results = minimize(
                        &hit.result,
                        &session.profile,
                        &session.request.requested_object_classes,
                    );
                    let t = hit.result.t_s;
                    out.events.push(SemfTrace::StoreHit {
                        session_id: sid,
                        source_session: source,
                    });
                    session.api.link = SessionLink::StoreHit {
                        source_session: source,
                    };
                    let consumer = session.api.consumer_id.clone();
                    session
                        .api
                        .advance(ApiPhase::Active)
                        .expect("fresh session");
                    out.to_af.push((
                        consumer.clone(),
                        ApiMessage::SensingServiceResponse(SensingServiceResponse {
                            session_id: sid,
                        }),
                    ));
                    out.to_af.push((
                        consumer,
                        ApiMessage::SensingResultNotification(SensingResultNotification {
                            session_id: sid,
                            timestamp_s: t,
                            results,
                        }),
                    ));
                    session.api.notifications += 1;
                    session.api.advance(ApiPhase::Done).expect("active session");
                    session.status = SessionStatus::Finished;
                    out.events.push(SemfTrace::SessionEnded {
                        session_id: sid,
                        phase: ApiPhase::Done,
                    });
                    self.sessions.insert(sid, session);
                    return;
                }
            }
        }

        self.sessions.insert(sid, session);
        let gnbs = self.cfg.gnbs.clone();
        for (gnb, msg) in trp_discover(&mut self.registry, &gnbs) {
            out.to_ran.push((gnb, msg));
        }
        if self.registry.settled(&gnbs) {
            self.start_session(sid, now_s, out);
        }
    }

    fn on_consumer_abort(
        &mut self,
        consumer: &str,
        sid: SessionId,
        now_s: f64,
        out: &mut SemfOutput,
    ) {
        let known = self
            .sessions
            .get(&sid)
            .is_some_and(|s| s.api.consumer_id == consumer && !s.api.phase.is_terminal());
        if !known {
            out.to_af.push((
                consumer.to_string(),
                ApiMessage::SensingServiceFailure(SensingServiceFailure {
                    session_id: Some(sid),
                    cause: ServiceFailureCause::UnknownSession,
                    detail: format!("no running session {sid}"),
                }),
            ));
            return;
        }
        let s = self.sessions.get_mut(&sid).expect("checked above");
        s.api
            .advance(ApiPhase::Aborted)
            .expect("non-terminal sessions can abort");
        out.to_af.push((
            consumer.to_string(),
            ApiMessage::SensingServiceAbort(SensingServiceAbort {
                session_id: sid,
                origin: AbortOrigin::Consumer,
            }),
        ));
        out.events.push(SemfTrace::SessionEnded {
            session_id: sid,
            phase: ApiPhase::Aborted,
        });
        if s.status == SessionStatus::Discovering {
            s.status = SessionStatus::Finished;
            return;
        }
        let ids: Vec<MeasurementId> = s
            .legs
            .iter()
            .filter(|(_, l)| !l.procedure.phase().is_terminal())
            .map(|(m, _)| *m)
            .collect();
        for id in ids {
            self.drive(sid, id, SemfEvent::Stop, out);
        }
        self.progress(sid, now_s, out);
    }

    /// Ends every running session from the network side, as at the end of
    /// a simulation run.
    pub fn shutdown(&mut self, now_s: f64) -> SemfOutput {
        let mut out = SemfOutput::default();
        let open: Vec<SessionId> = self
            .sessions
            .values()
            .filter(|s| !s.api.phase.is_terminal())
            .map(|s| s.session_id())
            .collect();
        for sid in open {
            let s = self.sessions.get_mut(&sid).expect("listed above");
            s.api
                .advance(ApiPhase::Aborted)
                .expect("non-terminal sessions can abort");
            out.to_af.push((
                s.api.consumer_id.clone(),
                ApiMessage::SensingServiceAbort(SensingServiceAbort {
                    session_id: sid,
                    origin: AbortOrigin::Network,
                }),
            ));
            out.events.push(SemfTrace::SessionEnded {
                session_id: sid,
                phase: ApiPhase::Aborted,
            });
            if s.status == SessionStatus::Discovering {
                s.status = SessionStatus::Finished;
                continue;
            }
            let ids: Vec<MeasurementId> = s.legs.keys().copied().collect();
            for id in ids {
                if !self.sessions[&sid].legs[&id]
                    .procedure
                    .phase()
                    .is_terminal()
                {
                    self.drive(sid, id, SemfEvent::Stop, &mut out);
                }
            }
            self.progress(sid, now_s, &mut out);
        }
        out
    }

    /// Picks TRPs and starts the measurements of a session whose discovery
    /// has settled.
    fn start_session(&mut self, sid: SessionId, now_s: f64, out: &mut SemfOutput) {
        let s = self.sessions.get_mut(&sid).expect("session exists");
        if s.status != SessionStatus::Discovering || s.api.phase.is_terminal() {
            return;
        }
        let Some(selection) = trp_select(&self.registry, &s.request.area) else {
            s.api
                .advance(ApiPhase::Failed)
                .expect("requested sessions can fail");
            s.status = SessionStatus::Finished;
            out.to_af.push((
                s.api.consumer_id.clone(),
                ApiMessage::SensingServiceFailure(SensingServiceFailure {
                    session_id: Some(sid),
                    cause: ServiceFailureCause::NoCoverage,
                    detail: "no TRP set can sense the requested area".into(),
                }),
            ));
            out.events.push(SemfTrace::SessionEnded {
                session_id: sid,
                phase: ApiPhase::Failed,
            });
            return;
        };
        out.events.push(SemfTrace::Selected {
            session_id: sid,
            mode: selection.mode,
            roles: selection
                .assignments
                .iter()
                .map(|a| (a.trp.trp_id, a.role))
                .collect(),
        });
        s.mode = Some(selection.mode);
        s.assignments = selection.assignments;
        s.api.link = SessionLink::Measurement;
        s.api.advance(ApiPhase::Active).expect("fresh session");
        s.status = SessionStatus::Running;
        out.to_af.push((
            s.api.consumer_id.clone(),
            ApiMessage::SensingServiceResponse(SensingServiceResponse { session_id: sid }),
        ));

        let orch = &self.cfg.orchestration;
        let q = s.request.quality;
        let mode = selection.mode;
        let mut timing = if q.one_shot {
            MeasurementTiming::one_shot()
        } else {
            MeasurementTiming::periodic(
                ceil_ms(q.update_period_s.expect("validated")),
                ceil_ms(q.duration_s.expect("validated")),
            )
        };
        if mode == SessionMode::Multistatic {
            // Joint procedure: the first burst waits until every leg has
            // answered and a possible abort has reached the TX gNB.
            if timing.is_one_shot() {
                timing =
                    MeasurementTiming::periodic(orch.one_shot_report_ms, orch.one_shot_report_ms);
            }
            let ngc = self.cfg.ngc_latency_ms.ceil() as u64;
            timing.start_ms = Some(ceil_ms(now_s) + 4 * ngc + orch.start_margin_ms);
        }
        let resource = ResourceConfig {
            period_slots: orch.period_slots,
            burst_symbols: self.cfg.radio.num_symbols as u32,
            subcarriers: self.cfg.radio.num_subcarriers as u32,
            signal: orch.signal,
        };
        let area = s.request.area.clone();
        let tx: Option<TrpInfo> =
            (mode == SessionMode::Multistatic).then(|| s.assignments[0].trp.clone());
        let mut per_gnb: BTreeMap<GnbId, Vec<TrpConfigListEntry>> = BTreeMap::new();
        for a in &s.assignments {
            let t = &a.trp;
            let beams_max = orch.max_beams.min(t.beam_count.max(1));
            let entry = match (mode, a.role) {
                (SessionMode::MultiMonostatic, _) => TrpConfigListEntry {
                    trp_id: t.trp_id,
                    role: Role::TxRx,
                    mode: SensingMode::Monostatic,
                    resource,
                    processing: orch.processing.clone(),
                    beams: area_beams(t.position, &area, t.beamwidth_rad, beams_max),
                    bistatic: None,
                    wideband_precoding: false,
                },
                (SessionMode::Multistatic, Role::Tx) => TrpConfigListEntry {
                    trp_id: t.trp_id,
                    role: Role::Tx,
                    mode: SensingMode::Bistatic,
                    resource,
                    // A transmitter has nothing to process.
                    processing: ProcessingConfig {
                        depth: ProcessingDepth::ChannelIq,
                        ..orch.processing.clone()
                    },
                    beams: area_beams(t.position, &area, t.beamwidth_rad, 1),
                    bistatic: None,
                    wideband_precoding: false,
                },
                (SessionMode::Multistatic, _) => {
                    let tx = tx.as_ref().expect("multistatic selection has a TX");
                    TrpConfigListEntry {
                        trp_id: t.trp_id,
                        role: Role::Rx,
                        mode: SensingMode::Bistatic,
                        resource,
                        processing: ProcessingConfig {
                            depth: orch.processing.depth.min(ProcessingDepth::Targets4D),
                            ..orch.processing.clone()
                        },
                        beams: area_beams(t.position, &area, t.beamwidth_rad, beams_max),
                        bistatic: Some(BistaticLink {
                            tx_trp_id: tx.trp_id,
                            tx_gnb_id: tx.gnb_id,
                            tx_position: tx.position,
                            reference: orch.reference,
                            scheduling: orch.scheduling,
                        }),
                        wideband_precoding: false,
                    }
                }
            };
            per_gnb.entry(t.gnb_id).or_default().push(entry);
        }
        let tx_gnb = tx.as_ref().map(|t| t.gnb_id);
        let mut started = Vec::new();
        for (gnb, entries) in per_gnb {
            let mid = self.next_measurement;
            self.next_measurement += 1;
            let trps = entries.iter().map(|e| e.trp_id).collect();
            let mut procedure = SemfProcedure::new(mid, entries, timing);
            procedure.response_timeout_ms = orch.response_timeout_ms;
            procedure.drain_ms = orch.drain_ms;
            s.legs.insert(
                mid,
                Leg {
                    gnb_id: gnb,
                    procedure,
                    tx: Some(gnb) == tx_gnb,
                    delivered: 0,
                    dropped: false,
                },
            );
            self.owner.insert(mid, sid);
            out.events.push(SemfTrace::LegStarted {
                session_id: sid,
                semf_measurement_id: mid,
                gnb_id: gnb,
                trps,
            });
            started.push(mid);
        }
        for mid in started {
            self.drive(sid, mid, SemfEvent::Start, out);
        }
        self.progress(sid, now_s, out);
    }

    /// Feeds one event to a leg's procedure and applies the actions.
    fn drive(&mut self, sid: SessionId, mid: MeasurementId, ev: SemfEvent, out: &mut SemfOutput) {
        let s = self.sessions.get_mut(&sid).expect("session exists");
        let leg = s.legs.get_mut(&mid).expect("leg exists");
        let actions = match leg.procedure.handle(ev) {
            Ok(a) => a,
            Err(v) => {
                out.events.push(SemfTrace::Violation {
                    semf_measurement_id: mid,
                    violation: v,
                });
                return;
            }
        };
        for a in actions {
            match a {
                SemfAction::Send(m) => out.to_ran.push((leg.gnb_id, m)),
                SemfAction::ArmTimer { timer, after_ms } => out.timers.push((
                    SemfTimerKey::Procedure {
                        semf_measurement_id: mid,
                        timer,
                    },
                    after_ms,
                )),
                SemfAction::Results(list) => {
                    s.scans.entry(leg.delivered).or_default().insert(mid, list);
                    leg.delivered += 1;
                }
            }
        }
    }

    /// Handles a sensing-protocol message from `gnb`.
    pub fn on_sep(&mut self, gnb: GnbId, msg: SepMessage, now_s: f64) -> SemfOutput {
        let mut out = SemfOutput::default();
        match &msg {
            SepMessage::TrpInformationResponse(_) | SepMessage::TrpInformationFailure(_) => {
                let outcome = self.registry.on_answer(&msg);
                out.events.push(SemfTrace::Discovery {
                    gnb_id: gnb,
                    outcome: format!("{outcome:?}"),
                });
                if outcome == DiscoveryOutcome::RetryLater {
                    out.timers.push((
                        SemfTimerKey::DiscoveryRetry { gnb_id: gnb },
                        DISCOVERY_BACKOFF_MS,
                    ));
                }
                self.resume_discovering(now_s, &mut out);
            }
            _ => {
                let (semf_id, _) = msg.measurement_ids();
                let route = semf_id.and_then(|m| self.owner.get(&m).map(|s| (*s, m)));
                match route {
                    Some((sid, mid)) if self.sessions[&sid].legs[&mid].gnb_id == gnb => {
                        self.drive(sid, mid, SemfEvent::Received(msg), &mut out);
                        self.progress(sid, now_s, &mut out);
                    }
                    _ => out.events.push(SemfTrace::UnroutedMessage {
                        gnb_id: gnb,
                        msg_type: msg.msg_type().into(),
                    }),
                }
            }
        }
        out
    }

    pub fn on_timer(&mut self, key: SemfTimerKey, now_s: f64) -> SemfOutput {
        let mut out = SemfOutput::default();
        match key {
            SemfTimerKey::DiscoveryRetry { gnb_id } => {
                if let Some(m) = self.registry.retry(gnb_id) {
                    out.to_ran.push((gnb_id, m));
                }
                self.resume_discovering(now_s, &mut out);
            }
            SemfTimerKey::Procedure {
                semf_measurement_id,
                timer,
            } => {
                if let Some(&sid) = self.owner.get(&semf_measurement_id) {
                    self.drive(sid, semf_measurement_id, SemfEvent::Timer(timer), &mut out);
                    self.progress(sid, now_s, &mut out);
                }
            }
        }
        out
    }

    fn resume_discovering(&mut self, now_s: f64, out: &mut SemfOutput) {
        if !self.registry.settled(&self.cfg.gnbs) {
            return;
        }
        let waiting: Vec<SessionId> = self
            .sessions
            .values()
            .filter(|s| s.status == SessionStatus::Discovering)
            .map(|s| s.session_id())
            .collect();
        for sid in waiting {
            self.start_session(sid, now_s, out);
        }
    }

    /// Reacts to leg failures, completes scans and ends the session when
    /// no leg is left.
    fn progress(&mut self, sid: SessionId, now_s: f64, out: &mut SemfOutput) {
        let s = self.sessions.get_mut(&sid).expect("session exists");
        if s.status != SessionStatus::Running {
            return;
        }
        let newly_failed: Vec<MeasurementId> = s
            .legs
            .iter()
            .filter(|(_, l)| !l.dropped && l.procedure.phase() == ProcedurePhase::Failed)
            .map(|(m, _)| *m)
            .collect();
        let mut joint_failure = false;
        for mid in newly_failed {
            let leg = s.legs.get_mut(&mid).expect("listed above");
            leg.dropped = true;
            let reason = leg
                .procedure
                .failure()
                .cloned()
                .expect("failed procedures carry a reason");
            if s.mode == Some(SessionMode::Multistatic) && !s.api.phase.is_terminal() {
                // Configuration failures of any leg, and any failure of the
                // TX leg, end the joint procedure.
                let configuring =
                    matches!(reason, FailureReason::Rejected(_) | FailureReason::Timeout);
                joint_failure |= configuring || leg.tx;
            }
            out.events.push(SemfTrace::LegFailed {
                session_id: sid,
                semf_measurement_id: mid,
                gnb_id: leg.gnb_id,
                reason,
            });
        }
        if joint_failure {
            let consumer = s.api.consumer_id.clone();
            s.api.advance(ApiPhase::Failed).expect("active session");
            out.to_af.push((
                consumer,
                ApiMessage::SensingServiceFailure(SensingServiceFailure {
                    session_id: Some(sid),
                    cause: ServiceFailureCause::RanFailure,
                    detail: "multistatic leg failed".into(),
                }),
            ));
            out.events.push(SemfTrace::SessionEnded {
                session_id: sid,
                phase: ApiPhase::Failed,
            });
            let others: Vec<MeasurementId> = s
                .legs
                .iter()
                .filter(|(_, l)| !l.procedure.phase().is_terminal())
                .map(|(m, _)| *m)
                .collect();
            for mid in others {
                self.drive(sid, mid, SemfEvent::Stop, out);
            }
        }

        self.complete_scans(sid, false, out);

        let s = self.sessions.get_mut(&sid).expect("session exists");
        if s.legs.values().all(|l| l.procedure.phase().is_terminal()) {
            self.complete_scans(sid, true, out);
            let s = self.sessions.get_mut(&sid).expect("session exists");
            s.status = SessionStatus::Finished;
            if !s.api.phase.is_terminal() {
                let any_ok = s
                    .legs
                    .values()
                    .any(|l| l.procedure.phase() == ProcedurePhase::Done);
                let phase = if any_ok {
                    ApiPhase::Done
                } else {
                    ApiPhase::Failed
                };
                s.api.advance(phase).expect("active session");
                if phase == ApiPhase::Failed {
                    out.to_af.push((
                        s.api.consumer_id.clone(),
                        ApiMessage::SensingServiceFailure(SensingServiceFailure {
                            session_id: Some(sid),
                            cause: ServiceFailureCause::RanFailure,
                            detail: "every sensing leg failed".into(),
                        }),
                    ));
                }
                out.events.push(SemfTrace::SessionEnded {
                    session_id: sid,
                    phase,
                });
            }
        }
        let _ = now_s;
    }

    /// Fuses and delivers every scan all live legs have reported. With
    /// `flush`, partial scans are processed too.
    fn complete_scans(&mut self, sid: SessionId, flush: bool, out: &mut SemfOutput) {
        loop {
            let s = self.sessions.get_mut(&sid).expect("session exists");
            let Some((&k, _)) = s.scans.range(s.next_scan..).next() else {
                return;
            };
            let waiting = s.legs.values().any(|l| l.live() && l.delivered <= k);
            if waiting && !flush {
                return;
            }
            let parts = s.scans.remove(&k).expect("found above");
            s.next_scan = k + 1;
            if s.api.phase != ApiPhase::Active {
                out.events.push(SemfTrace::NotificationDropped {
                    session_id: sid,
                    phase: s.api.phase,
                });
                continue;
            }
            let scan = self.fuse_scan(sid, k, &parts, out);
            let s = self.sessions.get_mut(&sid).expect("session exists");
            if self.cfg.orchestration.result_ttl_s > 0.0 {
                self.store.store(ResultStoreEntry {
                    area: s.request.area.clone(),
                    produced_at_s: scan.t_s,
                    freshness_ttl_s: self.cfg.orchestration.result_ttl_s,
                    result: scan.clone(),
                    source_session: sid,
                });
            }
            let results = minimize(&scan, &s.profile, &s.request.requested_object_classes);
            out.to_af.push((
                s.api.consumer_id.clone(),
                ApiMessage::SensingResultNotification(SensingResultNotification {
                    session_id: sid,
                    timestamp_s: scan.t_s,
                    results,
                }),
            ));
            s.api.notifications += 1;
        }
    }

    fn fuse_scan(
        &mut self,
        sid: SessionId,
        index: u64,
        parts: &ScanParts,
        out: &mut SemfOutput,
    ) -> ScanResult {
        let s = self.sessions.get_mut(&sid).expect("session exists");
        let orch = &self.cfg.orchestration;
        let trp_info: BTreeMap<TrpId, &TrpInfo> = s
            .assignments
            .iter()
            .map(|a| (a.trp.trp_id, &a.trp))
            .collect();
        let mut t_s: f64 = 0.0;
        let mut unlocalized: Vec<UnlocalizedDetection> = Vec::new();
        let mut estimates: Vec<TrpEstimate> = Vec::new();
        let mut rx_legs: Vec<RxLeg> = Vec::new();
        let tx = (s.mode == Some(SessionMode::Multistatic)).then(|| s.assignments[0].trp.position);
        let mut contributing = 0;
        for (mid, list) in parts {
            let leg = &s.legs[mid];
            contributing += 1;
            for r in list {
                t_s = t_s.max(r.timestamp_s);
                let (Some(info), Some(entry)) = (
                    trp_info.get(&r.trp_id),
                    leg.procedure.config().iter().find(|e| e.trp_id == r.trp_id),
                ) else {
                    continue;
                };
                let tx_pos = tx.unwrap_or(info.position);
                let geometry = PipelineGeometry {
                    tx_pos,
                    rx_pos: info.position,
                };
                if let SensingMeasurement::Objects(_) = &r.payload {
                    estimates.extend(monostatic_estimates(r.trp_id, info.position, &r.payload));
                    continue;
                }
                let points4 = match targets_4d(entry, &r.payload, &geometry, r.timestamp_s) {
                    Ok(p) => p,
                    Err(e) => {
                        out.events.push(SemfTrace::ProcessingError {
                            session_id: sid,
                            trp_id: r.trp_id,
                            error: e.to_string(),
                        });
                        continue;
                    }
                };
                let points2: Vec<TargetPoint2D> = match (&points4, &r.payload) {
                    (Some(p), _) => p.iter().map(|t| t.to_2d()).collect(),
                    (None, SensingMeasurement::Targets2D(p)) => p.clone(),
                    _ => Vec::new(),
                };
                if tx.is_some() {
                    rx_legs.push(RxLeg {
                        rx_trp_id: r.trp_id,
                        rx_position: info.position,
                        points: points2,
                    });
                } else if let Some(p4) = points4 {
                    estimates.extend(monostatic_estimates(
                        r.trp_id,
                        info.position,
                        &SensingMeasurement::Targets4D(p4),
                    ));
                } else {
                    unlocalized.extend(points2.iter().map(|p| UnlocalizedDetection {
                        trp_id: r.trp_id,
                        path_length_m: p.path_length_m,
                        closing_speed_m_per_s: p.closing_speed_m_per_s,
                    }));
                }
            }
        }
        let mut objects = match tx {
            Some(tx_pos) => {
                let range_res = SPEED_OF_LIGHT
                    / (self.cfg.radio.num_subcarriers as f64
                        * self.cfg.radio.subcarrier_spacing_hz);
                // The area centroid at TX height: on the target's side of any
                // vertical mirror plane through the sites. Coplanar sites
                // leave the height unobservable, so it stays at theirs.
                let c = s.request.area.centroid();
                let start = Vec3::new(c.x, c.y, tx_pos.z);
                let m = associate_multistatic(&rx_legs, tx_pos, range_res, Some(start));
                unlocalized.extend(m.unlocalized);
                m.objects
            }
            None => fuse_multimonostatic(&estimates, orch.fusion_gate_m),
        };
        for o in &mut objects {
            o.class = classify(o, &self.cfg.geomap);
        }
        let tracked = s
            .tracker
            .track_predict(&objects, t_s, orch.prediction_horizon_s);
        let mut predicted = Vec::with_capacity(objects.len());
        for (o, t) in objects.iter_mut().zip(&tracked) {
            o.object_id = t.track_id;
            predicted.push(t.predicted_position);
        }
        let geo = geomap_fuse(&self.cfg.geomap, &objects);
        out.events.push(SemfTrace::Scan {
            session_id: sid,
            index,
            t_s,
            objects: objects.clone(),
            unlocalized: unlocalized.len(),
            legs: contributing,
        });
        ScanResult {
            t_s,
            objects,
            annotations: geo.annotations,
            predicted_positions: predicted,
            unconfirmed_statics: geo.unconfirmed_statics,
            unlocalized,
        }
    }

    /// Measurement ids of a session's legs that are not finished yet.
    pub fn open_legs(&self, sid: SessionId) -> BTreeSet<MeasurementId> {
        self.sessions.get(&sid).map_or_else(BTreeSet::new, |s| {
            s.legs
                .iter()
                .filter(|(_, l)| !l.procedure.phase().is_terminal())
                .map(|(m, _)| *m)
                .collect()
        })
    }
}
