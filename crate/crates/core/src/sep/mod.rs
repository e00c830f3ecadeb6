//! The sensing protocol between the core sensing function and the RAN:
//! message model, framed canonical encoding, and per-measurement procedure
//! state machines for both ends.

pub(crate) mod codec;
mod fsm;
mod transport;
mod trp_info;

use serde::{Deserialize, Serialize};

pub use codec::{decode, decode_prefix, encode, DecodeError, EncodeError, MAX_FRAME_LEN};
pub use fsm::{
    FailureReason, ProcedurePhase, ProtocolViolation, RanAction, RanEvent, RanProcedure,
    SemfAction, SemfEvent, SemfProcedure, SemfTimer, DEFAULT_RESPONSE_TIMEOUT_MS,
};
pub use transport::{read_frame, write_frame, FramedReader};
pub use trp_info::{trp_information_procedure, TrpRegistrySide};

use crate::l1sens::{ProcessingConfig, ProcessingDepth, SensingMeasurement};
use crate::scene::{BeamPattern, Vec3};

pub type TrpId = u32;
pub type GnbId = u32;
pub type MeasurementId = u64;

/// Duplex behavior of the radio unit behind a TRP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Duplex {
    Tdd,
    Fdd,
    /// Receive-only unit.
    Sniffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Tx,
    Rx,
    TxRx,
}

impl Role {
    pub fn transmits(self) -> bool {
        matches!(self, Role::Tx | Role::TxRx)
    }

    pub fn receives(self) -> bool {
        matches!(self, Role::Rx | Role::TxRx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SensingMode {
    Monostatic,
    Bistatic,
}

/// Which signal the sensing TX puts on the allocated resources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SignalMode {
    /// A known reference sequence defined entirely by the configuration.
    PreconfiguredReference,
    /// Communication payload symbols reused as the sensing signal.
    ReuseCommunication,
    /// Communication reused when present, reference inserted otherwise.
    Opportunistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceConfig {
    pub period_slots: u32,
    pub burst_symbols: u32,
    pub subcarriers: u32,
    pub signal: SignalMode,
}

/// How a bistatic receiver obtains the transmitted grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub enum ReferenceSource {
    #[default]
    Preconfigured,
    Backhaul {
        latency_ms: f64,
        buffer_ms: f64,
    },
    OverTheAir {
        sinr_db: f64,
        mcs_threshold_db: f64,
    },
}

/// When the TX and RX gNBs agree on the burst timing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Scheduling {
    /// The SeMF distributes the allocation to every gNB up front.
    SemiStatic,
    /// The TX gNB schedules and informs RX gNBs `lead_time_ms` ahead.
    Dynamic { lead_time_ms: f64 },
}

/// Extra configuration of a bistatic receive leg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BistaticLink {
    pub tx_trp_id: TrpId,
    pub tx_gnb_id: GnbId,
    pub tx_position: Vec3,
    pub reference: ReferenceSource,
    pub scheduling: Scheduling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrpConfigListEntry {
    pub trp_id: TrpId,
    pub role: Role,
    pub mode: SensingMode,
    pub resource: ResourceConfig,
    pub processing: ProcessingConfig,
    pub beams: Vec<BeamPattern>,
    /// Present on bistatic RX entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bistatic: Option<BistaticLink>,
    /// Whether the transmitter of this burst precodes wideband, which an
    /// over-the-air reference needs. On RX entries it describes the remote TX.
    #[serde(default)]
    pub wideband_precoding: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimingMode {
    OneShot,
    Periodic {
        report_period_ms: u64,
        duration_ms: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementTiming {
    pub mode: TimingMode,
    /// Simulated time of the first burst, in ms. Absent: as soon as possible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_ms: Option<u64>,
}

impl MeasurementTiming {
    pub fn one_shot() -> Self {
        Self {
            mode: TimingMode::OneShot,
            start_ms: None,
        }
    }

    pub fn periodic(report_period_ms: u64, duration_ms: u64) -> Self {
        Self {
            mode: TimingMode::Periodic {
                report_period_ms,
                duration_ms,
            },
            start_ms: None,
        }
    }

    pub fn is_one_shot(&self) -> bool {
        matches!(self.mode, TimingMode::OneShot)
    }

    /// Number of reports a periodic measurement delivers.
    pub fn expected_reports(&self) -> u64 {
        match self.mode {
            TimingMode::OneShot => 0,
            TimingMode::Periodic {
                report_period_ms,
                duration_ms,
            } => duration_ms / report_period_ms.max(1),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.mode {
            TimingMode::OneShot => Ok(()),
            TimingMode::Periodic {
                report_period_ms,
                duration_ms,
            } => {
                if report_period_ms == 0 {
                    Err("report period must be positive".into())
                } else if duration_ms < report_period_ms {
                    Err("duration shorter than one report period".into())
                } else {
                    Ok(())
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrpResultListEntry {
    pub trp_id: TrpId,
    pub timestamp_s: f64,
    pub payload: SensingMeasurement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Cause {
    UnknownTrp,
    UnsupportedMode,
    ResourceUnavailable,
    BackhaulTooSlow,
    BufferOverflow,
    HandshakeTimeout,
    RuFailure,
    UnknownMeasurementId,
    DuplicateMeasurementId,
    InvalidConfig,
    SemfSideFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CauseDiagnostics {
    pub cause: Cause,
    pub diagnostics: String,
}

impl CauseDiagnostics {
    pub fn new(cause: Cause, diagnostics: impl Into<String>) -> Self {
        Self {
            cause,
            diagnostics: diagnostics.into(),
        }
    }
}

/// Capabilities of one TRP as reported by its gNB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrpInfo {
    pub trp_id: TrpId,
    pub gnb_id: GnbId,
    pub position: Vec3,
    pub duplex: Duplex,
    pub roles: Vec<Role>,
    pub beam_count: u32,
    pub beamwidth_rad: f64,
    pub max_bandwidth_hz: f64,
    /// Isolation + analog + digital self-interference suppression.
    pub sic_total_db: f64,
    pub coverage_radius_m: f64,
    /// Legacy RU without self-interference cancellation.
    #[serde(default)]
    pub legacy: bool,
    #[serde(default)]
    pub can_pause_comm: bool,
}

impl TrpInfo {
    pub fn supports(&self, role: Role) -> bool {
        self.roles.contains(&role) || (role != Role::TxRx && self.roles.contains(&Role::TxRx))
    }
}

// Message bodies. Field order is irrelevant on the wire (keys are sorted).

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrpInformationRequest {
    pub gnb_id: GnbId,
    /// Restrict the answer to these TRPs; absent means all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trp_filter: Option<Vec<TrpId>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrpInformationResponse {
    pub gnb_id: GnbId,
    pub trp_info_list: Vec<TrpInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrpInformationFailure {
    pub gnb_id: GnbId,
    pub cause: CauseDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingRequest {
    pub semf_measurement_id: MeasurementId,
    pub trp_config_list: Vec<TrpConfigListEntry>,
    pub measurement_timing: MeasurementTiming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingResponse {
    pub semf_measurement_id: MeasurementId,
    pub ran_measurement_id: MeasurementId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trp_result_list: Option<Vec<TrpResultListEntry>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingFailure {
    pub semf_measurement_id: MeasurementId,
    pub cause: CauseDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingUpdate {
    pub semf_measurement_id: MeasurementId,
    pub ran_measurement_id: MeasurementId,
    pub trp_config_list: Vec<TrpConfigListEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingReport {
    pub semf_measurement_id: MeasurementId,
    pub ran_measurement_id: MeasurementId,
    pub trp_result_list: Vec<TrpResultListEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingAbort {
    pub semf_measurement_id: MeasurementId,
    pub ran_measurement_id: MeasurementId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<CauseDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingFailureIndication {
    pub semf_measurement_id: MeasurementId,
    pub ran_measurement_id: MeasurementId,
    pub cause: CauseDiagnostics,
}

/// Every message of the protocol. The variant name is the `msg_type` on the wire.
#[derive(Debug, Clone, PartialEq)]
pub enum SepMessage {
    TrpInformationRequest(TrpInformationRequest),
    TrpInformationResponse(TrpInformationResponse),
    TrpInformationFailure(TrpInformationFailure),
    SensingRequest(SensingRequest),
    SensingResponse(SensingResponse),
    SensingFailure(SensingFailure),
    SensingUpdate(SensingUpdate),
    SensingReport(SensingReport),
    SensingAbort(SensingAbort),
    SensingFailureIndication(SensingFailureIndication),
}

/// The procedures, with initiating message and the two outcome messages.
pub const PROCEDURES: [(&str, &str, &str, &str); 2] = [
    (
        "TRP Information Exchange",
        "TrpInformationRequest",
        "TrpInformationResponse",
        "TrpInformationFailure",
    ),
    (
        "Sensing",
        "SensingRequest",
        "SensingResponse",
        "SensingFailure",
    ),
];

impl SepMessage {
    pub const ALL_TYPES: [&'static str; 10] = [
        "TrpInformationRequest",
        "TrpInformationResponse",
        "TrpInformationFailure",
        "SensingRequest",
        "SensingResponse",
        "SensingFailure",
        "SensingUpdate",
        "SensingReport",
        "SensingAbort",
        "SensingFailureIndication",
    ];

    pub fn msg_type(&self) -> &'static str {
        match self {
            SepMessage::TrpInformationRequest(_) => "TrpInformationRequest",
            SepMessage::TrpInformationResponse(_) => "TrpInformationResponse",
            SepMessage::TrpInformationFailure(_) => "TrpInformationFailure",
            SepMessage::SensingRequest(_) => "SensingRequest",
            SepMessage::SensingResponse(_) => "SensingResponse",
            SepMessage::SensingFailure(_) => "SensingFailure",
            SepMessage::SensingUpdate(_) => "SensingUpdate",
            SepMessage::SensingReport(_) => "SensingReport",
            SepMessage::SensingAbort(_) => "SensingAbort",
            SepMessage::SensingFailureIndication(_) => "SensingFailureIndication",
        }
    }

    /// `(semf, ran)` measurement ids carried by the message, where present.
    pub fn measurement_ids(&self) -> (Option<MeasurementId>, Option<MeasurementId>) {
        match self {
            SepMessage::SensingRequest(m) => (Some(m.semf_measurement_id), None),
            SepMessage::SensingResponse(m) => {
                (Some(m.semf_measurement_id), Some(m.ran_measurement_id))
            }
            SepMessage::SensingFailure(m) => (Some(m.semf_measurement_id), None),
            SepMessage::SensingUpdate(m) => {
                (Some(m.semf_measurement_id), Some(m.ran_measurement_id))
            }
            SepMessage::SensingReport(m) => {
                (Some(m.semf_measurement_id), Some(m.ran_measurement_id))
            }
            SepMessage::SensingAbort(m) => {
                (Some(m.semf_measurement_id), Some(m.ran_measurement_id))
            }
            SepMessage::SensingFailureIndication(m) => {
                (Some(m.semf_measurement_id), Some(m.ran_measurement_id))
            }
            _ => (None, None),
        }
    }

    /// Checks the message invariants: positive ids, valid timing, and TX
    /// entries that do not ask for processing.
    pub fn validate(&self) -> Result<(), String> {
        let (semf, ran) = self.measurement_ids();
        if semf == Some(0) || ran == Some(0) {
            return Err("measurement ids must be strictly positive".into());
        }
        let check_entries = |list: &[TrpConfigListEntry]| -> Result<(), String> {
            for e in list {
                if e.role == Role::Tx && e.processing.depth != ProcessingDepth::ChannelIq {
                    return Err(format!(
                        "TX-only entry for TRP {} cannot request processing",
                        e.trp_id
                    ));
                }
                if e.resource.period_slots == 0
                    || e.resource.burst_symbols < 2
                    || e.resource.subcarriers < 2
                {
                    return Err(format!(
                        "TRP {}: resource needs period ≥ 1 and a burst of at least 2x2",
                        e.trp_id
                    ));
                }
                for b in &e.beams {
                    b.validate()
                        .map_err(|err| format!("TRP {}: {err}", e.trp_id))?;
                }
            }
            Ok(())
        };
        match self {
            SepMessage::SensingRequest(m) => {
                m.measurement_timing.validate()?;
                check_entries(&m.trp_config_list)
            }
            SepMessage::SensingUpdate(m) => check_entries(&m.trp_config_list),
            _ => Ok(()),
        }
    }
}
