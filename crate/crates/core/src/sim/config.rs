//! Scenario files: parsing, validation with JSON-pointer paths and
//! cross-reference resolution.
//!
//! Validation never stops at the first problem; every violation found is
//! returned so a scenario can be fixed in one pass.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::api::{decode_line, ApiMessage};
use crate::canonical;
use crate::gnb::{GnbConfig, RuModel, TrpSite};
use crate::scene::{GroundObject, RadioParams, SceneState, Vec3};
use crate::semf::{ConsentZone, GeoStatic, OrchestrationConfig, PolicyRecord, SemfConfig};
use crate::sep::{GnbId, ReferenceSource, TrpId, TrpInfo};

/// One-way channel latencies in ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Latencies {
    /// SeMF to gNB and back.
    pub ngc_ms: f64,
    /// Between gNBs.
    pub xn_ms: f64,
    /// Transport of a transmitted grid to a bistatic receiver.
    pub backhaul_ms: f64,
}

impl Default for Latencies {
    fn default() -> Self {
        Self {
            ngc_ms: 10.0,
            xn_ms: 3.0,
            backhaul_ms: 5.0,
        }
    }
}

/// How bistatic receivers get the transmitted grid. Backhaul transport
/// uses the scenario's backhaul latency and buffer.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceChoice {
    #[default]
    Preconfigured,
    Backhaul,
    OverTheAir {
        sinr_db: f64,
        mcs_threshold_db: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GnbSpec {
    pub gnb_id: GnbId,
    #[serde(default)]
    pub comm_load: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrpSpec {
    pub trp_id: TrpId,
    pub gnb_id: GnbId,
    pub position: Vec3,
    pub beamwidth_rad: f64,
    pub coverage_radius_m: f64,
    /// Defaults to the full configured bandwidth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_bandwidth_hz: Option<f64>,
    pub ru: RuModel,
}

impl TrpSpec {
    /// Capabilities as the gNB reports them.
    pub fn info(&self, radio: &RadioParams) -> TrpInfo {
        TrpInfo {
            trp_id: self.trp_id,
            gnb_id: self.gnb_id,
            position: self.position,
            duplex: self.ru.kind,
            roles: self.ru.roles(),
            beam_count: self.ru.beams_supported,
            beamwidth_rad: self.beamwidth_rad,
            max_bandwidth_hz: self
                .max_bandwidth_hz
                .unwrap_or(radio.num_subcarriers as f64 * radio.subcarrier_spacing_hz),
            sic_total_db: self.ru.sic.total_db(),
            coverage_radius_m: self.coverage_radius_m,
            legacy: self.ru.legacy,
            can_pause_comm: self.ru.can_pause_comm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuFailureFault {
    pub at_s: f64,
    pub trp_id: TrpId,
}

/// Injected faults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Faults {
    /// gNBs that refuse every sensing request.
    pub reject_request: Vec<GnbId>,
    /// gNBs that answer TRP information requests with a failure.
    pub trp_info_failure: Vec<GnbId>,
    pub ru_failure: Vec<RuFailureFault>,
}

/// A consumer message sent at a fixed simulated time.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptEntry {
    pub at_s: f64,
    pub consumer: String,
    pub message: ApiMessage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub duration_s: f64,
    pub radio: RadioParams,
    pub latencies: Latencies,
    /// Receive buffer of a bistatic receiver waiting for a backhauled grid.
    pub buffer_ms: f64,
    pub bistatic_reference: ReferenceChoice,
    pub gnbs: Vec<GnbSpec>,
    pub trps: Vec<TrpSpec>,
    pub objects: Vec<GroundObject>,
    pub geomap: Vec<GeoStatic>,
    pub policies: Vec<PolicyRecord>,
    pub consents: Vec<ConsentZone>,
    pub orchestration: OrchestrationConfig,
    pub faults: Faults,
    pub af_script: Vec<ScriptEntry>,
}

pub const DEFAULT_BUFFER_MS: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationKind {
    /// Not valid JSON, wrong shape or type, missing or unknown key.
    Schema,
    /// An id that points at nothing.
    DanglingReference,
    /// Well-formed but inconsistent.
    Invalid,
}

/// One problem in a scenario file.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    /// JSON pointer to the offending value; empty for the whole document.
    pub path: String,
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = if self.path.is_empty() {
            "/"
        } else {
            &self.path
        };
        write!(f, "{path}: {:?}: {}", self.kind, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("{} violation(s):\n{}", .0.len(), .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
}

impl ScenarioError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ScenarioError::Invalid(v) => v,
            ScenarioError::Io(_) => &[],
        }
    }
}

const TOP_LEVEL: [(&str, bool); 17] = [
    ("name", false),
    ("seed", true),
    ("duration_s", true),
    ("radio", true),
    ("latencies", false),
    ("buffer_ms", false),
    ("bistatic_reference", false),
    ("gnbs", true),
    ("trps", true),
    ("objects", false),
    ("geomap", false),
    ("policies", false),
    ("consents", false),
    ("orchestration", false),
    ("faults", false),
    ("af_script", true),
    ("$schema", false),
];

/// Top-level keys a scenario must have.
pub fn required_keys() -> Vec<&'static str> {
    TOP_LEVEL
        .iter()
        .filter(|(_, r)| *r)
        .map(|(k, _)| *k)
        .collect()
}

/// Every top-level key a scenario may have.
pub fn known_keys() -> Vec<&'static str> {
    TOP_LEVEL.iter().map(|(k, _)| *k).collect()
}

struct Checker {
    out: Vec<Violation>,
}

impl Checker {
    fn push(&mut self, path: impl Into<String>, kind: ViolationKind, message: impl Into<String>) {
        self.out.push(Violation {
            path: path.into(),
            kind,
            message: message.into(),
        });
    }

    fn typed<T: DeserializeOwned>(&mut self, path: &str, v: &Value) -> Option<T> {
        match serde_json::from_value(v.clone()) {
            Ok(t) => Some(t),
            Err(e) => {
                self.push(path, ViolationKind::Schema, e.to_string());
                None
            }
        }
    }

    /// Elements of an optional or required array, each parsed on its own.
    fn list<T: DeserializeOwned>(
        &mut self,
        doc: &Map<String, Value>,
        key: &str,
    ) -> Vec<(usize, T)> {
        let Some(v) = doc.get(key) else {
            return Vec::new();
        };
        let Value::Array(items) = v else {
            self.push(
                format!("/{key}"),
                ViolationKind::Schema,
                "expected an array",
            );
            return Vec::new();
        };
        items
            .iter()
            .enumerate()
            .filter_map(|(i, item)| self.typed(&format!("/{key}/{i}"), item).map(|t| (i, t)))
            .collect()
    }
}

fn finite_positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

impl ScenarioConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let bytes = std::fs::read(path)?;
        Self::from_slice(&bytes)
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Self::from_slice(text.as_bytes())
    }

    /// Parses and validates a scenario document.
    pub fn from_slice(bytes: &[u8]) -> Result<Self, ScenarioError> {
        let doc: Value = match serde_json::from_slice(bytes) {
            Ok(v) => v,
            Err(e) => {
                return Err(ScenarioError::Invalid(vec![Violation {
                    path: String::new(),
                    kind: ViolationKind::Schema,
                    message: format!("not a JSON document: {e}"),
                }]))
            }
        };
        let mut c = Checker { out: Vec::new() };
        let Value::Object(doc) = doc else {
            c.push("", ViolationKind::Schema, "scenario must be a JSON object");
            return Err(ScenarioError::Invalid(c.out));
        };
        let known = known_keys();
        for k in doc.keys() {
            if !known.contains(&k.as_str()) {
                c.push(
                    format!("/{k}"),
                    ViolationKind::Schema,
                    format!("unknown key {k:?}"),
                );
            }
        }
        for k in required_keys() {
            if !doc.contains_key(k) {
                c.push(
                    format!("/{k}"),
                    ViolationKind::Schema,
                    format!("missing required key {k:?}"),
                );
            }
        }

        let field = |key: &str| doc.get(key).cloned();
        let name: String = field("name")
            .and_then(|v| c.typed("/name", &v))
            .unwrap_or_default();
        let seed: Option<u64> = field("seed").and_then(|v| c.typed("/seed", &v));
        let duration_s: Option<f64> = field("duration_s").and_then(|v| c.typed("/duration_s", &v));
        let radio: Option<RadioParams> = field("radio").and_then(|v| c.typed("/radio", &v));
        let latencies: Latencies = field("latencies")
            .and_then(|v| c.typed("/latencies", &v))
            .unwrap_or_default();
        let buffer_ms: f64 = field("buffer_ms")
            .and_then(|v| c.typed("/buffer_ms", &v))
            .unwrap_or(DEFAULT_BUFFER_MS);
        let bistatic_reference: ReferenceChoice = field("bistatic_reference")
            .and_then(|v| c.typed("/bistatic_reference", &v))
            .unwrap_or_default();
        let orchestration: OrchestrationConfig = field("orchestration")
            .and_then(|v| c.typed("/orchestration", &v))
            .unwrap_or_default();
        let faults: Faults = field("faults")
            .and_then(|v| c.typed("/faults", &v))
            .unwrap_or_default();
        let gnbs: Vec<(usize, GnbSpec)> = c.list(&doc, "gnbs");
        let trps: Vec<(usize, TrpSpec)> = c.list(&doc, "trps");
        let objects: Vec<(usize, GroundObject)> = c.list(&doc, "objects");
        let geomap: Vec<(usize, GeoStatic)> = c.list(&doc, "geomap");
        let policies: Vec<(usize, PolicyRecord)> = c.list(&doc, "policies");
        let consents: Vec<(usize, ConsentZone)> = c.list(&doc, "consents");
        let script = parse_script(&mut c, doc.get("af_script"));

        // Value checks.
        if let Some(d) = duration_s {
            if !finite_positive(d) {
                c.push(
                    "/duration_s",
                    ViolationKind::Invalid,
                    "duration must be positive",
                );
            }
        }
        if let Some(r) = &radio {
            if let Err(e) = r.validate() {
                c.push("/radio", ViolationKind::Invalid, e.to_string());
            }
        }
        for (k, v) in [
            ("ngc_ms", latencies.ngc_ms),
            ("xn_ms", latencies.xn_ms),
            ("backhaul_ms", latencies.backhaul_ms),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                c.push(
                    format!("/latencies/{k}"),
                    ViolationKind::Invalid,
                    "latency must be non-negative",
                );
            }
        }
        if !(buffer_ms.is_finite() && buffer_ms >= 0.0) {
            c.push(
                "/buffer_ms",
                ViolationKind::Invalid,
                "buffer must be non-negative",
            );
        }
        let orch = &orchestration;
        if orch.max_beams == 0 || orch.period_slots == 0 {
            c.push(
                "/orchestration",
                ViolationKind::Invalid,
                "max_beams and period_slots must be positive",
            );
        }

        let mut gnb_ids = BTreeSet::new();
        for (i, g) in &gnbs {
            if !gnb_ids.insert(g.gnb_id) {
                c.push(
                    format!("/gnbs/{i}/gnb_id"),
                    ViolationKind::Invalid,
                    format!("duplicate gNB id {}", g.gnb_id),
                );
            }
            if g.gnb_id == 0 {
                c.push(
                    format!("/gnbs/{i}/gnb_id"),
                    ViolationKind::Invalid,
                    "gNB id 0 is reserved",
                );
            }
            if !(0.0..=1.0).contains(&g.comm_load) {
                c.push(
                    format!("/gnbs/{i}/comm_load"),
                    ViolationKind::Invalid,
                    "load must lie in [0, 1]",
                );
            }
        }
        let mut trp_ids = BTreeSet::new();
        for (i, t) in &trps {
            let p = format!("/trps/{i}");
            if !trp_ids.insert(t.trp_id) {
                c.push(
                    format!("{p}/trp_id"),
                    ViolationKind::Invalid,
                    format!("duplicate TRP id {}", t.trp_id),
                );
            }
            if t.trp_id == 0 {
                c.push(
                    format!("{p}/trp_id"),
                    ViolationKind::Invalid,
                    "TRP id 0 is reserved",
                );
            }
            if !gnb_ids.contains(&t.gnb_id) {
                c.push(
                    format!("{p}/gnb_id"),
                    ViolationKind::DanglingReference,
                    format!("TRP {} references unknown gNB {}", t.trp_id, t.gnb_id),
                );
            }
            if !(t.beamwidth_rad > 0.0 && t.beamwidth_rad <= std::f64::consts::PI) {
                c.push(
                    format!("{p}/beamwidth_rad"),
                    ViolationKind::Invalid,
                    "beamwidth must lie in (0, π]",
                );
            }
            if !finite_positive(t.coverage_radius_m) {
                c.push(
                    format!("{p}/coverage_radius_m"),
                    ViolationKind::Invalid,
                    "coverage radius must be positive",
                );
            }
            if !t.position.is_finite() {
                c.push(
                    format!("{p}/position"),
                    ViolationKind::Invalid,
                    "position must be finite",
                );
            }
            if let Err(e) = t.ru.validate() {
                c.push(format!("{p}/ru"), ViolationKind::Invalid, e);
            }
        }
        let mut object_ids = BTreeSet::new();
        for (i, o) in &objects {
            if !object_ids.insert(o.id) {
                c.push(
                    format!("/objects/{i}/id"),
                    ViolationKind::Invalid,
                    format!("duplicate object id {}", o.id),
                );
            }
            if let Err(e) = o.validate() {
                c.push(
                    format!("/objects/{i}"),
                    ViolationKind::Invalid,
                    e.to_string(),
                );
            }
        }
        for (i, p) in &policies {
            if let Err(e) = p.allowed_area.validate() {
                c.push(
                    format!("/policies/{i}/allowed_area"),
                    ViolationKind::Invalid,
                    e.to_string(),
                );
            }
        }
        for (i, z) in &consents {
            if let Err(e) = z.area.validate() {
                c.push(
                    format!("/consents/{i}/area"),
                    ViolationKind::Invalid,
                    e.to_string(),
                );
            }
        }

        // Cross references.
        let consumers: BTreeSet<&str> = script.iter().map(|(_, e)| e.consumer.as_str()).collect();
        let mut policy_consumers = BTreeMap::new();
        for (i, p) in &policies {
            if !consumers.contains(p.consumer_id.as_str()) {
                c.push(
                    format!("/policies/{i}/consumer_id"),
                    ViolationKind::DanglingReference,
                    format!(
                        "policy for consumer {:?} that never appears in the script",
                        p.consumer_id
                    ),
                );
            }
            policy_consumers.entry(p.consumer_id.clone()).or_insert(*i);
        }
        for (i, e) in &script {
            if let ApiMessage::SensingServiceRequest(r) = &e.message {
                if r.consumer_id != e.consumer {
                    c.push(
                        format!("/af_script/{i}/message/consumer_id"),
                        ViolationKind::Invalid,
                        format!("request of {:?} sent by {:?}", r.consumer_id, e.consumer),
                    );
                }
            }
            if let Some(d) = duration_s {
                if !(e.at_s >= 0.0 && e.at_s <= d) {
                    c.push(
                        format!("/af_script/{i}/at_s"),
                        ViolationKind::Invalid,
                        "send time outside the run",
                    );
                }
            }
        }
        for (k, list) in [
            ("reject_request", &faults.reject_request),
            ("trp_info_failure", &faults.trp_info_failure),
        ] {
            for (i, g) in list.iter().enumerate() {
                if !gnb_ids.contains(g) {
                    c.push(
                        format!("/faults/{k}/{i}"),
                        ViolationKind::DanglingReference,
                        format!("fault on unknown gNB {g}"),
                    );
                }
            }
        }
        for (i, f) in faults.ru_failure.iter().enumerate() {
            if !trp_ids.contains(&f.trp_id) {
                c.push(
                    format!("/faults/ru_failure/{i}/trp_id"),
                    ViolationKind::DanglingReference,
                    format!("fault on unknown TRP {}", f.trp_id),
                );
            }
            if !(f.at_s >= 0.0 && f.at_s.is_finite()) {
                c.push(
                    format!("/faults/ru_failure/{i}/at_s"),
                    ViolationKind::Invalid,
                    "fault time must be non-negative",
                );
            }
        }

        if !c.out.is_empty() {
            return Err(ScenarioError::Invalid(c.out));
        }
        Ok(Self {
            name,
            seed: seed.expect("checked"),
            duration_s: duration_s.expect("checked"),
            radio: radio.expect("checked"),
            latencies,
            buffer_ms,
            bistatic_reference,
            gnbs: strip(gnbs),
            trps: strip(trps),
            objects: strip(objects),
            geomap: strip(geomap),
            policies: strip(policies),
            consents: strip(consents),
            orchestration,
            faults,
            af_script: script.into_iter().map(|(_, e)| e).collect(),
        })
    }

    /// Ground truth at t = 0.
    pub fn scene(&self) -> SceneState {
        SceneState::new(self.objects.clone()).expect("validated on load")
    }

    /// The configuration of every gNB, TRPs in file order.
    pub fn gnb_configs(&self) -> Vec<GnbConfig> {
        self.gnbs
            .iter()
            .map(|g| GnbConfig {
                gnb_id: g.gnb_id,
                radio: self.radio,
                trps: self
                    .trps
                    .iter()
                    .filter(|t| t.gnb_id == g.gnb_id)
                    .map(|t| TrpSite {
                        info: t.info(&self.radio),
                        ru: t.ru.clone(),
                    })
                    .collect(),
                comm_load: g.comm_load,
                xn_latency_ms: self.latencies.xn_ms,
            })
            .collect()
    }

    pub fn reference_source(&self) -> ReferenceSource {
        match self.bistatic_reference {
            ReferenceChoice::Preconfigured => ReferenceSource::Preconfigured,
            ReferenceChoice::Backhaul => ReferenceSource::Backhaul {
                latency_ms: self.latencies.backhaul_ms,
                buffer_ms: self.buffer_ms,
            },
            ReferenceChoice::OverTheAir {
                sinr_db,
                mcs_threshold_db,
            } => ReferenceSource::OverTheAir {
                sinr_db,
                mcs_threshold_db,
            },
        }
    }

    pub fn semf_config(&self) -> SemfConfig {
        let mut orchestration = self.orchestration.clone();
        orchestration.reference = self.reference_source();
        SemfConfig {
            gnbs: self.gnbs.iter().map(|g| g.gnb_id).collect(),
            radio: self.radio,
            ngc_latency_ms: self.latencies.ngc_ms,
            policies: self.policies.clone(),
            consents: self.consents.clone(),
            geomap: self.geomap.clone(),
            orchestration,
        }
    }
}

fn strip<T>(v: Vec<(usize, T)>) -> Vec<T> {
    v.into_iter().map(|(_, x)| x).collect()
}

fn parse_script(c: &mut Checker, v: Option<&Value>) -> Vec<(usize, ScriptEntry)> {
    let Some(v) = v else {
        return Vec::new();
    };
    let Value::Array(items) = v else {
        c.push("/af_script", ViolationKind::Schema, "expected an array");
        return Vec::new();
    };
    let mut out = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let p = format!("/af_script/{i}");
        let Value::Object(m) = item else {
            c.push(p, ViolationKind::Schema, "expected an object");
            continue;
        };
        for k in m.keys() {
            if !["at_s", "consumer", "message"].contains(&k.as_str()) {
                c.push(
                    format!("{p}/{k}"),
                    ViolationKind::Schema,
                    format!("unknown key {k:?}"),
                );
            }
        }
        let at_s: Option<f64> = match m.get("at_s") {
            Some(v) => c.typed(&format!("{p}/at_s"), v),
            None => {
                c.push(
                    format!("{p}/at_s"),
                    ViolationKind::Schema,
                    "missing required key \"at_s\"",
                );
                None
            }
        };
        let consumer: Option<String> = match m.get("consumer") {
            Some(v) => c.typed(&format!("{p}/consumer"), v),
            None => {
                c.push(
                    format!("{p}/consumer"),
                    ViolationKind::Schema,
                    "missing required key \"consumer\"",
                );
                None
            }
        };
        let message = match m.get("message") {
            // The message is checked exactly as it would arrive on the wire.
            Some(v) => match canonical::to_canonical_vec(v).map(|line| decode_line(&line, 1)) {
                Ok(Ok(msg)) => Some(msg),
                Ok(Err(e)) => {
                    c.push(format!("{p}/message"), ViolationKind::Schema, e.to_string());
                    None
                }
                Err(e) => {
                    c.push(format!("{p}/message"), ViolationKind::Schema, e.to_string());
                    None
                }
            },
            None => {
                c.push(
                    format!("{p}/message"),
                    ViolationKind::Schema,
                    "missing required key \"message\"",
                );
                None
            }
        };
        if let (Some(at_s), Some(consumer), Some(message)) = (at_s, consumer, message) {
            out.push((
                i,
                ScriptEntry {
                    at_s,
                    consumer,
                    message,
                },
            ));
        }
    }
    out
}
