//! The core-network sensing function: policy and consent checks, TRP
//! discovery and selection, orchestration of sensing sessions over the
//! sensing protocol, fusion of per-TRP results and the result store.

pub mod area;
pub mod discovery;
pub mod fusion;
pub mod orchestrator;
pub mod spctm;
pub mod world;

pub use area::{Polygon, PolygonError};
pub use discovery::{
    trp_discover, trp_select, DiscoveryOutcome, GnbStatus, RoleAssignment, Selection, SessionMode,
    TrpRegistry,
};
pub use fusion::{
    associate_multistatic, fuse_multimonostatic, fuse_multistatic, fuse_multistatic_from,
    fusion_confidence, monostatic_estimates, multistatic_jacobian, BistaticObservation,
    FusedObject, MultistaticFix, MultistaticResult, ObjectLabel, RxLeg, TrpEstimate,
    UnlocalizedDetection, Unresolvable,
};
pub use orchestrator::{
    area_beams, Leg, MeasurementSession, OrchestrationConfig, Semf, SemfConfig, SemfOutput,
    SemfTimerKey, SemfTrace, SessionStatus,
};
pub use spctm::{
    purpose_fields, spctm_check, ConsentZone, DenyCause, MinimizationProfile, PolicyRecord,
    ResultField, SpctmDecision, SpctmTrigger, TransparencyEvent,
};
pub use world::{
    classify, geomap_fuse, GeoStatic, GeomapFusion, MapAnnotation, ResultStore, ResultStoreEntry,
    ScanResult, SemfTracker, TrackedObject,
};
