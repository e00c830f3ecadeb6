//! Deterministic simulator of an integrated sensing and communication (ISaC)
//! network: scene physics, the gNB radar processing chain, the sensing
//! protocol between RAN and core, the core sensing function and the
//! application-facing API.

pub mod api;
pub mod canonical;
pub mod gnb;
pub mod grid;
pub mod l1sens;
pub mod scene;
pub mod semf;
pub mod sep;
pub mod sim;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub use grid::{ComplexGrid, GridMeta};
pub use scene::{BeamPattern, GroundObject, ObjectClass, RadioParams, SceneState, Vec3};

/// Derives an independent child seed from `parent` and a path of tags
/// (splitmix64 finalizer applied per step).
pub fn derive_seed(parent: u64, tags: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    tags.iter().fold(mix(parent), |acc, t| mix(acc ^ mix(*t)))
}
