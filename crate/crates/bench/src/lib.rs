//! Shared fixtures for the solver benchmarks.

use pmn_core::ao::{initialize, AoContext, AoInit, AoState};
use pmn_core::harness::config::desk_file;
use pmn_core::harness::ExperimentSpec;
use pmn_core::{generate_scene, Scene};

/// Desk-scale experiment resolved to solver units.
pub fn desk_spec() -> ExperimentSpec {
    desk_file().resolve().expect("desk configuration is valid")
}

/// Random desk scene for `seed`.
pub fn desk_scene(spec: &ExperimentSpec, seed: u64) -> Scene {
    generate_scene(&spec.config, &spec.scene_params, &spec.scenario, seed).expect("scene draw succeeds")
}

/// AO state after initialization, ready for one round of updates.
pub fn initial_state(spec: &ExperimentSpec, scene: &Scene, seed: u64) -> AoState {
    let ctx = AoContext::new(scene, &spec.config).expect("valid scene");
    initialize(&ctx, &AoInit::from_seed(seed)).expect("initialization succeeds")
}
