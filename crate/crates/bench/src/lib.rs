//! Shared fixtures for the criterion benchmarks: one mid-sized cluttered
//! scene pushed once, with everything the pipeline stages consume
//! precomputed so each bench isolates a single stage.

use riseg_core::bfif::{train_grouping_model, GroupingModel, SamplerConfig};
use riseg_core::episode::RunConfig;
use riseg_core::planner::find_action;
use riseg_core::scene::{apply_push, oracle_flow, oracle_static_seg};
use riseg_core::seed::mix_seed;
use riseg_core::{FlowField, LabelMask, SceneState, UncertaintyMap};

pub struct StepFixture {
    pub scene: SceneState,
    pub moved: SceneState,
    pub static_mask: LabelMask,
    pub uncertainty: UncertaintyMap,
    pub flow: FlowField,
    pub cfg: RunConfig,
}

/// A 5-object scene with at least one merged pair, pushed once by the
/// planner at the benchmark noise level.
pub fn step_fixture(seed: u64) -> StepFixture {
    let cfg = RunConfig::default();
    let gen_cfg = riseg_core::scene::GeneratorConfig::default();
    let mut attempt = 0u64;
    loop {
        attempt += 1;
        assert!(attempt < 100, "no benchable scene for seed {seed}");
        let scene_seed = mix_seed(&[seed, attempt]);
        let Ok(scene) = riseg_core::scene::generate_scene(scene_seed, 5, &gen_cfg) else {
            continue;
        };
        let (static_mask, uncertainty) =
            oracle_static_seg(&scene, &cfg.oracle, mix_seed(&[scene_seed, 0x5345]));
        let Some(action) = find_action(&uncertainty, &cfg.planner, mix_seed(&[scene_seed, 1]))
        else {
            continue;
        };
        let Ok(moved) = apply_push(&scene, &action, &cfg.push) else {
            continue;
        };
        let flow = oracle_flow(&scene, &moved, cfg.noise_sigma, mix_seed(&[scene_seed, 2]))
            .expect("fixture flow");
        return StepFixture { scene, moved, static_mask, uncertainty, flow, cfg };
    }
}

/// A small grouping model: enough training mass to be representative while
/// keeping bench setup under a second.
pub fn small_model(sampler: &SamplerConfig) -> GroupingModel {
    train_grouping_model(12, 0.3, sampler, 42).expect("fixture model")
}
