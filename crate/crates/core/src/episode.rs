//! Episode driver: observe, pick a push, re-observe, group frames, correct
//! the accumulated mask; repeat until the planner goes quiet or the push
//! budget runs out.
//!
//! Two mask streams are tracked per step: the static oracle's fresh
//! segmentation (the baseline) and the accumulated corrected mask. Both are
//! scored against ground truth so a suite run reproduces the
//! baseline-vs-corrected comparison table.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::bfif::{
    compute_bfifs, group_bfifs, sample_frames, BfifError, FrameGrouping, GroupingModel,
    SamplerConfig,
};
use crate::correction::{correct_mask, project_mask, CorrectionConfig};
use crate::eval::{evaluate, MetricsReport};
use crate::planner::{find_action, PlannerConfig};
use crate::scene::{
    apply_push, generate_scene, oracle_flow, oracle_static_seg, render_labels, FlowField,
    GeneratorConfig, LabelMask, OracleConfig, PushAction, PushConfig, SceneState, UncertaintyMap,
};
use crate::seed::mix_seed;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub planner: PlannerConfig,
    pub sampler: SamplerConfig,
    pub correction: CorrectionConfig,
    pub oracle: OracleConfig,
    pub push: PushConfig,
    /// Push budget per episode.
    pub max_pushes: usize,
    /// Flow noise in pixels.
    pub noise_sigma: f64,
    /// Posterior threshold for linking frame pairs.
    pub tau: f64,
    /// Boundary metric tolerance in pixels.
    pub tol_px: usize,
    /// Master seed; every per-step seed derives from it.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut sampler = SamplerConfig::default();
        // At the benchmark noise level (0.3 px per flow component) a
        // stationary anchor still wanders ~0.5 px, so the moving gate needs
        // headroom above the sampler default.
        sampler.move_eps = 2.0;
        Self {
            planner: PlannerConfig::default(),
            sampler,
            correction: CorrectionConfig::default(),
            oracle: OracleConfig::default(),
            push: PushConfig::default(),
            max_pushes: 3,
            noise_sigma: 0.3,
            tau: 0.5,
            tol_px: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    /// 0 is the initial observation; k > 0 follows the k-th push.
    pub push_index: usize,
    /// The push that produced this observation (None at step 0).
    pub action: Option<PushAction>,
    pub scene: SceneState,
    pub static_mask: LabelMask,
    pub uncertainty: UncertaintyMap,
    /// Accumulated corrected mask.
    pub riseg_mask: LabelMask,
    pub gt_mask: LabelMask,
    /// Flow from the previous step's scene into this one.
    pub flow: Option<FlowField>,
    pub grouping: Option<FrameGrouping>,
    pub static_metrics: MetricsReport,
    pub riseg_metrics: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub scene_id: u64,
    pub steps: Vec<StepRecord>,
    /// Module error that cut the episode short, if any.
    pub failure: Option<String>,
}

/// Uncertain pixels whose neighborhood in the accumulated mask already shows
/// two distinct objects are resolved: the seam was split by an earlier push
/// even though the static oracle still flags it. Blanking them keeps the
/// planner aimed at seams the accumulated mask has not explained yet and
/// lets episodes terminate once everything is split.
fn unresolved_uncertainty(
    u: &UncertaintyMap,
    mask: &LabelMask,
    planner: &PlannerConfig,
) -> UncertaintyMap {
    const RADIUS: i64 = 4;
    const MIN_LABEL_PIXELS: usize = 3;
    let (h, w) = (u.height, u.width);
    let mut out = u.clone();
    for r in 0..h {
        for c in 0..w {
            let v = u.get(r, c);
            if v < planner.l_l || v >= planner.l_u {
                continue;
            }
            let mut counts: std::collections::BTreeMap<u16, usize> = Default::default();
            for dr in -RADIUS..=RADIUS {
                for dc in -RADIUS..=RADIUS {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                        continue;
                    }
                    let l = mask.get(nr as usize, nc as usize);
                    if l != 0 {
                        *counts.entry(l).or_insert(0) += 1;
                    }
                }
            }
            if counts.values().filter(|&&n| n >= MIN_LABEL_PIXELS).count() >= 2 {
                out.set(r, c, 0);
            }
        }
    }
    out
}

/// One full interaction episode. The static-oracle merge seed is fixed per
/// scene so merged pairs stay merged while they keep touching.
pub fn run_episode(
    scene: &SceneState,
    scene_id: u64,
    model: &GroupingModel,
    cfg: &RunConfig,
) -> EpisodeRecord {
    let merge_seed = mix_seed(&[cfg.seed, scene_id, 0x5345]);
    let mut steps: Vec<StepRecord> = vec![];
    let mut failure = None;

    let (static0, unc0) = oracle_static_seg(scene, &cfg.oracle, merge_seed);
    let gt0 = render_labels(scene);
    let m_static = match evaluate(&static0, &gt0, cfg.tol_px) {
        Ok(m) => m,
        Err(e) => {
            return EpisodeRecord { scene_id, steps, failure: Some(e.to_string()) };
        }
    };
    steps.push(StepRecord {
        push_index: 0,
        action: None,
        scene: scene.clone(),
        static_mask: static0.clone(),
        uncertainty: unc0,
        riseg_mask: static0,
        gt_mask: gt0,
        flow: None,
        grouping: None,
        static_metrics: m_static.clone(),
        riseg_metrics: m_static,
    });

    for k in 1..=cfg.max_pushes {
        let step_seed = mix_seed(&[cfg.seed, scene_id, k as u64]);
        let prev = steps.last().unwrap();
        let planner_u = unresolved_uncertainty(&prev.uncertainty, &prev.riseg_mask, &cfg.planner);
        let Some(action) = find_action(&planner_u, &cfg.planner, mix_seed(&[step_seed, 1])) else {
            break;
        };
        let prev_scene = prev.scene.clone();
        let prev_riseg = prev.riseg_mask.clone();

        let result = (|| -> Result<StepRecord, String> {
            let scene_k =
                apply_push(&prev_scene, &action, &cfg.push).map_err(|e| e.to_string())?;
            let (static_k, unc_k) = oracle_static_seg(&scene_k, &cfg.oracle, merge_seed);
            let flow = oracle_flow(&prev_scene, &scene_k, cfg.noise_sigma, mix_seed(&[step_seed, 2]))
                .map_err(|e| e.to_string())?;

            let grouping;
            let frames_t1;
            match sample_frames(&prev_riseg, &flow, &cfg.sampler, mix_seed(&[step_seed, 3])) {
                Ok((ft, ft1)) => {
                    let twists = compute_bfifs(&ft, &ft1).map_err(|e| e.to_string())?;
                    grouping = Some(group_bfifs(
                        &twists,
                        &ft,
                        &ft1,
                        model,
                        cfg.tau,
                        cfg.sampler.move_eps,
                    ));
                    frames_t1 = ft1;
                }
                // Nothing to track (e.g. a near-empty mask): fall back on
                // pure projection.
                Err(BfifError::InsufficientFrames(_)) => {
                    grouping = None;
                    frames_t1 = vec![];
                }
                Err(e) => return Err(e.to_string()),
            }

            let projection =
                project_mask(&prev_riseg, &static_k, &flow).map_err(|e| e.to_string())?;
            let riseg_k = match &grouping {
                Some(g) => correct_mask(&projection, &static_k, g, &frames_t1, &cfg.correction),
                None => projection.labels.clone(),
            };

            let gt_k = render_labels(&scene_k);
            let static_metrics = evaluate(&static_k, &gt_k, cfg.tol_px).map_err(|e| e.to_string())?;
            let riseg_metrics = evaluate(&riseg_k, &gt_k, cfg.tol_px).map_err(|e| e.to_string())?;
            Ok(StepRecord {
                push_index: k,
                action: Some(action),
                scene: scene_k,
                static_mask: static_k,
                uncertainty: unc_k,
                riseg_mask: riseg_k,
                gt_mask: gt_k,
                flow: Some(flow),
                grouping,
                static_metrics,
                riseg_metrics,
            })
        })();
        match result {
            Ok(step) => steps.push(step),
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }

    EpisodeRecord { scene_id, steps, failure }
}

/// Field-wise mean of metric reports.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct MeanMetrics {
    pub overlap_p: f64,
    pub overlap_r: f64,
    pub overlap_f: f64,
    pub boundary_p: f64,
    pub boundary_r: f64,
    pub boundary_f: f64,
    pub object_accuracy: f64,
}

fn mean_of(reports: &[&MetricsReport]) -> MeanMetrics {
    let n = reports.len().max(1) as f64;
    let mut m = MeanMetrics::default();
    for r in reports {
        m.overlap_p += r.overlap_p;
        m.overlap_r += r.overlap_r;
        m.overlap_f += r.overlap_f;
        m.boundary_p += r.boundary_p;
        m.boundary_r += r.boundary_r;
        m.boundary_f += r.boundary_f;
        m.object_accuracy += r.object_accuracy;
    }
    m.overlap_p /= n;
    m.overlap_r /= n;
    m.overlap_f /= n;
    m.boundary_p /= n;
    m.boundary_r /= n;
    m.boundary_f /= n;
    m.object_accuracy /= n;
    m
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct PushAggregate {
    pub push_index: usize,
    pub n_episodes: usize,
    pub static_mean: MeanMetrics,
    pub riseg_mean: MeanMetrics,
}

pub struct SuiteReport {
    pub episodes: Vec<EpisodeRecord>,
    /// Per push index 0..=max_pushes; episodes that stopped early carry their
    /// final state forward (an unpushed scene stays as it was).
    pub aggregates: Vec<PushAggregate>,
}

/// Run every scene and aggregate metrics per push index.
pub fn run_suite(
    scenes: &[(u64, SceneState)],
    model: &GroupingModel,
    cfg: &RunConfig,
) -> SuiteReport {
    let episodes: Vec<EpisodeRecord> = scenes
        .iter()
        .map(|(id, scene)| run_episode(scene, *id, model, cfg))
        .collect();
    let aggregates = (0..=cfg.max_pushes)
        .map(|k| {
            let complete: Vec<&EpisodeRecord> =
                episodes.iter().filter(|e| !e.steps.is_empty()).collect();
            fn step_at(e: &EpisodeRecord, k: usize) -> &StepRecord {
                &e.steps[k.min(e.steps.len() - 1)]
            }
            let statics: Vec<&MetricsReport> =
                complete.iter().map(|e| &step_at(e, k).static_metrics).collect();
            let risegs: Vec<&MetricsReport> =
                complete.iter().map(|e| &step_at(e, k).riseg_metrics).collect();
            PushAggregate {
                push_index: k,
                n_episodes: complete.len(),
                static_mean: mean_of(&statics),
                riseg_mean: mean_of(&risegs),
            }
        })
        .collect();
    SuiteReport { episodes, aggregates }
}

/// Generate a benchmark suite of cluttered scenes. Seeds that fail placement
/// are skipped, so `count` scenes always come back.
pub fn generate_suite(
    count: usize,
    objects: std::ops::RangeInclusive<usize>,
    seed: u64,
    gen_cfg: &GeneratorConfig,
) -> Vec<(u64, SceneState)> {
    let mut out = vec![];
    let mut attempt = 0u64;
    while out.len() < count {
        let scene_seed = mix_seed(&[seed, attempt]);
        let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
        let n = rng.gen_range(objects.clone());
        if let Ok(scene) = generate_scene(scene_seed, n, gen_cfg) {
            out.push((out.len() as u64, scene));
        }
        attempt += 1;
    }
    out
}

/// CSV rows (one per step per method) for a suite run, including the header.
pub fn suite_csv(report: &SuiteReport) -> String {
    let mut out = String::from(MetricsReport::CSV_HEADER);
    out.push('\n');
    for ep in &report.episodes {
        for step in &ep.steps {
            out.push_str(&step.static_metrics.csv_row(ep.scene_id, step.push_index, "static"));
            out.push('\n');
            out.push_str(&step.riseg_metrics.csv_row(ep.scene_id, step.push_index, "riseg"));
            out.push('\n');
        }
    }
    out
}

/// True when at least one frame on the step's grouping moved. Used by tests
/// and diagnostics.
pub fn step_saw_motion(step: &StepRecord) -> bool {
    step.grouping
        .as_ref()
        .map(|g| g.moving.iter().any(|&m| m))
        .unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bfif::train_grouping_model;
    use crate::scene::{PlanarPose, RigidBody, Workspace};

    fn noiseless_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.noise_sigma = 0.0;
        cfg.sampler.move_eps = 0.5;
        cfg.seed = 9;
        cfg
    }

    fn model() -> GroupingModel {
        train_grouping_model(8, 0.0, &SamplerConfig::default(), 4242).unwrap()
    }

    fn square(id: u16, half: f64, x: f64, y: f64) -> RigidBody {
        RigidBody {
            id,
            vertices: vec![[-half, -half], [half, -half], [half, half], [-half, half]],
            pose: PlanarPose { theta: 0.0, x, y },
        }
    }

    fn scene_with(bodies: Vec<RigidBody>) -> SceneState {
        SceneState {
            workspace: Workspace { min: [-0.256, -0.256], max: [0.256, 0.256] },
            pixel_pitch: 0.002,
            image_size: (256, 256),
            bodies,
        }
    }

    #[test]
    fn separated_scene_takes_zero_pushes() {
        let scene = scene_with(vec![
            square(1, 0.03, -0.1, -0.1),
            square(2, 0.03, 0.1, 0.1),
        ]);
        let ep = run_episode(&scene, 0, &model(), &noiseless_config());
        assert!(ep.failure.is_none());
        assert_eq!(ep.steps.len(), 1);
        assert_eq!(ep.steps[0].riseg_metrics.object_accuracy, 1.0);
        assert_eq!(ep.steps[0].static_metrics.object_accuracy, 1.0);
    }

    #[test]
    fn merged_pair_splits_after_pushes() {
        // Two touching squares: the static oracle merges them for good, and
        // only the interaction stream can split the mask.
        let scene = scene_with(vec![
            square(1, 0.025, -0.0255, 0.0),
            square(2, 0.025, 0.0255, 0.0),
        ]);
        let cfg = noiseless_config();
        let ep = run_episode(&scene, 3, &model(), &cfg);
        assert!(ep.failure.is_none(), "failure: {:?}", ep.failure);
        assert!(ep.steps.len() > 1, "planner should push a merged pair");
        assert_eq!(ep.steps[0].static_metrics.object_accuracy, 0.0);
        let last = ep.steps.last().unwrap();
        assert_eq!(
            last.riseg_metrics.object_accuracy, 1.0,
            "final mask should separate both bodies (overlap_f {})",
            last.riseg_metrics.overlap_f
        );
    }

    #[test]
    fn push_budget_is_respected() {
        let scene = scene_with(vec![
            square(1, 0.025, -0.0255, 0.0),
            square(2, 0.025, 0.0255, 0.0),
        ]);
        let mut cfg = noiseless_config();
        cfg.max_pushes = 1;
        let ep = run_episode(&scene, 3, &model(), &cfg);
        assert!(ep.steps.len() <= 2);
    }

    #[test]
    fn episodes_are_deterministic() {
        let scene = scene_with(vec![
            square(1, 0.025, -0.0255, 0.0),
            square(2, 0.025, 0.0255, 0.0),
        ]);
        let cfg = noiseless_config();
        let m = model();
        let a = run_episode(&scene, 7, &m, &cfg);
        let b = run_episode(&scene, 7, &m, &cfg);
        assert_eq!(a.steps.len(), b.steps.len());
        for (sa, sb) in a.steps.iter().zip(&b.steps) {
            assert_eq!(sa.riseg_mask.data, sb.riseg_mask.data);
            assert_eq!(sa.static_mask.data, sb.static_mask.data);
        }
    }

    #[test]
    fn accuracy_does_not_degrade_without_noise() {
        let suite = generate_suite(3, 4..=5, 1234, &GeneratorConfig::default());
        let m = model();
        let cfg = noiseless_config();
        for (id, scene) in &suite {
            let ep = run_episode(scene, *id, &m, &cfg);
            let accs: Vec<f64> =
                ep.steps.iter().map(|s| s.riseg_metrics.object_accuracy).collect();
            for w in accs.windows(2) {
                assert!(
                    w[1] >= w[0] - 1e-9,
                    "object accuracy regressed: {accs:?} (scene {id})"
                );
            }
        }
    }

    #[test]
    fn suite_aggregates_cover_every_push_index() {
        let suite = generate_suite(2, 4..=4, 99, &GeneratorConfig::default());
        let m = model();
        let cfg = noiseless_config();
        let report = run_suite(&suite, &m, &cfg);
        assert_eq!(report.aggregates.len(), cfg.max_pushes + 1);
        assert!(report.aggregates.iter().all(|a| a.n_episodes == 2));
        let csv = suite_csv(&report);
        assert!(csv.starts_with(MetricsReport::CSV_HEADER));
        assert!(csv.lines().count() > 2);
    }
}
