//! Body-frame sampling, twist extraction, and KDE-based frame grouping.
//!
//! Frames are built from pixel triplets on the accumulated mask, tracked
//! through the flow field, and reduced to spatial twists. Two frames sit on
//! the same rigid body exactly when their twists agree, so pairs are scored
//! with a Bayesian posterior: Gaussian product KDEs over the feature
//! (‖Δω‖₂, ‖Δv‖₂), one density per class (same body / different body), with
//! an empirical class prior. Links at posterior ≥ tau, groups by connected
//! components.

use std::io::{Read as _, Write as _};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::scene::{FlowField, LabelMask, PushAction, SceneError};
use crate::se3::{
    frame_from_triplet, spatial_twist, BodyFrame, KinematicsError, Pose, Twist, TwistMethod,
};
use crate::seed::mix_seed;

pub const MODEL_MAGIC: &[u8; 8] = b"RISKDE1\n";

/// Bandwidth floor: keeps noiseless (near-delta) classes finite.
const BANDWIDTH_FLOOR: f64 = 1e-9;
/// Slack on the triplet diameter cap for the displaced (t+1) triplet, which
/// is the same rigid triangle up to flow noise.
const T1_CAP_SLACK: f64 = 1.5;

#[derive(Debug, thiserror::Error)]
pub enum BfifError {
    #[error("only {0} usable frame triplets, need at least 3")]
    InsufficientFrames(usize),
    #[error("training produced {n} {class} pairs, need at least 50")]
    ClassStarvation { class: &'static str, n: usize },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad model file: {0}")]
    BadModel(String),
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Pixels sampled from the mask foreground.
    pub n_samples: usize,
    /// Triplet diameter cap (m).
    pub d_c: f64,
    /// Minimum mean anchor displacement (px) for a frame to count as moving.
    pub move_eps: f64,
    /// Back-projection scale (m/px).
    pub pixel_pitch: f64,
    /// World coordinates of the image origin corner.
    pub world_min: [f64; 2],
    /// Max change (px) of any triplet edge length between t and t+1 before
    /// the triplet is rejected as non-rigid (it straddles two bodies that
    /// moved differently).
    pub rigidity_eps: f64,
    /// Minimum triplet edge length (px). Short edges amplify flow noise into
    /// the frame orientation, so tiny triplets produce junk twists.
    pub min_edge_px: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_samples: 300,
            d_c: 0.03,
            move_eps: 0.5,
            pixel_pitch: 0.002,
            world_min: [-0.256, -0.256],
            rigidity_eps: 1.5,
            min_edge_px: 8.0,
        }
    }
}

impl SamplerConfig {
    fn pixel_to_world(&self, row: f64, col: f64) -> nalgebra::Vector3<f64> {
        nalgebra::Vector3::new(
            self.world_min[0] + (col + 0.5) * self.pixel_pitch,
            self.world_min[1] + (row + 0.5) * self.pixel_pitch,
            0.0,
        )
    }
}

/// Pairwise twist difference split into rotation and translation magnitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairFeature {
    pub d_omega: f64,
    pub d_linear: f64,
}

pub fn pair_feature(a: &Twist, b: &Twist) -> PairFeature {
    PairFeature {
        d_omega: (a.angular - b.angular).norm(),
        d_linear: (a.linear - b.linear).norm(),
    }
}

/// Sample pixel triplets from the mask and build aligned frame lists at t and
/// t+1, the latter by displacing each anchor through bilinearly sampled flow.
pub fn sample_frames(
    mask: &LabelMask,
    flow: &FlowField,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<(Vec<BodyFrame>, Vec<BodyFrame>), BfifError> {
    let mut pixels: Vec<(usize, usize)> = vec![];
    for r in 0..mask.height {
        for c in 0..mask.width {
            if mask.get(r, c) != 0 {
                pixels.push((r, c));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x6672_616d]));
    let n = cfg.n_samples.min(pixels.len());
    // Partial Fisher-Yates: the first n entries are a uniform sample.
    for i in 0..n {
        let j = rng.gen_range(i..pixels.len());
        pixels.swap(i, j);
    }
    let sampled = &pixels[..n];

    let cap_px = cfg.d_c / cfg.pixel_pitch;
    let mut used = vec![false; n];
    let mut frames_t = vec![];
    let mut frames_t1 = vec![];
    for i in 0..n {
        if used[i] {
            continue;
        }
        let (ri, ci) = sampled[i];
        let label = mask.get(ri, ci);
        // Candidate partners: same label, within the pixel-space cap of i.
        let near: Vec<usize> = (i + 1..n)
            .filter(|&j| {
                if used[j] {
                    return false;
                }
                let (rj, cj) = sampled[j];
                if mask.get(rj, cj) != label {
                    return false;
                }
                let dr = rj as f64 - ri as f64;
                let dc = cj as f64 - ci as f64;
                let d = (dr * dr + dc * dc).sqrt();
                d >= cfg.min_edge_px && d <= cap_px
            })
            .collect();
        'pairs: for (a_idx, &a) in near.iter().enumerate() {
            for &b in &near[a_idx + 1..] {
                let (ra, ca) = sampled[a];
                let (rb, cb) = sampled[b];
                let dab = ((rb as f64 - ra as f64).powi(2) + (cb as f64 - ca as f64).powi(2))
                    .sqrt();
                if dab < cfg.min_edge_px {
                    continue;
                }
                let anchors = [sampled[i], sampled[a], sampled[b]];
                let pts: Vec<_> = anchors
                    .iter()
                    .map(|&(r, c)| cfg.pixel_to_world(r as f64, c as f64))
                    .collect();
                let Ok(pose_t) = frame_from_triplet(&pts[0], &pts[1], &pts[2], cfg.d_c) else {
                    continue;
                };
                let moved: Vec<(f64, f64)> = anchors
                    .iter()
                    .map(|&(r, c)| {
                        let (du, dv) = flow.sample(r as f64, c as f64);
                        (r as f64 + dv, c as f64 + du)
                    })
                    .collect();
                let pts1: Vec<_> = moved
                    .iter()
                    .map(|&(r, c)| cfg.pixel_to_world(r, c))
                    .collect();
                let Ok(pose_t1) =
                    frame_from_triplet(&pts1[0], &pts1[1], &pts1[2], cfg.d_c * T1_CAP_SLACK)
                else {
                    continue;
                };
                // A triplet straddling two differently-moving regions is not
                // rigid: its edge lengths change and its winding can even
                // flip (which would put the displacement log near pi). Drop
                // such triplets instead of emitting junk frames.
                let winding = |p: &[nalgebra::Vector3<f64>]| {
                    (p[1] - p[0]).cross(&(p[2] - p[0])).z
                };
                if winding(&pts) * winding(&pts1) <= 0.0 {
                    continue;
                }
                let edge_px = |p: &(f64, f64), q: &(f64, f64)| {
                    ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()
                };
                let anchors_f: Vec<(f64, f64)> =
                    anchors.iter().map(|&(r, c)| (r as f64, c as f64)).collect();
                let rigid = [(0, 1), (0, 2), (1, 2)].iter().all(|&(a1, b1)| {
                    (edge_px(&anchors_f[a1], &anchors_f[b1]) - edge_px(&moved[a1], &moved[b1]))
                        .abs()
                        <= cfg.rigidity_eps
                });
                if !rigid {
                    continue;
                }
                used[i] = true;
                used[a] = true;
                used[b] = true;
                let px = |p: (usize, usize)| (p.0 as f64, p.1 as f64);
                frames_t.push(BodyFrame {
                    pose: pose_t,
                    anchor_pixels: [px(anchors[0]), px(anchors[1]), px(anchors[2])],
                    object_hint: label,
                });
                frames_t1.push(BodyFrame {
                    pose: pose_t1,
                    anchor_pixels: [moved[0], moved[1], moved[2]],
                    object_hint: label,
                });
                break 'pairs;
            }
        }
    }
    if frames_t.len() < 3 {
        return Err(BfifError::InsufficientFrames(frames_t.len()));
    }
    Ok((frames_t, frames_t1))
}

/// Element-wise spatial twists between aligned frame lists (dt = 1).
pub fn compute_bfifs(
    frames_t: &[BodyFrame],
    frames_t1: &[BodyFrame],
) -> Result<Vec<Twist>, BfifError> {
    assert_eq!(frames_t.len(), frames_t1.len());
    frames_t
        .iter()
        .zip(frames_t1)
        .map(|(a, b)| Ok(spatial_twist(&a.pose, &b.pose, 1.0, TwistMethod::MatrixLog)?))
        .collect()
}

/// Mean anchor displacement in pixels between a frame's two snapshots.
pub fn anchor_displacement(frame_t: &BodyFrame, frame_t1: &BodyFrame) -> f64 {
    frame_t
        .anchor_pixels
        .iter()
        .zip(&frame_t1.anchor_pixels)
        .map(|(&(r0, c0), &(r1, c1))| ((r1 - r0).powi(2) + (c1 - c0).powi(2)).sqrt())
        .sum::<f64>()
        / 3.0
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GroupingModel {
    pub samples_same: Vec<[f64; 2]>,
    pub samples_diff: Vec<[f64; 2]>,
    pub bw_same: [f64; 2],
    pub bw_diff: [f64; 2],
    pub prior_same: f64,
    /// Flow noise the model was trained at (metadata).
    pub noise_sigma: f64,
}

fn silverman_bandwidths(samples: &[[f64; 2]]) -> [f64; 2] {
    let n = samples.len() as f64;
    let mut bw = [0.0; 2];
    for j in 0..2 {
        let mean = samples.iter().map(|s| s[j]).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>() / n;
        // Product-kernel Silverman rule for d = 2: h_j = sigma_j n^(-1/6).
        bw[j] = (var.sqrt() * n.powf(-1.0 / 6.0)).max(BANDWIDTH_FLOOR);
    }
    bw
}

fn kde_eval(samples: &[[f64; 2]], bw: &[f64; 2], y: &PairFeature) -> f64 {
    let inv_norm = 1.0 / (samples.len() as f64 * std::f64::consts::TAU * bw[0] * bw[1]);
    let mut acc = 0.0;
    for s in samples {
        let z0 = (y.d_omega - s[0]) / bw[0];
        let z1 = (y.d_linear - s[1]) / bw[1];
        acc += (-0.5 * (z0 * z0 + z1 * z1)).exp();
    }
    acc * inv_norm
}

/// Fit the two class densities from labeled pair features.
pub fn fit_model(
    pairs: &[(PairFeature, bool)],
    noise_sigma: f64,
) -> Result<GroupingModel, BfifError> {
    let samples_same: Vec<[f64; 2]> = pairs
        .iter()
        .filter(|(_, same)| *same)
        .map(|(f, _)| [f.d_omega, f.d_linear])
        .collect();
    let samples_diff: Vec<[f64; 2]> = pairs
        .iter()
        .filter(|(_, same)| !*same)
        .map(|(f, _)| [f.d_omega, f.d_linear])
        .collect();
    if samples_same.len() < 50 {
        return Err(BfifError::ClassStarvation { class: "same", n: samples_same.len() });
    }
    if samples_diff.len() < 50 {
        return Err(BfifError::ClassStarvation { class: "diff", n: samples_diff.len() });
    }
    let bw_same = silverman_bandwidths(&samples_same);
    let bw_diff = silverman_bandwidths(&samples_diff);
    let prior_same = samples_same.len() as f64 / pairs.len() as f64;
    Ok(GroupingModel {
        samples_same,
        samples_diff,
        bw_same,
        bw_diff,
        prior_same,
        noise_sigma,
    })
}

/// Posterior probability that the feature comes from a same-body pair
/// (Bayes rule over the two fitted densities).
pub fn posterior_same(model: &GroupingModel, y: &PairFeature) -> f64 {
    let ls = kde_eval(&model.samples_same, &model.bw_same, y);
    let ld = kde_eval(&model.samples_diff, &model.bw_diff, y);
    if ls < 1e-300 && ld < 1e-300 {
        // No density support either way: fall back on the prior.
        return model.prior_same;
    }
    let num = ls * model.prior_same;
    (num / (num + ld * (1.0 - model.prior_same))).clamp(0.0, 1.0)
}

#[derive(Debug, Clone)]
pub struct FrameGrouping {
    /// Disjoint sets of frame indices, each a hypothesized rigid body.
    pub groups: Vec<Vec<usize>>,
    /// Per-frame flag: exceeded the move_eps displacement gate.
    pub moving: Vec<bool>,
}

/// Group moving frames by pairwise posterior: link at posterior ≥ tau, take
/// connected components. Stationary frames are excluded up front.
pub fn group_bfifs(
    twists: &[Twist],
    frames_t: &[BodyFrame],
    frames_t1: &[BodyFrame],
    model: &GroupingModel,
    tau: f64,
    move_eps: f64,
) -> FrameGrouping {
    let n = twists.len();
    let moving: Vec<bool> = (0..n)
        .map(|i| anchor_displacement(&frames_t[i], &frames_t1[i]) >= move_eps)
        .collect();
    let idx: Vec<usize> = (0..n).filter(|&i| moving[i]).collect();

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        let mut root = i;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = i;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    for (a_pos, &i) in idx.iter().enumerate() {
        for &j in &idx[a_pos + 1..] {
            let y = pair_feature(&twists[i], &twists[j]);
            if posterior_same(model, &y) >= tau {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups_map: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for &i in &idx {
        let r = find(&mut parent, i);
        groups_map.entry(r).or_default().push(i);
    }
    FrameGrouping {
        groups: groups_map.into_values().collect(),
        moving,
    }
}

/// Training episode generator: scenes with touching pairs, one body pushed
/// into its neighbor so at least two bodies move with distinct twists. Frames
/// are sampled on the ground-truth raster so the same/different pair labels
/// are exact.
pub fn train_grouping_model(
    n_episodes: usize,
    noise_sigma: f64,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<GroupingModel, BfifError> {
    use crate::scene::{
        apply_push, generate_scene, oracle_flow, planar_displacement, render_labels,
        touching_pairs, GeneratorConfig, PushConfig,
    };
    // Different-body pairs only inform the classifier when the two bodies
    // actually moved differently; a chain push that translates both bodies
    // identically yields pairs indistinguishable from same-body ones, and
    // keeping them poisons the "different" density near the origin.
    const MIN_DIFF_GAP: f64 = 0.1;
    let gen_cfg = GeneratorConfig::default();
    let push_cfg = PushConfig::default();
    let mut pairs: Vec<(PairFeature, bool)> = vec![];
    for ep in 0..n_episodes {
        let ep_seed = mix_seed(&[seed, ep as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(ep_seed);
        let n_objects = rng.gen_range(4..=6);
        let Ok(scene) = generate_scene(ep_seed, n_objects, &gen_cfg) else {
            continue;
        };
        let touching = touching_pairs(&scene, gen_cfg.touch_eps);
        if touching.is_empty() {
            continue;
        }
        let (ia, ib) = touching[rng.gen_range(0..touching.len())];
        // Push body a through its centroid toward body b's centroid.
        let ca = scene.body(ia).unwrap().centroid_world();
        let cb = scene.body(ib).unwrap().centroid_world();
        let dir_w = [cb[0] - ca[0], cb[1] - ca[1]];
        let norm = (dir_w[0] * dir_w[0] + dir_w[1] * dir_w[1]).sqrt();
        let dir = [dir_w[0] / norm, dir_w[1] / norm];
        // Contact on the far side of a, slightly outside the boundary.
        let poly = scene.body(ia).unwrap().world_vertices();
        let diam = crate::scene::polygon_diameter(&poly);
        // A lateral offset gives the push a lever arm, so training covers
        // rotation-dominated motions, not just straight translations.
        let off = rng.gen_range(-0.35..0.35) * diam;
        let perp = [-dir[1], dir[0]];
        let contact = [
            ca[0] - dir[0] * diam * 0.45 + perp[0] * off,
            ca[1] - dir[1] * diam * 0.45 + perp[1] * off,
        ];
        let (row, col) = scene.world_to_pixel(contact);
        let action = PushAction {
            contact_point: (row.round().max(0.0) as u32, col.round().max(0.0) as u32),
            direction: dir,
            distance: 0.02,
        };
        let Ok(moved) = apply_push(&scene, &action, &push_cfg) else {
            continue;
        };
        let labels = render_labels(&scene);
        let Ok(flow) = oracle_flow(&scene, &moved, noise_sigma, mix_seed(&[ep_seed, 1])) else {
            continue;
        };
        let Ok((frames_t, frames_t1)) = sample_frames(&labels, &flow, cfg, mix_seed(&[ep_seed, 2]))
        else {
            continue;
        };
        let Ok(twists) = compute_bfifs(&frames_t, &frames_t1) else {
            continue;
        };
        let body_twist = |id: u16| -> Twist {
            let b0 = scene.body(id).unwrap();
            let b1 = moved.body(id).unwrap();
            if b0.pose == b1.pose {
                return Twist::zero();
            }
            let disp = planar_displacement(b0.pose, b1.pose);
            spatial_twist(&Pose::identity(), &disp, 1.0, TwistMethod::MatrixLog)
                .unwrap_or_else(|_| Twist::zero())
        };
        let moving: Vec<usize> = (0..twists.len())
            .filter(|&i| anchor_displacement(&frames_t[i], &frames_t1[i]) >= cfg.move_eps)
            .collect();
        for (a_pos, &i) in moving.iter().enumerate() {
            for &j in &moving[a_pos + 1..] {
                let same = frames_t[i].object_hint == frames_t[j].object_hint;
                if !same {
                    let gap = body_twist(frames_t[i].object_hint)
                        .sub(&body_twist(frames_t[j].object_hint))
                        .norm6();
                    if gap < MIN_DIFF_GAP {
                        continue;
                    }
                }
                pairs.push((pair_feature(&twists[i], &twists[j]), same));
            }
        }
    }
    fit_model(&pairs, noise_sigma)
}

pub fn save_model(path: &Path, model: &GroupingModel) -> Result<(), BfifError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&model.prior_same.to_le_bytes())?;
    w.write_all(&model.noise_sigma.to_le_bytes())?;
    for v in model.bw_same.iter().chain(&model.bw_diff) {
        w.write_all(&v.to_le_bytes())?;
    }
    for samples in [&model.samples_same, &model.samples_diff] {
        w.write_all(&(samples.len() as u64).to_le_bytes())?;
        for s in samples {
            w.write_all(&s[0].to_le_bytes())?;
            w.write_all(&s[1].to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<GroupingModel, BfifError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(BfifError::BadModel("missing RISKDE1 magic".into()));
    }
    let mut f64buf = [0u8; 8];
    let mut next = |r: &mut std::io::BufReader<std::fs::File>| -> Result<f64, BfifError> {
        r.read_exact(&mut f64buf)?;
        Ok(f64::from_le_bytes(f64buf))
    };
    let prior_same = next(&mut r)?;
    let noise_sigma = next(&mut r)?;
    let bw_same = [next(&mut r)?, next(&mut r)?];
    let bw_diff = [next(&mut r)?, next(&mut r)?];
    let mut planes = vec![];
    for _ in 0..2 {
        let n = next(&mut r)?.to_le_bytes();
        let n = u64::from_le_bytes(n) as usize;
        if n > 100_000_000 {
            return Err(BfifError::BadModel("sample count implausibly large".into()));
        }
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            samples.push([next(&mut r)?, next(&mut r)?]);
        }
        planes.push(samples);
    }
    let samples_diff = planes.pop().unwrap();
    let samples_same = planes.pop().unwrap();
    if !(0.0..=1.0).contains(&prior_same) {
        return Err(BfifError::BadModel(format!("prior {prior_same} outside [0,1]")));
    }
    Ok(GroupingModel {
        samples_same,
        samples_diff,
        bw_same,
        bw_diff,
        prior_same,
        noise_sigma,
    })
}
