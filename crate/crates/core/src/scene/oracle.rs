//! Simulator-backed perception oracles.
//!
//! `oracle_static_seg` stands in for a static segmentation network: it starts
//! from the ground-truth raster and merges touching bodies with probability
//! `p_merge`, emitting an uncertainty map whose seam band falls between the
//! planner's two thresholds. `oracle_flow` stands in for an optical-flow
//! network: exact rigid flow plus optional Gaussian pixel noise.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::seed::mix_seed;

use super::generate::touching_pairs;
use super::raster::render_labels;
use super::{FlowField, LabelMask, SceneError, SceneState, UncertaintyMap};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Probability that a touching pair is merged into one region.
    pub p_merge: f64,
    /// Boundary distance below which bodies count as touching (m). Wider
    /// than the generator's placement contact, so a merged pair stays merged
    /// in the baseline even after a small push pulls it slightly apart — a
    /// real under-segmenting network does not change its mind over a few
    /// millimeters.
    pub touch_eps: f64,
    /// Confidence written deep inside regions.
    pub u_core: u8,
    /// Confidence written across merged-pair contact seams.
    pub u_ambig: u8,
    /// Confidence written on other region boundaries.
    pub u_edge: u8,
    /// Erosion depth (px) separating core from edge.
    pub core_margin: usize,
    /// Half-width (px, Chebyshev) of the seam band.
    pub band_px: usize,
    /// Max magnitude of the per-pixel integer jitter.
    pub jitter: i32,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            p_merge: 1.0,
            touch_eps: 0.012,
            u_core: 200,
            u_ambig: 130,
            u_edge: 90,
            core_margin: 3,
            band_px: 3,
            jitter: 10,
        }
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }
    fn find(&mut self, i: usize) -> usize {
        if self.0[i] != i {
            let r = self.find(self.0[i]);
            self.0[i] = r;
        }
        self.0[i]
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Capped Chebyshev distance transform to the support of `label` in `mask`.
fn chebyshev_dist_to(mask: &LabelMask, label: u16, cap: usize) -> Vec<u8> {
    let (h, w) = (mask.height, mask.width);
    let far = (cap + 1) as u8;
    let mut dist = vec![far; h * w];
    let mut frontier: Vec<(usize, usize)> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) == label {
                dist[r * w + c] = 0;
                frontier.push((r, c));
            }
        }
    }
    for d in 1..=cap as u8 {
        let mut next = Vec::new();
        for &(r, c) in &frontier {
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                        continue;
                    }
                    let idx = nr as usize * w + nc as usize;
                    if dist[idx] > d {
                        dist[idx] = d;
                        next.push((nr as usize, nc as usize));
                    }
                }
            }
        }
        frontier = next;
    }
    dist
}

/// Depth (4-connected) of each foreground pixel inside its region; boundary
/// pixels have depth 1.
fn region_depth(mask: &LabelMask) -> Vec<u32> {
    let (h, w) = (mask.height, mask.width);
    let mut depth = vec![0u32; h * w];
    let mut queue = std::collections::VecDeque::new();
    for r in 0..h {
        for c in 0..w {
            let v = mask.get(r, c);
            if v == 0 {
                continue;
            }
            let mut boundary = r == 0 || c == 0 || r == h - 1 || c == w - 1;
            if !boundary {
                boundary = mask.get(r - 1, c) != v
                    || mask.get(r + 1, c) != v
                    || mask.get(r, c - 1) != v
                    || mask.get(r, c + 1) != v;
            }
            if boundary {
                depth[r * w + c] = 1;
                queue.push_back((r, c));
            }
        }
    }
    while let Some((r, c)) = queue.pop_front() {
        let v = mask.get(r, c);
        let d = depth[r * w + c];
        for (nr, nc) in [
            (r.wrapping_sub(1), c),
            (r + 1, c),
            (r, c.wrapping_sub(1)),
            (r, c + 1),
        ] {
            if nr >= h || nc >= w {
                continue;
            }
            if mask.get(nr, nc) == v && depth[nr * w + nc] == 0 {
                depth[nr * w + nc] = d + 1;
                queue.push_back((nr, nc));
            }
        }
    }
    depth
}

/// Under-segmenting static oracle: ground-truth labels with touching pairs
/// merged, plus an uncertainty heatmap. Deterministic in `(scene, seed)`; the
/// merge decision for a pair depends only on `(seed, ids)` so a pair stays
/// merged while it keeps touching.
pub fn oracle_static_seg(
    scene: &SceneState,
    cfg: &OracleConfig,
    seed: u64,
) -> (LabelMask, UncertaintyMap) {
    let gt = render_labels(scene);
    let (h, w) = (gt.height, gt.width);

    let pairs = touching_pairs(scene, cfg.touch_eps);
    let mut uf = UnionFind::new(scene.bodies.len() + 1);
    let mut id_index = std::collections::BTreeMap::new();
    for (i, b) in scene.bodies.iter().enumerate() {
        id_index.insert(b.id, i);
    }
    let mut merged_pairs: Vec<(u16, u16)> = Vec::new();
    for &(a, b) in &pairs {
        let mut pr = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, a as u64, b as u64]));
        if pr.gen::<f64>() < cfg.p_merge {
            uf.union(id_index[&a], id_index[&b]);
            merged_pairs.push((a, b));
        }
    }
    // Merged region label = smallest body id in its component.
    let mut label_of = vec![0u16; u16::MAX as usize + 1];
    for b in &scene.bodies {
        let root = uf.find(id_index[&b.id]);
        let root_id = scene
            .bodies
            .iter()
            .filter(|o| uf.find(id_index[&o.id]) == root)
            .map(|o| o.id)
            .min()
            .unwrap();
        label_of[b.id as usize] = root_id;
    }

    let mut mask = LabelMask::zeros(h, w);
    for i in 0..h * w {
        mask.data[i] = label_of[gt.data[i] as usize];
    }

    // Fill the thin background gap between merged bodies so each merged
    // region stays connected, and remember seam pixels.
    let mut seam = vec![false; h * w];
    for &(a, b) in &merged_pairs {
        let da = chebyshev_dist_to(&gt, a, 3);
        let db = chebyshev_dist_to(&gt, b, 3);
        for i in 0..h * w {
            let (x, y) = (da[i] as usize, db[i] as usize);
            if mask.data[i] == 0 && x + y <= 3 {
                mask.data[i] = label_of[a as usize];
            }
            if x <= 2 && y <= 2 {
                seam[i] = true;
            }
        }
    }
    for i in 0..h * w {
        seam[i] &= mask.data[i] != 0;
    }

    // Dilate the seam within foreground into a band.
    let mut band = seam.clone();
    for _ in 0..cfg.band_px {
        let prev = band.clone();
        for r in 0..h {
            for c in 0..w {
                if prev[r * w + c] {
                    continue;
                }
                if mask.get(r, c) == 0 {
                    continue;
                }
                let mut near = false;
                'n: for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                        if nr >= 0 && nc >= 0 && (nr as usize) < h && (nc as usize) < w
                            && prev[nr as usize * w + nc as usize]
                        {
                            near = true;
                            break 'n;
                        }
                    }
                }
                if near {
                    band[r * w + c] = true;
                }
            }
        }
    }

    let depth = region_depth(&mask);
    let mut umap = UncertaintyMap::zeros(h, w);
    let mut jrng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x6a69_7474]));
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if mask.data[i] == 0 {
                continue;
            }
            let base = if band[i] {
                cfg.u_ambig
            } else if depth[i] > cfg.core_margin as u32 {
                cfg.u_core
            } else {
                cfg.u_edge
            };
            let jitter = jrng.gen_range(-cfg.jitter..=cfg.jitter);
            umap.data[i] = (base as i32 + jitter).clamp(0, 255) as u8;
        }
    }

    (mask, umap)
}

/// Exact rigid optical flow between two snapshots of the same body set, with
/// optional per-component Gaussian noise on foreground pixels.
pub fn oracle_flow(
    scene_t: &SceneState,
    scene_t1: &SceneState,
    noise_sigma: f64,
    seed: u64,
) -> Result<FlowField, SceneError> {
    let ids_t: Vec<u16> = {
        let mut v: Vec<u16> = scene_t.bodies.iter().map(|b| b.id).collect();
        v.sort_unstable();
        v
    };
    let ids_t1: Vec<u16> = {
        let mut v: Vec<u16> = scene_t1.bodies.iter().map(|b| b.id).collect();
        v.sort_unstable();
        v
    };
    if ids_t != ids_t1 {
        return Err(SceneError::MismatchedScenes);
    }

    let labels = render_labels(scene_t);
    let (h, w) = (labels.height, labels.width);
    let mut flow = FlowField::zeros(h, w);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x666c_6f77]));
    let normal = |rng: &mut ChaCha8Rng| {
        // Box-Muller.
        let u1: f64 = rng.gen::<f64>().max(1e-12);
        let u2: f64 = rng.gen::<f64>();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    for r in 0..h {
        for c in 0..w {
            let b = labels.get(r, c);
            if b == 0 {
                continue;
            }
            let body_t = scene_t.body(b).unwrap();
            let body_t1 = scene_t1.body(b).unwrap();
            let wp = scene_t.pixel_to_world(r as f64, c as f64);
            // Body-frame point, then forward through the t+1 pose.
            let (s0, c0) = body_t.pose.theta.sin_cos();
            let lx = wp[0] - body_t.pose.x;
            let ly = wp[1] - body_t.pose.y;
            let local = [c0 * lx + s0 * ly, -s0 * lx + c0 * ly];
            let wp1 = body_t1.pose.apply(local);
            let mut du = (wp1[0] - wp[0]) / scene_t.pixel_pitch;
            let mut dv = (wp1[1] - wp[1]) / scene_t.pixel_pitch;
            if noise_sigma > 0.0 {
                du += noise_sigma * normal(&mut rng);
                dv += noise_sigma * normal(&mut rng);
            }
            flow.set(r, c, du, dv);
        }
    }
    Ok(flow)
}

#[cfg(test)]
mod tests {
    use super::super::generate::{generate_scene, GeneratorConfig};
    use super::super::push::{apply_push, PushConfig};
    use super::super::{PlanarPose, PushAction, RigidBody, Workspace};
    use super::*;

    fn scene_with(bodies: Vec<RigidBody>) -> SceneState {
        SceneState {
            workspace: Workspace { min: [-0.256, -0.256], max: [0.256, 0.256] },
            pixel_pitch: 0.002,
            image_size: (256, 256),
            bodies,
        }
    }

    fn square(id: u16, half: f64, x: f64, y: f64) -> RigidBody {
        RigidBody {
            id,
            vertices: vec![
                [-half, -half],
                [half, -half],
                [half, half],
                [-half, half],
            ],
            pose: PlanarPose { theta: 0.0, x, y },
        }
    }

    #[test]
    fn separated_bodies_match_ground_truth() {
        let scene = scene_with(vec![
            square(1, 0.02, -0.08, 0.0),
            square(2, 0.02, 0.08, 0.0),
        ]);
        let cfg = OracleConfig::default();
        let (mask, umap) = oracle_static_seg(&scene, &cfg, 3);
        assert_eq!(mask, render_labels(&scene));
        // No uncertain-band values when nothing is merged.
        assert!(umap.data.iter().all(|&u| !(120..150).contains(&u)));
    }

    #[test]
    fn touching_bodies_merge_with_seam_band() {
        let scene = scene_with(vec![
            square(1, 0.02, -0.0201, 0.0),
            square(2, 0.02, 0.0201, 0.0),
        ]);
        let cfg = OracleConfig { p_merge: 1.0, ..OracleConfig::default() };
        let (mask, umap) = oracle_static_seg(&scene, &cfg, 3);
        let labels = mask.labels();
        assert_eq!(labels, vec![1], "merged region should carry the lower id");
        let n_seam = umap.data.iter().filter(|&&u| (120..150).contains(&u)).count();
        assert!(n_seam > 0, "expected seam-band pixels between thresholds");
    }

    #[test]
    fn p_merge_zero_is_identity() {
        let scene = generate_scene(5, 4, &GeneratorConfig::default()).unwrap();
        let cfg = OracleConfig { p_merge: 0.0, ..OracleConfig::default() };
        let (mask, _) = oracle_static_seg(&scene, &cfg, 9);
        assert_eq!(mask, render_labels(&scene));
    }

    #[test]
    fn oracle_never_over_segments() {
        let gen = GeneratorConfig::default();
        for seed in 0..6u64 {
            let Ok(scene) = generate_scene(seed, 5, &gen) else { continue };
            let gt = render_labels(&scene);
            let (mask, _) = oracle_static_seg(&scene, &OracleConfig::default(), seed);
            // Every ground-truth region maps into exactly one oracle region.
            for body in &scene.bodies {
                let mut targets = std::collections::BTreeSet::new();
                for i in 0..gt.data.len() {
                    if gt.data[i] == body.id {
                        targets.insert(mask.data[i]);
                    }
                }
                assert!(targets.len() <= 1, "gt region {} split", body.id);
            }
        }
    }

    #[test]
    fn flow_zero_for_static_scene() {
        let scene = scene_with(vec![square(1, 0.02, 0.0, 0.0)]);
        let flow = oracle_flow(&scene, &scene, 0.0, 1).unwrap();
        assert!(flow.du.iter().chain(flow.dv.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn flow_translation_unit_conversion() {
        let scene = scene_with(vec![square(1, 0.02, 0.0, 0.0)]);
        let mut moved = scene.clone();
        moved.bodies[0].pose.x += 0.01;
        let flow = oracle_flow(&scene, &moved, 0.0, 1).unwrap();
        let labels = render_labels(&scene);
        for r in 0..labels.height {
            for c in 0..labels.width {
                if labels.get(r, c) == 1 {
                    let (du, dv) = flow.at(r, c);
                    assert!((du - 5.0).abs() < 1e-9 && dv.abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn flow_rotation_scales_with_radius() {
        let scene = scene_with(vec![square(1, 0.03, 0.0, 0.0)]);
        let mut moved = scene.clone();
        moved.bodies[0].pose.theta += 0.1;
        let flow = oracle_flow(&scene, &moved, 0.0, 1).unwrap();
        let labels = render_labels(&scene);
        for r in 0..labels.height {
            for c in 0..labels.width {
                if labels.get(r, c) == 1 {
                    let (du, dv) = flow.at(r, c);
                    let wp = scene.pixel_to_world(r as f64, c as f64);
                    // Per-pixel rigid-transform oracle.
                    let (s, co) = 0.1f64.sin_cos();
                    let expect = [
                        (co * wp[0] - s * wp[1] - wp[0]) / scene.pixel_pitch,
                        (s * wp[0] + co * wp[1] - wp[1]) / scene.pixel_pitch,
                    ];
                    assert!((du - expect[0]).abs() < 1e-9 && (dv - expect[1]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn flow_transports_labels_consistently() {
        // Aggregate over several scenes. Misses are the boundary band between
        // the integer-rounded destination lattice and the fractionally
        // shifted polygon: roughly perimeter * fractional residual, ~2-3% at
        // this resolution, independent of the flow itself being exact.
        let gen = GeneratorConfig { min_diameter: 0.07, ..GeneratorConfig::default() };
        let (mut hit, mut total) = (0usize, 0usize);
        for seed in [11u64, 12, 13, 14, 15] {
            let scene = generate_scene(seed, 4, &gen).unwrap();
            let labels_t = render_labels(&scene);
            // Push some body.
            let body = &scene.bodies[0];
            let c = body.centroid_world();
            let poly = body.world_vertices();
            // Push from an edge midpoint toward the centroid, as the planner
            // does; a near-vertex contact would maximize lever-arm rotation.
            let mid = [
                0.5 * (poly[0][0] + poly[1][0]),
                0.5 * (poly[0][1] + poly[1][1]),
            ];
            let contact = [mid[0] * 0.98 + c[0] * 0.02, mid[1] * 0.98 + c[1] * 0.02];
            let to_c = [c[0] - contact[0], c[1] - contact[1]];
            let n = (to_c[0] * to_c[0] + to_c[1] * to_c[1]).sqrt();
            let (row, col) = scene.world_to_pixel(contact);
            let action = PushAction {
                contact_point: (row.round() as u32, col.round() as u32),
                direction: [to_c[0] / n, to_c[1] / n],
                distance: 0.02,
            };
            let moved = apply_push(&scene, &action, &PushConfig::default()).unwrap();
            let labels_t1 = render_labels(&moved);
            let flow = oracle_flow(&scene, &moved, 0.0, 1).unwrap();
            let moved_ids: Vec<u16> = scene
                .bodies
                .iter()
                .zip(&moved.bodies)
                .filter(|(a, b)| a.pose != b.pose)
                .map(|(a, _)| a.id)
                .collect();
            for r in 0..labels_t.height {
                for c in 0..labels_t.width {
                    let l = labels_t.get(r, c);
                    if l == 0 || !moved_ids.contains(&l) {
                        continue;
                    }
                    let (du, dv) = flow.at(r, c);
                    let nr = (r as f64 + dv).round() as i64;
                    let nc = (c as f64 + du).round() as i64;
                    if nr < 0
                        || nc < 0
                        || nr >= labels_t.height as i64
                        || nc >= labels_t.width as i64
                    {
                        continue;
                    }
                    total += 1;
                    if labels_t1.get(nr as usize, nc as usize) == l {
                        hit += 1;
                    }
                }
            }
        }
        assert!(total > 0);
        assert!(
            hit as f64 / total as f64 >= 0.97,
            "flow consistency {} / {}",
            hit,
            total
        );
    }
}
