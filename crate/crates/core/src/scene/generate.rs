//! Random cluttered-scene generation.
//!
//! Bodies are convex-ish random polygons placed so that a configurable number
//! of pairs end up touching (boundary distance below `touch_eps`), which is
//! what makes the static-segmentation oracle under-segment them.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::geom::{self, P2};
use super::{PlanarPose, RigidBody, SceneError, SceneState, Workspace};

#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub min_vertices: usize,
    pub max_vertices: usize,
    /// Body diameter range in meters.
    pub min_diameter: f64,
    pub max_diameter: f64,
    /// Boundary distance below which two bodies count as touching (m).
    pub touch_eps: f64,
    /// Minimum clearance for freely placed bodies (m). Kept above any
    /// downstream merge radius so bodies are either touching or clearly
    /// separate, never ambiguously close.
    pub free_clearance: f64,
    /// Keep-out margin from the workspace edge (m).
    pub margin: f64,
    pub max_attempts: usize,
    pub pixel_pitch: f64,
    pub image_size: (usize, usize),
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            min_vertices: 5,
            max_vertices: 10,
            min_diameter: 0.04,
            max_diameter: 0.10,
            touch_eps: 0.002,
            free_clearance: 0.02,
            margin: 0.06,
            max_attempts: 4000,
            pixel_pitch: 0.002,
            image_size: (256, 256),
        }
    }
}

impl GeneratorConfig {
    pub fn workspace(&self) -> Workspace {
        let half_w = self.image_size.1 as f64 * self.pixel_pitch * 0.5;
        let half_h = self.image_size.0 as f64 * self.pixel_pitch * 0.5;
        Workspace { min: [-half_w, -half_h], max: [half_w, half_h] }
    }
}

fn random_polygon(rng: &mut ChaCha8Rng, cfg: &GeneratorConfig) -> Vec<P2> {
    let n = rng.gen_range(cfg.min_vertices..=cfg.max_vertices);
    let target_d = rng.gen_range(cfg.min_diameter..=cfg.max_diameter);
    loop {
        let mut angles: Vec<f64> = (0..n)
            .map(|_| rng.gen::<f64>() * std::f64::consts::TAU)
            .collect();
        angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let min_gap = angles
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(std::f64::consts::TAU + angles[0] - angles[n - 1], f64::min);
        if min_gap < 0.15 {
            continue;
        }
        let mut poly: Vec<P2> = angles
            .iter()
            .map(|&a| {
                let r = 0.5 + 0.5 * rng.gen::<f64>();
                [r * a.cos(), r * a.sin()]
            })
            .collect();
        if geom::signed_area(&poly) <= 0.0 {
            continue;
        }
        let scale = target_d / geom::polygon_diameter(&poly);
        let c = geom::centroid(&poly);
        for p in &mut poly {
            p[0] = (p[0] - c[0]) * scale;
            p[1] = (p[1] - c[1]) * scale;
        }
        return poly;
    }
}

fn in_workspace(poly: &[P2], ws: &Workspace, margin: f64) -> bool {
    poly.iter().all(|p| {
        p[0] >= ws.min[0] + margin
            && p[0] <= ws.max[0] - margin
            && p[1] >= ws.min[1] + margin
            && p[1] <= ws.max[1] - margin
    })
}

fn world_poly(vertices: &[P2], pose: PlanarPose) -> Vec<P2> {
    vertices.iter().map(|&v| pose.apply(v)).collect()
}

fn count_touching(placed: &[Vec<P2>], touch_eps: f64) -> usize {
    let mut n = 0;
    for i in 0..placed.len() {
        for j in (i + 1)..placed.len() {
            let c = geom::polygon_clearance(&placed[i], &placed[j]);
            if c > 0.0 && c < touch_eps {
                n += 1;
            }
        }
    }
    n
}

/// Generate a cluttered scene. Deterministic for a fixed `(seed, n_objects,
/// config)`; at least `max(n_objects / 3, 1)` body pairs end up touching.
pub fn generate_scene(
    seed: u64,
    n_objects: usize,
    cfg: &GeneratorConfig,
) -> Result<SceneState, SceneError> {
    if !(2..=8).contains(&n_objects) {
        return Err(SceneError::BadObjectCount(n_objects));
    }
    let ws = cfg.workspace();
    let needed_touching = (n_objects / 3).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut attempts = 0usize;

    let mut bodies: Vec<RigidBody> = Vec::new();
    let mut placed: Vec<Vec<P2>> = Vec::new();

    while bodies.len() < n_objects {
        if attempts >= cfg.max_attempts {
            return Err(SceneError::PlacementFailure { seed, attempts });
        }
        attempts += 1;
        let vertices = random_polygon(&mut rng, cfg);
        let theta = rng.gen::<f64>() * std::f64::consts::TAU;
        let id = (bodies.len() + 1) as u16;

        let pose = if bodies.is_empty() || count_touching(&placed, cfg.touch_eps) >= needed_touching
        {
            // Free placement, kept clearly away from existing bodies.
            let x = rng.gen_range(ws.min[0] + cfg.margin..ws.max[0] - cfg.margin);
            let y = rng.gen_range(ws.min[1] + cfg.margin..ws.max[1] - cfg.margin);
            let pose = PlanarPose { theta, x, y };
            let poly = world_poly(&vertices, pose);
            if !in_workspace(&poly, &ws, cfg.margin) {
                continue;
            }
            if placed
                .iter()
                .any(|q| geom::polygon_clearance(q, &poly) < cfg.free_clearance)
            {
                continue;
            }
            pose
        } else {
            // Place touching a randomly chosen existing body: slide inwards
            // along a ray until just short of contact.
            let anchor_idx = rng.gen_range(0..bodies.len());
            let anchor_poly = placed[anchor_idx].clone();
            let anchor_c = geom::centroid(&anchor_poly);
            let phi = rng.gen::<f64>() * std::f64::consts::TAU;
            let dir = [phi.cos(), phi.sin()];
            let reach = geom::polygon_diameter(&anchor_poly) + cfg.max_diameter + 0.01;
            let at = |t: f64| {
                let pose = PlanarPose {
                    theta,
                    x: anchor_c[0] + dir[0] * t,
                    y: anchor_c[1] + dir[1] * t,
                };
                (pose, world_poly(&vertices, pose))
            };
            let (_, far_poly) = at(reach);
            if geom::polygons_overlap(&anchor_poly, &far_poly) {
                continue;
            }
            // Bisect for the contact distance along the ray.
            let (mut lo, mut hi) = (0.0f64, reach);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let (_, poly) = at(mid);
                if geom::polygons_overlap(&anchor_poly, &poly) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let gap = rng.gen_range(0.0002..0.0015);
            let (pose, poly) = at(hi + gap);
            let clearance = geom::polygon_clearance(&anchor_poly, &poly);
            if clearance <= 0.0 || clearance >= cfg.touch_eps {
                continue;
            }
            if !in_workspace(&poly, &ws, cfg.margin) {
                continue;
            }
            if placed
                .iter()
                .enumerate()
                .any(|(i, q)| i != anchor_idx && geom::polygon_clearance(q, &poly) <= 0.0)
            {
                continue;
            }
            pose
        };

        placed.push(world_poly(&vertices, pose));
        bodies.push(RigidBody { id, vertices, pose });
    }

    if count_touching(&placed, cfg.touch_eps) < needed_touching {
        return Err(SceneError::PlacementFailure { seed, attempts });
    }

    Ok(SceneState {
        workspace: ws,
        pixel_pitch: cfg.pixel_pitch,
        image_size: cfg.image_size,
        bodies,
    })
}

/// Pairs of body ids whose boundaries are closer than `touch_eps`.
pub fn touching_pairs(scene: &SceneState, touch_eps: f64) -> Vec<(u16, u16)> {
    let polys: Vec<Vec<P2>> = scene.bodies.iter().map(|b| b.world_vertices()).collect();
    let mut out = Vec::new();
    for i in 0..scene.bodies.len() {
        for j in (i + 1)..scene.bodies.len() {
            if geom::polygon_clearance(&polys[i], &polys[j]) < touch_eps {
                let (a, b) = (scene.bodies[i].id, scene.bodies[j].id);
                out.push((a.min(b), a.max(b)));
            }
        }
    }
    out.sort_unstable();
    out
}
