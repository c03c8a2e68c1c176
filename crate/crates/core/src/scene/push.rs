//! Quasi-static push application.
//!
//! The contacted body translates by the push vector and picks up a
//! deterministic lever-arm rotation about its centroid. Bodies it is shoved
//! into are resolved by projecting the overlap out along the push direction,
//! so a chain of touching bodies moves progressively less the further down
//! the chain it sits.

use super::geom::{self, P2};
use super::{PlanarPose, PushAction, SceneError, SceneState};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PushConfig {
    /// Max distance (m) from the contact point to a body boundary.
    pub contact_eps: f64,
    /// Dimensionless gain of the lever-arm rotation.
    pub rot_gain: f64,
    /// Rotation cap per push (rad).
    pub max_rot: f64,
    /// Upper bound on how many bodies a single push may move.
    pub max_chain: usize,
    /// Clearance left between bodies after penetration resolution (m).
    pub resolve_gap: f64,
}

impl Default for PushConfig {
    fn default() -> Self {
        Self {
            contact_eps: 0.008,
            rot_gain: 0.8,
            max_rot: 0.3,
            max_chain: 8,
            resolve_gap: 2e-5,
        }
    }
}

fn translated(poly: &[P2], dx: f64, dy: f64) -> Vec<P2> {
    poly.iter().map(|p| [p[0] + dx, p[1] + dy]).collect()
}

/// Apply a push and return the resulting scene. Bodies outside the contact
/// chain keep their poses bit-exactly.
pub fn apply_push(
    scene: &SceneState,
    action: &PushAction,
    cfg: &PushConfig,
) -> Result<SceneState, SceneError> {
    let contact = scene.pixel_to_world(action.contact_point.0 as f64, action.contact_point.1 as f64);
    let dir = [action.direction[0], action.direction[1]];

    // Contacted body: containing the point, or nearest boundary within eps.
    let mut best: Option<(usize, f64)> = None;
    for (i, body) in scene.bodies.iter().enumerate() {
        let poly = body.world_vertices();
        let d = if geom::point_in_polygon(contact, &poly) {
            0.0
        } else {
            geom::point_polygon_boundary_dist(contact, &poly)
        };
        if d <= cfg.contact_eps && best.map_or(true, |(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    let (pushed_idx, _) = best
        .ok_or(SceneError::NoContact(action.contact_point.0, action.contact_point.1))?;

    let mut out = scene.clone();

    // Lever-arm rotation from the contact offset relative to the centroid.
    let body = &scene.bodies[pushed_idx];
    let centroid_w = body.centroid_world();
    let r = geom::sub(contact, centroid_w);
    let lever = geom::cross(r, dir);
    let delta_theta = (cfg.rot_gain * action.distance * lever / (geom::dot(r, r) + 1e-6))
        .clamp(-cfg.max_rot, cfg.max_rot);

    let centroid_b = geom::centroid(&body.vertices);
    let new_theta = body.pose.theta + delta_theta;
    let target = [
        centroid_w[0] + action.distance * dir[0],
        centroid_w[1] + action.distance * dir[1],
    ];
    let (s, c) = new_theta.sin_cos();
    out.bodies[pushed_idx].pose = PlanarPose {
        theta: new_theta,
        x: target[0] - (c * centroid_b[0] - s * centroid_b[1]),
        y: target[1] - (s * centroid_b[0] + c * centroid_b[1]),
    };

    // Chain resolution: shove overlapped bodies out along the push direction.
    let mut moved = vec![pushed_idx];
    let mut polys: Vec<Vec<P2>> = out.bodies.iter().map(|b| b.world_vertices()).collect();
    for _ in 0..64 {
        let mut conflict: Option<(usize, usize)> = None;
        'scan: for &m in &moved {
            for j in 0..out.bodies.len() {
                if j == m {
                    continue;
                }
                if geom::polygons_overlap(&polys[m], &polys[j]) {
                    conflict = Some((m, j));
                    break 'scan;
                }
            }
        }
        let Some((m, j)) = conflict else { break };
        // Shift the body further along the push direction; the other one
        // stays where the push put it.
        let proj = |idx: usize| {
            let c = geom::centroid(&polys[idx]);
            c[0] * dir[0] + c[1] * dir[1]
        };
        let (keep, shift) = if moved.contains(&j) {
            if proj(j) >= proj(m) { (m, j) } else { (j, m) }
        } else {
            (m, j)
        };
        if !moved.contains(&shift) {
            if moved.len() >= cfg.max_chain {
                break;
            }
            moved.push(shift);
        }
        // Doubling then bisection for the minimal clearing shift.
        let clear = |s: f64| {
            let p = translated(&polys[shift], dir[0] * s, dir[1] * s);
            !geom::polygons_overlap(&polys[keep], &p)
        };
        let mut hi = action.distance.max(1e-3);
        let mut guard = 0;
        while !clear(hi) && guard < 16 {
            hi *= 2.0;
            guard += 1;
        }
        let mut lo = 0.0f64;
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if clear(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let s = hi + cfg.resolve_gap;
        let b = &mut out.bodies[shift];
        b.pose.x += dir[0] * s;
        b.pose.y += dir[1] * s;
        polys[shift] = out.bodies[shift].world_vertices();
    }

    Ok(out)
}
