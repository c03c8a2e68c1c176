//! Uncertainty-driven push selection.
//!
//! The uncertainty heatmap is thresholded into "certain" object cores and
//! "uncertain" seam pixels, each clustered by k-means with elbow-selected k.
//! A pair of nearby certain clusters flanking an uncertain cluster is picked,
//! and a short push is emitted from the first cluster's boundary,
//! perpendicular to the line connecting the pair. When nothing qualifies the
//! planner reports no action, which ends the episode.

pub mod kmeans;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{PushAction, UncertaintyMap};
use crate::seed::mix_seed;
use kmeans::{elbow_k, kmeans};

#[derive(Debug, Error, PartialEq)]
pub enum PlannerError {
    #[error("no pixels to cluster")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterKind {
    Certain,
    Uncertain,
}

/// K-means clustering of one threshold band.
#[derive(Debug, Clone)]
pub struct ClusterSet {
    /// (row, col) centers.
    pub centers: Vec<[f64; 2]>,
    /// Cluster index per entry of `pixels`.
    pub assignments: Vec<usize>,
    pub pixels: Vec<(u32, u32)>,
    pub kind: ClusterKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    /// Lower bound of the "certain" band.
    pub l_u: u8,
    /// Lower bound of the "uncertain" band.
    pub l_l: u8,
    /// Max distance between a certain-cluster pair (m).
    pub d_a: f64,
    /// Max distance from an uncertain center to the pair segment (m).
    pub d_b: f64,
    /// Push travel distance (m).
    pub d_push: f64,
    pub k_max: usize,
    /// Perpendicularity tolerance (degrees).
    pub theta_perp_deg: f64,
    /// Meters per pixel, for applying the metric thresholds on the grid.
    pub pixel_pitch: f64,
    /// Elbow sensitivity (log-inertia curvature below this means k = 1).
    pub elbow_min_curvature: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            l_u: 150,
            l_l: 120,
            d_a: 0.10,
            d_b: 0.04,
            d_push: 0.02,
            k_max: 8,
            theta_perp_deg: 10.0,
            pixel_pitch: 0.002,
            elbow_min_curvature: std::f64::consts::LN_2,
        }
    }
}

/// Pixels with `lo <= U < hi`, row-major. `hi = 256` means unbounded above.
pub fn threshold_pixels(u: &UncertaintyMap, lo: u32, hi: u32) -> Vec<(u32, u32)> {
    assert!(lo < hi && hi <= 256);
    let mut out = Vec::new();
    for r in 0..u.height {
        for c in 0..u.width {
            let v = u.get(r, c) as u32;
            if v >= lo && v < hi {
                out.push((r as u32, c as u32));
            }
        }
    }
    out
}

/// Cluster pixels with k chosen by the elbow rule over k = 1..=k_max.
pub fn kmeans_elbow(
    pixels: &[(u32, u32)],
    k_max: usize,
    seed: u64,
    kind: ClusterKind,
    min_curvature: f64,
) -> Result<ClusterSet, PlannerError> {
    if pixels.is_empty() {
        return Err(PlannerError::EmptyInput);
    }
    let points: Vec<[f64; 2]> = pixels.iter().map(|&(r, c)| [r as f64, c as f64]).collect();
    let kmax = k_max.min(points.len());
    let mut runs = Vec::with_capacity(kmax);
    for k in 1..=kmax {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, k as u64]));
        runs.push(kmeans(&points, k, &mut rng));
    }
    let inertias: Vec<f64> = runs.iter().map(|r| r.2).collect();
    let k = elbow_k(&inertias, min_curvature);
    let (centers, assignments, _) = runs.swap_remove(k - 1);
    Ok(ClusterSet {
        centers,
        assignments,
        pixels: pixels.to_vec(),
        kind,
    })
}

/// Cluster pixels by 8-connectivity. The oracle's jitter never crosses the
/// planner thresholds, so threshold bands are solid islands and component
/// analysis recovers exactly one cluster per object core / seam band — where
/// the inertia-vs-k curve of scattered islands is often too smooth for the
/// elbow rule to pick a usable k.
pub fn cluster_connected(
    pixels: &[(u32, u32)],
    kind: ClusterKind,
) -> Result<ClusterSet, PlannerError> {
    if pixels.is_empty() {
        return Err(PlannerError::EmptyInput);
    }
    let index: std::collections::HashMap<(u32, u32), usize> =
        pixels.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let mut assignments = vec![usize::MAX; pixels.len()];
    let mut n_clusters = 0usize;
    for start in 0..pixels.len() {
        if assignments[start] != usize::MAX {
            continue;
        }
        let id = n_clusters;
        n_clusters += 1;
        let mut stack = vec![start];
        assignments[start] = id;
        while let Some(i) = stack.pop() {
            let (r, c) = pixels[i];
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let n = ((r as i64 + dr) as u32, (c as i64 + dc) as u32);
                    if let Some(&j) = index.get(&n) {
                        if assignments[j] == usize::MAX {
                            assignments[j] = id;
                            stack.push(j);
                        }
                    }
                }
            }
        }
    }
    let mut centers = vec![[0.0f64; 2]; n_clusters];
    let mut counts = vec![0usize; n_clusters];
    for (&(r, c), &a) in pixels.iter().zip(&assignments) {
        centers[a][0] += r as f64;
        centers[a][1] += c as f64;
        counts[a] += 1;
    }
    for (center, &n) in centers.iter_mut().zip(&counts) {
        center[0] /= n as f64;
        center[1] /= n as f64;
    }
    Ok(ClusterSet { centers, assignments, pixels: pixels.to_vec(), kind })
}

fn point_segment_dist_px(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 < 1e-30 {
        0.0
    } else {
        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    };
    let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

/// Boundary pixels of one cluster's assignment support (4-connected).
fn cluster_boundary(set: &ClusterSet, cluster: usize) -> Vec<(u32, u32)> {
    let support: std::collections::HashSet<(u32, u32)> = set
        .pixels
        .iter()
        .zip(&set.assignments)
        .filter(|&(_, &a)| a == cluster)
        .map(|(&p, _)| p)
        .collect();
    let mut out: Vec<(u32, u32)> = support
        .iter()
        .filter(|&&(r, c)| {
            [(r.wrapping_sub(1), c), (r + 1, c), (r, c.wrapping_sub(1)), (r, c + 1)]
                .iter()
                .any(|n| !support.contains(n))
        })
        .copied()
        .collect();
    out.sort_unstable();
    out
}

fn perpendicular_candidates(
    boundary: &[(u32, u32)],
    ci: [f64; 2],
    cj: [f64; 2],
    sin_tol: f64,
) -> Vec<(u32, u32)> {
    let axis = [cj[0] - ci[0], cj[1] - ci[1]];
    let axis_n = (axis[0] * axis[0] + axis[1] * axis[1]).sqrt();
    if axis_n < 1e-9 {
        return Vec::new();
    }
    let axis_u = [axis[0] / axis_n, axis[1] / axis_n];
    boundary
        .iter()
        .filter(|&&(r, c)| {
            let to_c = [ci[0] - r as f64, ci[1] - c as f64];
            let n = (to_c[0] * to_c[0] + to_c[1] * to_c[1]).sqrt();
            if n < 1e-9 {
                return false;
            }
            let dot = (to_c[0] * axis_u[0] + to_c[1] * axis_u[1]) / n;
            dot.abs() <= sin_tol
        })
        .copied()
        .collect()
}

/// Select a push, or `None` when no cluster pair qualifies or no
/// perpendicular boundary point exists.
pub fn find_action(u: &UncertaintyMap, cfg: &PlannerConfig, seed: u64) -> Option<PushAction> {
    let certain_px = threshold_pixels(u, cfg.l_u as u32, 256);
    let uncertain_px = if (cfg.l_l as u32) < (cfg.l_u as u32) {
        threshold_pixels(u, cfg.l_l as u32, cfg.l_u as u32)
    } else {
        Vec::new()
    };
    if certain_px.is_empty() || uncertain_px.is_empty() {
        return None;
    }
    let certain = cluster_connected(&certain_px, ClusterKind::Certain).ok()?;
    let uncertain = cluster_connected(&uncertain_px, ClusterKind::Uncertain).ok()?;

    // Qualifying certain pairs: close enough together, with an uncertain
    // center near the connecting segment. Argmin over pair distance.
    let mut best: Option<(f64, usize, usize)> = None;
    let m = certain.centers.len();
    for i in 0..m {
        for j in (i + 1)..m {
            let (ci, cj) = (certain.centers[i], certain.centers[j]);
            let d_px = ((ci[0] - cj[0]).powi(2) + (ci[1] - cj[1]).powi(2)).sqrt();
            let d_m = d_px * cfg.pixel_pitch;
            if d_m > cfg.d_a {
                continue;
            }
            let min_seam = uncertain
                .centers
                .iter()
                .map(|&cu| point_segment_dist_px(cu, ci, cj) * cfg.pixel_pitch)
                .fold(f64::INFINITY, f64::min);
            if min_seam > cfg.d_b {
                continue;
            }
            if best.map_or(true, |(bd, _, _)| d_m < bd) {
                best = Some((d_m, i, j));
            }
        }
    }
    let (_, i, j) = best?;

    let sin_tol = cfg.theta_perp_deg.to_radians().sin();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 3]));
    // Try pushing cluster i first, then j.
    for (pi, pj) in [(i, j), (j, i)] {
        let boundary = cluster_boundary(&certain, pi);
        let cands =
            perpendicular_candidates(&boundary, certain.centers[pi], certain.centers[pj], sin_tol);
        if cands.is_empty() {
            continue;
        }
        let (r, c) = cands[rng.gen_range(0..cands.len())];
        let ci = certain.centers[pi];
        let dir = [ci[1] - c as f64, ci[0] - r as f64]; // (du along cols, dv along rows)
        let n = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
        if n < 1e-9 {
            continue;
        }
        return Some(PushAction {
            contact_point: (r, c),
            direction: [dir[0] / n, dir[1] / n],
            distance: cfg.d_push,
        });
    }
    None
}
