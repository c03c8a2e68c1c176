//! Segmentation metrics: Hungarian-matched Overlap and Boundary P/R/F plus
//! the ≥0.75-F object accuracy rate.
//!
//! Matching maximizes total pairwise Overlap F between predicted and
//! ground-truth objects; background (label 0) never participates. Unmatched
//! predictions cost precision only, unmatched ground truth costs recall only.

use std::collections::{BTreeMap, BTreeSet};

use crate::scene::LabelMask;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("ground truth has no objects")]
    NoGtObjects,
    #[error("mask shapes differ: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub overlap_p: f64,
    pub overlap_r: f64,
    pub overlap_f: f64,
    pub boundary_p: f64,
    pub boundary_r: f64,
    pub boundary_f: f64,
    pub object_accuracy: f64,
    pub n_gt_objects: usize,
    pub n_pred_objects: usize,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "scene_id,push_index,method,overlap_p,overlap_r,overlap_f,boundary_p,boundary_r,boundary_f,object_acc";

    pub fn csv_row(&self, scene_id: u64, push_index: usize, method: &str) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            scene_id,
            push_index,
            method,
            self.overlap_p,
            self.overlap_r,
            self.overlap_f,
            self.boundary_p,
            self.boundary_r,
            self.boundary_f,
            self.object_accuracy
        )
    }
}

fn f_measure(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Per-mask-pair label statistics: sizes of each positive label's support and
/// the joint intersection counts.
struct PairStats {
    pred_labels: Vec<u16>,
    gt_labels: Vec<u16>,
    pred_size: BTreeMap<u16, usize>,
    gt_size: BTreeMap<u16, usize>,
    inter: BTreeMap<(u16, u16), usize>,
}

impl PairStats {
    fn build(pred: &LabelMask, gt: &LabelMask) -> Result<Self, EvalError> {
        if pred.height != gt.height || pred.width != gt.width {
            return Err(EvalError::ShapeMismatch(pred.height, pred.width, gt.height, gt.width));
        }
        let mut pred_size = BTreeMap::new();
        let mut gt_size = BTreeMap::new();
        let mut inter = BTreeMap::new();
        for (p, g) in pred.data.iter().zip(&gt.data) {
            if *p != 0 {
                *pred_size.entry(*p).or_insert(0) += 1;
            }
            if *g != 0 {
                *gt_size.entry(*g).or_insert(0) += 1;
            }
            if *p != 0 && *g != 0 {
                *inter.entry((*p, *g)).or_insert(0) += 1;
            }
        }
        Ok(Self {
            pred_labels: pred_size.keys().copied().collect(),
            gt_labels: gt_size.keys().copied().collect(),
            pred_size,
            gt_size,
            inter,
        })
    }

    /// Pairwise Overlap F between one predicted object and one GT object.
    fn pair_f(&self, p: u16, g: u16) -> f64 {
        let i = *self.inter.get(&(p, g)).unwrap_or(&0) as f64;
        if i == 0.0 {
            return 0.0;
        }
        2.0 * i / (self.pred_size[&p] + self.gt_size[&g]) as f64
    }
}

/// Minimum-cost perfect assignment on a square matrix; returns `row -> col`.
/// Classic O(n^3) potentials formulation; strict comparisons keep ties on the
/// lowest column index, which makes the matching deterministic.
fn hungarian_min(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut ans = vec![usize::MAX; n];
    for j in 1..=n {
        if p[j] > 0 {
            ans[p[j] - 1] = j - 1;
        }
    }
    ans
}

fn match_stats(stats: &PairStats) -> Vec<(u16, u16)> {
    let np = stats.pred_labels.len();
    let ng = stats.gt_labels.len();
    if np == 0 || ng == 0 {
        return vec![];
    }
    let n = np.max(ng);
    // Maximize total F: negate and pad to square with zeros (no-match slots).
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i < np && j < ng {
                        -stats.pair_f(stats.pred_labels[i], stats.gt_labels[j])
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let assign = hungarian_min(&cost);
    let mut out = vec![];
    for (i, &j) in assign.iter().enumerate().take(np) {
        if j < ng && stats.pair_f(stats.pred_labels[i], stats.gt_labels[j]) > 0.0 {
            out.push((stats.pred_labels[i], stats.gt_labels[j]));
        }
    }
    out
}

/// Maximum-total-F matching of predicted objects to ground-truth objects.
/// Zero-F pairs are dropped; empty masks yield an empty mapping.
pub fn match_objects(pred: &LabelMask, gt: &LabelMask) -> Result<Vec<(u16, u16)>, EvalError> {
    Ok(match_stats(&PairStats::build(pred, gt)?))
}

pub fn overlap_prf(pred: &LabelMask, gt: &LabelMask) -> Result<(f64, f64, f64), EvalError> {
    let stats = PairStats::build(pred, gt)?;
    let matching = match_stats(&stats);
    let matched_inter: usize = matching
        .iter()
        .map(|&(p, g)| *stats.inter.get(&(p, g)).unwrap_or(&0))
        .sum();
    let pred_total: usize = stats.pred_size.values().sum();
    let gt_total: usize = stats.gt_size.values().sum();
    let p = if pred_total == 0 { 0.0 } else { matched_inter as f64 / pred_total as f64 };
    let r = if gt_total == 0 { 0.0 } else { matched_inter as f64 / gt_total as f64 };
    Ok((p, r, f_measure(p, r)))
}

/// Inner 4-connected boundary of one label's support: pixels of the label
/// with at least one 4-neighbor outside it (image border counts as outside).
fn inner_boundary(mask: &LabelMask, label: u16) -> Vec<(usize, usize)> {
    let (h, w) = (mask.height, mask.width);
    let mut out = vec![];
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) != label {
                continue;
            }
            let edge = r == 0
                || c == 0
                || r == h - 1
                || c == w - 1
                || mask.get(r - 1, c) != label
                || mask.get(r + 1, c) != label
                || mask.get(r, c - 1) != label
                || mask.get(r, c + 1) != label;
            if edge {
                out.push((r, c));
            }
        }
    }
    out
}

/// Marks every pixel within Chebyshev distance `tol` of a point set.
fn dilate_chebyshev(
    points: &[(usize, usize)],
    h: usize,
    w: usize,
    tol: usize,
) -> Vec<bool> {
    let mut hit = vec![false; h * w];
    let t = tol as i64;
    for &(r, c) in points {
        for dr in -t..=t {
            for dc in -t..=t {
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if nr >= 0 && nc >= 0 && (nr as usize) < h && (nc as usize) < w {
                    hit[nr as usize * w + nc as usize] = true;
                }
            }
        }
    }
    hit
}

pub fn boundary_prf(
    pred: &LabelMask,
    gt: &LabelMask,
    tol_px: usize,
) -> Result<(f64, f64, f64), EvalError> {
    let stats = PairStats::build(pred, gt)?;
    let matching = match_stats(&stats);
    let (h, w) = (pred.height, pred.width);

    let mut pred_total = 0usize;
    let mut gt_total = 0usize;
    let mut pred_hits = 0usize;
    let mut gt_hits = 0usize;
    let matched_gt: BTreeMap<u16, u16> = matching.iter().map(|&(p, g)| (p, g)).collect();
    let matched_pred: BTreeMap<u16, u16> = matching.iter().map(|&(p, g)| (g, p)).collect();

    let mut gt_boundaries: BTreeMap<u16, Vec<(usize, usize)>> = BTreeMap::new();
    for &g in &stats.gt_labels {
        gt_boundaries.insert(g, inner_boundary(gt, g));
    }
    let mut pred_boundaries: BTreeMap<u16, Vec<(usize, usize)>> = BTreeMap::new();
    for &p in &stats.pred_labels {
        pred_boundaries.insert(p, inner_boundary(pred, p));
    }

    for &p in &stats.pred_labels {
        let pb = &pred_boundaries[&p];
        pred_total += pb.len();
        if let Some(&g) = matched_gt.get(&p) {
            let near = dilate_chebyshev(&gt_boundaries[&g], h, w, tol_px);
            pred_hits += pb.iter().filter(|&&(r, c)| near[r * w + c]).count();
        }
    }
    for &g in &stats.gt_labels {
        let gb = &gt_boundaries[&g];
        gt_total += gb.len();
        if let Some(&p) = matched_pred.get(&g) {
            let near = dilate_chebyshev(&pred_boundaries[&p], h, w, tol_px);
            gt_hits += gb.iter().filter(|&&(r, c)| near[r * w + c]).count();
        }
    }

    let p = if pred_total == 0 { 0.0 } else { pred_hits as f64 / pred_total as f64 };
    let r = if gt_total == 0 { 0.0 } else { gt_hits as f64 / gt_total as f64 };
    Ok((p, r, f_measure(p, r)))
}

/// Fraction of GT objects whose matched prediction reaches pairwise Overlap
/// F ≥ 0.75; unmatched GT objects count as failures.
pub fn object_accuracy(pred: &LabelMask, gt: &LabelMask) -> Result<f64, EvalError> {
    let stats = PairStats::build(pred, gt)?;
    if stats.gt_labels.is_empty() {
        return Err(EvalError::NoGtObjects);
    }
    let matching = match_stats(&stats);
    let good: BTreeSet<u16> = matching
        .iter()
        .filter(|&&(p, g)| stats.pair_f(p, g) >= 0.75)
        .map(|&(_, g)| g)
        .collect();
    Ok(good.len() as f64 / stats.gt_labels.len() as f64)
}

/// All metrics for one mask pair.
pub fn evaluate(pred: &LabelMask, gt: &LabelMask, tol_px: usize) -> Result<MetricsReport, EvalError> {
    let stats = PairStats::build(pred, gt)?;
    let (op, or, of) = overlap_prf(pred, gt)?;
    let (bp, br, bf) = boundary_prf(pred, gt, tol_px)?;
    Ok(MetricsReport {
        overlap_p: op,
        overlap_r: or,
        overlap_f: of,
        boundary_p: bp,
        boundary_r: br,
        boundary_f: bf,
        object_accuracy: object_accuracy(pred, gt)?,
        n_gt_objects: stats.gt_labels.len(),
        n_pred_objects: stats.pred_labels.len(),
    })
}

/// Exhaustive assignment search; test oracle for the Hungarian matcher.
pub fn brute_force_total_f(pred: &LabelMask, gt: &LabelMask) -> Result<f64, EvalError> {
    let stats = PairStats::build(pred, gt)?;
    fn rec(stats: &PairStats, i: usize, used: &mut Vec<bool>) -> f64 {
        if i == stats.pred_labels.len() {
            return 0.0;
        }
        // Leave prediction i unmatched.
        let mut best = rec(stats, i + 1, used);
        for j in 0..stats.gt_labels.len() {
            if used[j] {
                continue;
            }
            used[j] = true;
            let f = stats.pair_f(stats.pred_labels[i], stats.gt_labels[j]);
            best = best.max(f + rec(stats, i + 1, used));
            used[j] = false;
        }
        best
    }
    let mut used = vec![false; stats.gt_labels.len()];
    Ok(rec(&stats, 0, &mut used))
}

/// Total pairwise F of the Hungarian matching; compared against
/// `brute_force_total_f` in tests.
pub fn hungarian_total_f(pred: &LabelMask, gt: &LabelMask) -> Result<f64, EvalError> {
    let stats = PairStats::build(pred, gt)?;
    Ok(match_stats(&stats).iter().map(|&(p, g)| stats.pair_f(p, g)).sum())
}
