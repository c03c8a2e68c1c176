//! Mask correction: carry accumulated labels through flow, then split
//! under-segmented regions using the frame grouping.
//!
//! Projection votes every labeled pixel at its flow destination and also
//! transports the flow vector itself, so later stages can reason about
//! motion on the *new* pixel grid (the raw flow field is indexed on the old
//! one and is zero over the strip a body vacated). Correction seeds one
//! label per frame group at its anchor pixels and floods outward over the
//! foreground support, expanding only across pixels whose carried flow is
//! similar.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::bfif::FrameGrouping;
use crate::scene::{FlowField, LabelMask};
use crate::se3::BodyFrame;

#[derive(Debug, thiserror::Error)]
pub enum CorrectionError {
    #[error("mask shapes differ: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrectionConfig {
    /// Max carried-flow difference (px) for BFS expansion.
    pub grad_eps: f64,
    /// Regions smaller than this are absorbed into a neighbor.
    pub min_region: usize,
    /// Carried-flow magnitude (px) below which a pixel counts as stationary
    /// when deciding whether a projected label may be reused.
    pub stationary_eps: f64,
    /// Minimum frames per (group, projected label) for it to seed a
    /// correction; smaller slivers are usually misgrouped frames.
    pub min_group_frames: usize,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        Self {
            grad_eps: 0.75,
            min_region: 12,
            stationary_eps: 1.5,
            min_group_frames: 3,
        }
    }
}

/// The accumulated mask advanced to t+1: labels plus the flow each pixel's
/// content arrived with.
#[derive(Debug, Clone)]
pub struct Projection {
    pub labels: LabelMask,
    pub carried: FlowField,
}

/// Transport `prev` through the flow. Each nonzero pixel votes its label and
/// flow vector at the rounded destination; collisions go to the larger flow
/// magnitude (the faster pixel moved there and occludes). Unvoted pixels
/// inherit the static label, with zero carried flow.
pub fn project_mask(
    prev: &LabelMask,
    static_mask: &LabelMask,
    flow: &FlowField,
) -> Result<Projection, CorrectionError> {
    let (h, w) = (prev.height, prev.width);
    if static_mask.height != h || static_mask.width != w {
        return Err(CorrectionError::ShapeMismatch(h, w, static_mask.height, static_mask.width));
    }
    if flow.height != h || flow.width != w {
        return Err(CorrectionError::ShapeMismatch(h, w, flow.height, flow.width));
    }
    let mut labels = LabelMask::zeros(h, w);
    let mut carried = FlowField::zeros(h, w);
    // Winning vote magnitude per destination; -1 marks "no vote".
    let mut best_mag = vec![-1.0f64; h * w];
    for r in 0..h {
        for c in 0..w {
            let l = prev.get(r, c);
            if l == 0 {
                continue;
            }
            let (du, dv) = flow.at(r, c);
            let nr = (r as f64 + dv).round();
            let nc = (c as f64 + du).round();
            if nr < 0.0 || nc < 0.0 || nr >= h as f64 || nc >= w as f64 {
                continue;
            }
            let (nr, nc) = (nr as usize, nc as usize);
            let mag = (du * du + dv * dv).sqrt();
            let i = nr * w + nc;
            // Ties stay with the first (row-major) voter.
            if mag > best_mag[i] {
                best_mag[i] = mag;
                labels.set(nr, nc, l);
                carried.set(nr, nc, du, dv);
            }
        }
    }
    // Destination rounding leaves single-pixel holes inside a moved region
    // (several sources collide on one pixel, leaving a neighbor empty). Fill
    // holes surrounded by votes from their neighbors so region interiors
    // carry coherent flow; anything else falls back on the static label with
    // zero carried flow.
    let mut fill: Vec<Option<(u16, f64, f64)>> = vec![None; h * w];
    for r in 0..h {
        for c in 0..w {
            if best_mag[r * w + c] >= 0.0 {
                continue;
            }
            let mut votes: std::collections::BTreeMap<u16, (usize, f64, f64)> = Default::default();
            let mut n_voted = 0;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                        continue;
                    }
                    let ni = nr as usize * w + nc as usize;
                    if best_mag[ni] < 0.0 {
                        continue;
                    }
                    n_voted += 1;
                    let (du, dv) = (carried.du[ni], carried.dv[ni]);
                    let e = votes.entry(labels.data[ni]).or_insert((0, 0.0, 0.0));
                    e.0 += 1;
                    e.1 += du;
                    e.2 += dv;
                }
            }
            if n_voted < 5 {
                continue;
            }
            // Majority label, ties to the smaller one.
            let (l, (n, su, sv)) = votes
                .into_iter()
                .max_by_key(|&(l, (n, _, _))| (n, Reverse(l)))
                .unwrap();
            fill[r * w + c] = Some((l, su / n as f64, sv / n as f64));
        }
    }
    for (i, f) in fill.iter().enumerate() {
        if let Some((l, du, dv)) = f {
            labels.data[i] = *l;
            carried.du[i] = *du;
            carried.dv[i] = *dv;
            best_mag[i] = (du * du + dv * dv).sqrt();
        }
    }
    for r in 0..h {
        for c in 0..w {
            if best_mag[r * w + c] < 0.0 && static_mask.get(r, c) != 0 {
                labels.set(r, c, static_mask.get(r, c));
            }
        }
    }
    Ok(Projection { labels, carried })
}

/// Majority nonzero projected label under one frame's anchor pixels.
fn frame_label(projected: &LabelMask, frame: &BodyFrame) -> Option<u16> {
    let mut counts: std::collections::BTreeMap<u16, usize> = Default::default();
    for &(r, c) in &frame.anchor_pixels {
        let (ri, ci) = (r.round(), c.round());
        if ri < 0.0 || ci < 0.0 || ri >= projected.height as f64 || ci >= projected.width as f64 {
            continue;
        }
        let l = projected.get(ri as usize, ci as usize);
        if l != 0 {
            *counts.entry(l).or_insert(0) += 1;
        }
    }
    // Max count, ties to the smaller label (BTreeMap order).
    counts.into_iter().max_by_key(|&(l, n)| (n, Reverse(l))).map(|(l, _)| l)
}

/// Split/relabel the projected mask using the frame grouping. Groups are
/// first refined by the projected label under each frame, so a grouping that
/// spans several labels (bodies pushed in a chain move near-identically and
/// are indistinguishable by twist) can only ever *split* existing labels,
/// never fuse them. Each refined group gets a label — reusing its projected
/// label only when it is the sole claimant and the label's region holds no
/// stationary remainder — seeds it at its anchors, and claims pixels by
/// deterministic multi-source BFS over the foreground support, gated by
/// carried-flow similarity.
pub fn correct_mask(
    projection: &Projection,
    static_mask: &LabelMask,
    groups: &FrameGrouping,
    frames_t1: &[BodyFrame],
    cfg: &CorrectionConfig,
) -> LabelMask {
    let projected = &projection.labels;
    let carried = &projection.carried;
    let (h, w) = (projected.height, projected.width);

    let mut refined: Vec<(u16, Vec<usize>)> = Vec::new();
    for group in &groups.groups {
        let mut by_label: std::collections::BTreeMap<u16, Vec<usize>> = Default::default();
        for &fi in group {
            if let Some(l) = frame_label(projected, &frames_t1[fi]) {
                by_label.entry(l).or_default().push(fi);
            }
        }
        refined.extend(by_label);
    }
    refined.retain(|(_, fs)| fs.len() >= cfg.min_group_frames);
    if refined.is_empty() {
        return projected.clone();
    }

    let mut claim_count: std::collections::BTreeMap<u16, usize> = Default::default();
    for (l, _) in &refined {
        *claim_count.entry(*l).or_insert(0) += 1;
    }
    // A projected label with a sizable near-zero-flow remainder still covers
    // something that did not move; the moving group must not take the label
    // with it, or the stationary part could never split off.
    let stationary_remainder = |label: u16| -> bool {
        let mut n = 0usize;
        for r in 0..h {
            for c in 0..w {
                if projected.get(r, c) == label {
                    let (du, dv) = carried.at(r, c);
                    if (du * du + dv * dv).sqrt() < cfg.stationary_eps {
                        n += 1;
                        if n >= cfg.min_region {
                            return true;
                        }
                    }
                }
            }
        }
        false
    };
    let mut next_fresh = projected.max_label().max(static_mask.max_label()) + 1;
    let labels: Vec<u16> = refined
        .iter()
        .map(|&(claim, _)| {
            if claim_count[&claim] == 1 && !stationary_remainder(claim) {
                claim
            } else {
                let l = next_fresh;
                next_fresh += 1;
                l
            }
        })
        .collect();

    let support: Vec<bool> = (0..h * w)
        .map(|i| static_mask.data[i] != 0 || projected.data[i] != 0)
        .collect();

    let mut out = projected.clone();
    let mut claimed = vec![false; h * w];
    // (distance, label, row-major index): the queue order is the
    // determinism contract.
    let mut queue: BinaryHeap<Reverse<(u32, u16, usize)>> = BinaryHeap::new();
    for (gi, (_, group)) in refined.iter().enumerate() {
        for &fi in group {
            for &(r, c) in &frames_t1[fi].anchor_pixels {
                let (ri, ci) = (r.round(), c.round());
                if ri < 0.0 || ci < 0.0 || ri >= h as f64 || ci >= w as f64 {
                    continue;
                }
                let i = ri as usize * w + ci as usize;
                // An anchor of a moving frame that rounds onto a pixel with
                // no carried motion landed off its body (a vacated strip or
                // the filled gap between merged bodies); flooding from there
                // would leak through the zero-flow field into stationary
                // regions.
                let (du, dv) = carried.at(i / w, i % w);
                if support[i] && (du * du + dv * dv).sqrt() >= cfg.stationary_eps {
                    queue.push(Reverse((0, labels[gi], i)));
                }
            }
        }
    }
    while let Some(Reverse((dist, label, i))) = queue.pop() {
        if claimed[i] {
            continue;
        }
        claimed[i] = true;
        out.data[i] = label;
        let (r, c) = (i / w, i % w);
        let (du, dv) = carried.at(r, c);
        let push = |nr: usize, nc: usize, queue: &mut BinaryHeap<Reverse<(u32, u16, usize)>>| {
            let ni = nr * w + nc;
            if claimed[ni] || !support[ni] {
                return;
            }
            let (ndu, ndv) = carried.at(nr, nc);
            let gap = ((ndu - du).powi(2) + (ndv - dv).powi(2)).sqrt();
            if gap <= cfg.grad_eps {
                queue.push(Reverse((dist + 1, label, ni)));
            }
        };
        if r > 0 {
            push(r - 1, c, &mut queue);
        }
        if r + 1 < h {
            push(r + 1, c, &mut queue);
        }
        if c > 0 {
            push(r, c - 1, &mut queue);
        }
        if c + 1 < w {
            push(r, c + 1, &mut queue);
        }
    }

    despeckle(&mut out, cfg.min_region);
    out
}

/// Absorb 4-connected regions smaller than `min_region` into their largest
/// neighboring region (background when nothing else touches them).
fn despeckle(mask: &mut LabelMask, min_region: usize) {
    let (h, w) = (mask.height, mask.width);
    let mut comp = vec![usize::MAX; h * w];
    let mut comp_size: Vec<usize> = vec![];
    let mut comp_label: Vec<u16> = vec![];
    let mut stack = vec![];
    for start in 0..h * w {
        if comp[start] != usize::MAX || mask.data[start] == 0 {
            continue;
        }
        let id = comp_size.len();
        let label = mask.data[start];
        let mut size = 0;
        stack.push(start);
        comp[start] = id;
        while let Some(i) = stack.pop() {
            size += 1;
            let (r, c) = (i / w, i % w);
            for (nr, nc) in [
                (r.wrapping_sub(1), c),
                (r + 1, c),
                (r, c.wrapping_sub(1)),
                (r, c + 1),
            ] {
                if nr < h && nc < w {
                    let ni = nr * w + nc;
                    if comp[ni] == usize::MAX && mask.data[ni] == label {
                        comp[ni] = id;
                        stack.push(ni);
                    }
                }
            }
        }
        comp_size.push(size);
        comp_label.push(label);
    }
    // Small components pick the largest adjacent component's label, judged on
    // the pre-despeckle component map so the pass is order-independent.
    let mut new_label: Vec<Option<u16>> = vec![None; comp_size.len()];
    for id in 0..comp_size.len() {
        if comp_size[id] >= min_region {
            continue;
        }
        // (size, Reverse(label)) max: biggest neighbor, ties to small label.
        let mut best: Option<(usize, Reverse<u16>)> = None;
        let mut best_label = 0u16;
        for i in 0..h * w {
            if comp[i] != id {
                continue;
            }
            let (r, c) = (i / w, i % w);
            for (nr, nc) in [
                (r.wrapping_sub(1), c),
                (r + 1, c),
                (r, c.wrapping_sub(1)),
                (r, c + 1),
            ] {
                if nr < h && nc < w {
                    let nid = comp[nr * w + nc];
                    if nid != usize::MAX && nid != id {
                        let key = (comp_size[nid], Reverse(comp_label[nid]));
                        if best.map_or(true, |b| key > b) {
                            best = Some(key);
                            best_label = comp_label[nid];
                        }
                    }
                }
            }
        }
        new_label[id] = Some(if best.is_some() { best_label } else { 0 });
    }
    for i in 0..h * w {
        if comp[i] != usize::MAX {
            if let Some(l) = new_label[comp[i]] {
                mask.data[i] = l;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::Pose;

    fn mask_from(rows: &[&[u16]]) -> LabelMask {
        let h = rows.len();
        let w = rows[0].len();
        let mut m = LabelMask::zeros(h, w);
        for (r, row) in rows.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                m.set(r, c, v);
            }
        }
        m
    }

    #[test]
    fn zero_flow_projects_identically() {
        let prev = mask_from(&[&[1, 1, 0], &[0, 2, 2], &[0, 0, 0]]);
        let stat = LabelMask::zeros(3, 3);
        let flow = FlowField::zeros(3, 3);
        let p = project_mask(&prev, &stat, &flow).unwrap();
        assert_eq!(p.labels.data, prev.data);
        assert!(p.carried.du.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_flow_translates_region() {
        let mut prev = LabelMask::zeros(10, 10);
        for r in 2..5 {
            for c in 2..5 {
                prev.set(r, c, 3);
            }
        }
        let stat = LabelMask::zeros(10, 10);
        let mut flow = FlowField::zeros(10, 10);
        for r in 0..10 {
            for c in 0..10 {
                flow.set(r, c, 4.0, 0.0);
            }
        }
        let p = project_mask(&prev, &stat, &flow).unwrap();
        let count = p.labels.data.iter().filter(|&&v| v == 3).count();
        assert_eq!(count, 9);
        assert_eq!(p.labels.get(3, 7), 3);
        assert_eq!(p.labels.get(3, 3), 0);
        let (du, _) = p.carried.at(3, 7);
        assert_eq!(du, 4.0);
    }

    #[test]
    fn faster_pixel_wins_collisions() {
        // Pixel (0,0) moves +2 cols, pixel (0,4) moves -2: both land on (0,2).
        let prev = mask_from(&[&[1, 0, 0, 0, 2]]);
        let stat = LabelMask::zeros(1, 5);
        let mut flow = FlowField::zeros(1, 5);
        flow.set(0, 0, 2.0, 0.0);
        flow.set(0, 4, -2.5, 0.0);
        let p = project_mask(&prev, &stat, &flow).unwrap();
        // Label 2 carried the larger flow magnitude.
        assert_eq!(p.labels.get(0, 2), 2);
    }

    #[test]
    fn unvoted_pixels_inherit_static_labels() {
        let prev = mask_from(&[&[1, 0, 0]]);
        let stat = mask_from(&[&[5, 5, 0]]);
        let flow = FlowField::zeros(1, 3);
        let p = project_mask(&prev, &stat, &flow).unwrap();
        // (0,0) voted by prev, (0,1) falls back on the static label.
        assert_eq!(p.labels.data, vec![1, 5, 0]);
    }

    fn frames_on(points: &[(f64, f64)]) -> Vec<BodyFrame> {
        points
            .chunks(3)
            .map(|chunk| BodyFrame {
                pose: Pose::identity(),
                anchor_pixels: [chunk[0], chunk[1], chunk[2]],
                object_hint: 0,
            })
            .collect()
    }

    #[test]
    fn empty_groups_return_projection_unchanged() {
        let prev = mask_from(&[&[1, 1], &[1, 1]]);
        let stat = prev.clone();
        let flow = FlowField::zeros(2, 2);
        let p = project_mask(&prev, &stat, &flow).unwrap();
        let groups = FrameGrouping { groups: vec![], moving: vec![] };
        let out = correct_mask(&p, &stat, &groups, &[], &CorrectionConfig::default());
        assert_eq!(out.data, p.labels.data);
    }

    /// Two 6x6 squares share label 1; the right one translates +8 cols.
    fn split_fixture() -> (Projection, LabelMask, Vec<BodyFrame>, FrameGrouping) {
        let (h, w) = (20, 32);
        let mut prev = LabelMask::zeros(h, w);
        for r in 4..10 {
            for c in 4..16 {
                prev.set(r, c, 1);
            }
        }
        let mut flow = FlowField::zeros(h, w);
        for r in 4..10 {
            for c in 10..16 {
                flow.set(r, c, 8.0, 0.0);
            }
        }
        // Static view at t+1: still merged wherever it sees objects.
        let mut stat = LabelMask::zeros(h, w);
        for r in 4..10 {
            for c in 4..10 {
                stat.set(r, c, 1);
            }
            for c in 18..24 {
                stat.set(r, c, 1);
            }
        }
        let projection = project_mask(&prev, &stat, &flow).unwrap();
        let frames = frames_on(&[
            (5.0, 19.0),
            (5.0, 21.0),
            (7.0, 19.0),
            (8.0, 20.0),
            (8.0, 22.0),
            (6.0, 22.0),
            (5.0, 23.0),
            (7.0, 23.0),
            (8.0, 18.0),
        ]);
        let groups = FrameGrouping {
            groups: vec![vec![0, 1, 2]],
            moving: vec![true, true, true],
        };
        (projection, stat, frames, groups)
    }

    #[test]
    fn moving_group_splits_merged_region() {
        let (projection, stat, frames, groups) = split_fixture();
        let out = correct_mask(&projection, &stat, &groups, &frames, &CorrectionConfig::default());
        // The stationary square keeps label 1.
        for r in 4..10 {
            for c in 4..10 {
                assert_eq!(out.get(r, c), 1, "stationary pixel ({r},{c})");
            }
        }
        // The moved square got a fresh label, uniform over its support.
        let moved = out.get(5, 19);
        assert_ne!(moved, 0);
        assert_ne!(moved, 1);
        for r in 4..10 {
            for c in 18..24 {
                assert_eq!(out.get(r, c), moved, "moved pixel ({r},{c})");
            }
        }
    }

    #[test]
    fn seeds_hold_their_group_label() {
        let (projection, stat, frames, groups) = split_fixture();
        let out = correct_mask(&projection, &stat, &groups, &frames, &CorrectionConfig::default());
        let seed_label = out.get(5, 19);
        for f in &frames[..3] {
            for &(r, c) in &f.anchor_pixels {
                assert_eq!(out.get(r as usize, c as usize), seed_label);
            }
        }
    }

    #[test]
    fn correction_is_deterministic() {
        let (projection, stat, frames, groups) = split_fixture();
        let cfg = CorrectionConfig::default();
        let a = correct_mask(&projection, &stat, &groups, &frames, &cfg);
        let b = correct_mask(&projection, &stat, &groups, &frames, &cfg);
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn rigidly_moved_single_region_keeps_its_label() {
        // One region, all of it moving: the sole claimant with no stationary
        // remainder reuses its projected label.
        let (h, w) = (16, 24);
        let mut prev = LabelMask::zeros(h, w);
        for r in 4..10 {
            for c in 4..10 {
                prev.set(r, c, 2);
            }
        }
        let mut flow = FlowField::zeros(h, w);
        for r in 4..10 {
            for c in 4..10 {
                flow.set(r, c, 9.0, 0.0);
            }
        }
        let mut stat = LabelMask::zeros(h, w);
        for r in 4..10 {
            for c in 13..19 {
                stat.set(r, c, 1);
            }
        }
        let projection = project_mask(&prev, &stat, &flow).unwrap();
        let frames = frames_on(&[
            (5.0, 14.0),
            (5.0, 16.0),
            (7.0, 14.0),
            (8.0, 15.0),
            (8.0, 17.0),
            (6.0, 17.0),
            (5.0, 18.0),
            (7.0, 18.0),
            (8.0, 13.0),
        ]);
        let groups = FrameGrouping {
            groups: vec![vec![0, 1, 2]],
            moving: vec![true, true, true],
        };
        let out = correct_mask(&projection, &stat, &groups, &frames, &CorrectionConfig::default());
        for r in 4..10 {
            for c in 13..19 {
                assert_eq!(out.get(r, c), 2, "pixel ({r},{c})");
            }
        }
    }

    #[test]
    fn small_regions_are_absorbed() {
        let mut m = mask_from(&[
            &[1, 1, 1, 1, 1, 1],
            &[1, 1, 1, 1, 1, 1],
            &[1, 1, 2, 1, 1, 1],
            &[1, 1, 1, 1, 1, 1],
        ]);
        despeckle(&mut m, 4);
        assert!(m.data.iter().all(|&v| v == 1));
    }

    #[test]
    fn isolated_speck_clears_to_background() {
        let mut m = mask_from(&[&[0, 0, 0], &[0, 9, 0], &[0, 0, 0]]);
        despeckle(&mut m, 4);
        assert!(m.data.iter().all(|&v| v == 0));
    }
}
