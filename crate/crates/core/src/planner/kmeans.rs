//! Seeded k-means with elbow-based model selection.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub type Point = [f64; 2];

fn dist2(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Lloyd's algorithm with k-means++-style seeded initialization.
/// Returns (centers, assignments, inertia).
pub fn kmeans(
    points: &[Point],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<Point>, Vec<usize>, f64) {
    assert!(k >= 1 && !points.is_empty());
    let k = k.min(points.len());

    // k-means++ seeding.
    let mut centers: Vec<Point> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|&p| dist2(p, centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            points[rng.gen_range(0..points.len())]
        } else {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    pick = i;
                    break;
                }
            }
            points[pick]
        };
        centers.push(next);
        for (i, &p) in points.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, next));
        }
    }

    let mut assignments = vec![0usize; points.len()];
    for _ in 0..100 {
        for (i, &p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = dist2(p, centers[0]);
            for (c, &center) in centers.iter().enumerate().skip(1) {
                let d = dist2(p, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assignments[i] = best;
        }
        let mut sums = vec![[0.0f64; 2]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (i, &p) in points.iter().enumerate() {
            sums[assignments[i]][0] += p[0];
            sums[assignments[i]][1] += p[1];
            counts[assignments[i]] += 1;
        }
        let mut shift: f64 = 0.0;
        for c in 0..centers.len() {
            if counts[c] == 0 {
                continue; // empty cluster keeps its center
            }
            let new = [sums[c][0] / counts[c] as f64, sums[c][1] / counts[c] as f64];
            shift = shift.max(dist2(centers[c], new).sqrt());
            centers[c] = new;
        }
        if shift < 1e-6 {
            break;
        }
    }

    let inertia = points
        .iter()
        .zip(&assignments)
        .map(|(&p, &a)| dist2(p, centers[a]))
        .sum();
    (centers, assignments, inertia)
}

/// Pick the cluster count by the sharpest kink of the inertia-vs-k curve
/// (second difference on the log scale), falling back to k = 1 when the curve
/// has no pronounced elbow. Ties go to the smaller k.
pub fn elbow_k(inertias: &[f64], min_curvature: f64) -> usize {
    let kmax = inertias.len();
    if kmax <= 1 {
        return 1;
    }
    let logs: Vec<f64> = inertias.iter().map(|&v| (v.max(1e-12)).ln()).collect();
    if kmax == 2 {
        return if logs[0] - logs[1] >= 2.0 * min_curvature { 2 } else { 1 };
    }
    let mut best_k = 1usize;
    let mut best_c = min_curvature;
    for k in 2..kmax {
        // curvature at k (1-based) using neighbors k-1 and k+1
        let c = logs[k - 2] + logs[k] - 2.0 * logs[k - 1];
        if c > best_c {
            best_c = c;
            best_k = k;
        }
    }
    best_k
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(cx: f64, cy: f64, n: usize, spread: f64, rng: &mut ChaCha8Rng) -> Vec<Point> {
        (0..n)
            .map(|_| {
                [
                    cx + (rng.gen::<f64>() - 0.5) * spread,
                    cy + (rng.gen::<f64>() - 0.5) * spread,
                ]
            })
            .collect()
    }

    #[test]
    fn recovers_blob_centroids() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts = blob(10.0, 10.0, 50, 3.0, &mut rng);
        pts.extend(blob(50.0, 10.0, 50, 3.0, &mut rng));
        let mut krng = ChaCha8Rng::seed_from_u64(2);
        let (centers, _, _) = kmeans(&pts, 2, &mut krng);
        let mut cs = centers.clone();
        cs.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert!((cs[0][0] - 10.0).abs() < 1.5 && (cs[1][0] - 50.0).abs() < 1.5);
    }

    #[test]
    fn elbow_prefers_one_for_flat_curve() {
        // Smooth 1/k decay with no kink.
        let inertias: Vec<f64> = (1..=8).map(|k| 100.0 / k as f64).collect();
        assert_eq!(elbow_k(&inertias, std::f64::consts::LN_2), 1);
    }

    #[test]
    fn elbow_finds_kink() {
        let inertias = vec![4000.0, 200.0, 120.0, 90.0, 70.0, 60.0, 50.0, 45.0];
        assert_eq!(elbow_k(&inertias, std::f64::consts::LN_2), 2);
        let inertias3 = vec![4000.0, 2500.0, 80.0, 50.0, 40.0, 32.0, 28.0, 25.0];
        assert_eq!(elbow_k(&inertias3, std::f64::consts::LN_2), 3);
    }
}
