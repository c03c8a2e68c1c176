//! Small 2D geometry kit for planar polygons.

pub type P2 = [f64; 2];

pub fn sub(a: P2, b: P2) -> P2 {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn dot(a: P2, b: P2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn cross(a: P2, b: P2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

pub fn norm(a: P2) -> f64 {
    dot(a, a).sqrt()
}

/// Signed area via the shoelace formula; positive for counter-clockwise.
pub fn signed_area(poly: &[P2]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        let j = (i + 1) % n;
        acc += cross(poly[i], poly[j]);
    }
    acc * 0.5
}

pub fn centroid(poly: &[P2]) -> P2 {
    let n = poly.len();
    let a = signed_area(poly);
    if a.abs() < 1e-15 {
        let mut c = [0.0, 0.0];
        for p in poly {
            c[0] += p[0];
            c[1] += p[1];
        }
        return [c[0] / n as f64, c[1] / n as f64];
    }
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..n {
        let j = (i + 1) % n;
        let w = cross(poly[i], poly[j]);
        cx += (poly[i][0] + poly[j][0]) * w;
        cy += (poly[i][1] + poly[j][1]) * w;
    }
    [cx / (6.0 * a), cy / (6.0 * a)]
}

/// Even-odd point-in-polygon test on a closed polygon.
pub fn point_in_polygon(p: P2, poly: &[P2]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = (poly[i][0], poly[i][1]);
        let (xj, yj) = (poly[j][0], poly[j][1]);
        if ((yi > p[1]) != (yj > p[1]))
            && (p[0] < (xj - xi) * (p[1] - yi) / (yj - yi) + xi)
        {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn point_segment_dist(p: P2, a: P2, b: P2) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    if len2 < 1e-30 {
        return norm(sub(p, a));
    }
    let t = (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0);
    norm(sub(p, [a[0] + t * ab[0], a[1] + t * ab[1]]))
}

pub fn point_polygon_boundary_dist(p: P2, poly: &[P2]) -> f64 {
    let n = poly.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        let j = (i + 1) % n;
        best = best.min(point_segment_dist(p, poly[i], poly[j]));
    }
    best
}

fn segments_intersect(a: P2, b: P2, c: P2, d: P2) -> bool {
    let d1 = cross(sub(b, a), sub(c, a));
    let d2 = cross(sub(b, a), sub(d, a));
    let d3 = cross(sub(d, c), sub(a, c));
    let d4 = cross(sub(d, c), sub(b, c));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    false
}

fn segment_segment_dist(a: P2, b: P2, c: P2, d: P2) -> f64 {
    if segments_intersect(a, b, c, d) {
        return 0.0;
    }
    point_segment_dist(a, c, d)
        .min(point_segment_dist(b, c, d))
        .min(point_segment_dist(c, a, b))
        .min(point_segment_dist(d, a, b))
}

/// True when the two polygons share interior area (edge crossing or
/// containment).
pub fn polygons_overlap(pa: &[P2], pb: &[P2]) -> bool {
    let na = pa.len();
    let nb = pb.len();
    for i in 0..na {
        let a0 = pa[i];
        let a1 = pa[(i + 1) % na];
        for j in 0..nb {
            if segments_intersect(a0, a1, pb[j], pb[(j + 1) % nb]) {
                return true;
            }
        }
    }
    point_in_polygon(pa[0], pb) || point_in_polygon(pb[0], pa)
}

/// Minimum boundary-to-boundary distance; 0.0 when the polygons overlap.
pub fn polygon_clearance(pa: &[P2], pb: &[P2]) -> f64 {
    if polygons_overlap(pa, pb) {
        return 0.0;
    }
    let na = pa.len();
    let nb = pb.len();
    let mut best = f64::INFINITY;
    for i in 0..na {
        let a0 = pa[i];
        let a1 = pa[(i + 1) % na];
        for j in 0..nb {
            best = best.min(segment_segment_dist(a0, a1, pb[j], pb[(j + 1) % nb]));
        }
    }
    best
}

/// Largest pairwise vertex distance.
pub fn polygon_diameter(poly: &[P2]) -> f64 {
    let mut best: f64 = 0.0;
    for i in 0..poly.len() {
        for j in (i + 1)..poly.len() {
            best = best.max(norm(sub(poly[i], poly[j])));
        }
    }
    best
}
