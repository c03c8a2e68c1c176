//! Ground-truth label rasterization.

use super::geom::point_in_polygon;
use super::{LabelMask, SceneState};

/// Label each pixel by the id of the body covering its center; 0 when no body
/// does. Ties between overlapping bodies go to the lower id.
pub fn render_labels(scene: &SceneState) -> LabelMask {
    let (h, w) = scene.image_size;
    let mut mask = LabelMask::zeros(h, w);
    let mut order: Vec<usize> = (0..scene.bodies.len()).collect();
    order.sort_by_key(|&i| scene.bodies[i].id);
    for bi in order {
        let body = &scene.bodies[bi];
        let poly = body.world_vertices();
        let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
        let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &poly {
            min_x = min_x.min(v[0]);
            min_y = min_y.min(v[1]);
            max_x = max_x.max(v[0]);
            max_y = max_y.max(v[1]);
        }
        let (r0, c0) = scene.world_to_pixel([min_x, min_y]);
        let (r1, c1) = scene.world_to_pixel([max_x, max_y]);
        let r_lo = r0.floor().max(0.0) as usize;
        let c_lo = c0.floor().max(0.0) as usize;
        let r_hi = (r1.ceil() as isize).clamp(0, h as isize - 1) as usize;
        let c_hi = (c1.ceil() as isize).clamp(0, w as isize - 1) as usize;
        for row in r_lo..=r_hi.min(h - 1) {
            for col in c_lo..=c_hi.min(w - 1) {
                if mask.get(row, col) != 0 {
                    continue;
                }
                let p = scene.pixel_to_world(row as f64, col as f64);
                if point_in_polygon(p, &poly) {
                    mask.set(row, col, body.id);
                }
            }
        }
    }
    mask
}
