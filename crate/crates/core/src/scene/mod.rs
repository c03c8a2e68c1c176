//! Planar rigid-body scenes and the rasters observed from them.
//!
//! The world is two-dimensional (poses are a z-rotation plus an xy
//! translation) embedded in SE(3) with z = 0, viewed by a top-down
//! orthographic camera. Pixel (row, col) centers map to world coordinates by
//! an affine scale, so back-projection is exact.

pub mod generate;
pub mod geom;
pub mod oracle;
pub mod push;
pub mod raster;

pub use generate::{generate_scene, touching_pairs, GeneratorConfig};
pub use geom::polygon_diameter;
pub use oracle::{oracle_flow, oracle_static_seg, OracleConfig};
pub use push::{apply_push, PushConfig};
pub use raster::render_labels;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::{pose_compose, Pose};
use geom::P2;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("placement failed after {attempts} attempts (seed {seed})")]
    PlacementFailure { seed: u64, attempts: usize },
    #[error("contact point ({0}, {1}) touches no body")]
    NoContact(u32, u32),
    #[error("scenes carry different body id sets")]
    MismatchedScenes,
    #[error("n_objects {0} outside supported range 2..=8")]
    BadObjectCount(usize),
}

/// Planar pose: rotation about z by `theta`, translation (x, y).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarPose {
    pub theta: f64,
    pub x: f64,
    pub y: f64,
}

impl PlanarPose {
    pub fn identity() -> Self {
        Self { theta: 0.0, x: 0.0, y: 0.0 }
    }

    /// Lift to a full SE(3) pose with z = 0.
    pub fn to_pose(self) -> Pose {
        let mut p = Pose::from_rot_z(self.theta);
        p.translation = Vector3::new(self.x, self.y, 0.0);
        p
    }

    pub fn apply(&self, p: P2) -> P2 {
        let (s, c) = self.theta.sin_cos();
        [
            c * p[0] - s * p[1] + self.x,
            s * p[0] + c * p[1] + self.y,
        ]
    }
}

/// World-frame displacement carrying the pose at `t` to the pose at `t+1`.
pub fn planar_displacement(pose_t: PlanarPose, pose_t1: PlanarPose) -> Pose {
    pose_compose(&pose_t1.to_pose(), &pose_t.to_pose().inverse())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigidBody {
    pub id: u16,
    /// Vertices in the body frame, counter-clockwise, meters.
    pub vertices: Vec<P2>,
    pub pose: PlanarPose,
}

impl RigidBody {
    pub fn world_vertices(&self) -> Vec<P2> {
        self.vertices.iter().map(|&v| self.pose.apply(v)).collect()
    }

    pub fn centroid_world(&self) -> P2 {
        self.pose.apply(geom::centroid(&self.vertices))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub min: P2,
    pub max: P2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneState {
    pub workspace: Workspace,
    /// Meters per pixel.
    pub pixel_pitch: f64,
    /// (rows, cols).
    pub image_size: (usize, usize),
    pub bodies: Vec<RigidBody>,
}

impl SceneState {
    /// World coordinates of the center of pixel (row, col).
    pub fn pixel_to_world(&self, row: f64, col: f64) -> P2 {
        [
            self.workspace.min[0] + (col + 0.5) * self.pixel_pitch,
            self.workspace.min[1] + (row + 0.5) * self.pixel_pitch,
        ]
    }

    /// Continuous (row, col) of a world point.
    pub fn world_to_pixel(&self, p: P2) -> (f64, f64) {
        (
            (p[1] - self.workspace.min[1]) / self.pixel_pitch - 0.5,
            (p[0] - self.workspace.min[0]) / self.pixel_pitch - 0.5,
        )
    }

    pub fn body(&self, id: u16) -> Option<&RigidBody> {
        self.bodies.iter().find(|b| b.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serialization")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Pixel-wise object labels; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u16>,
}

impl LabelMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0; height * width] }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: u16) {
        self.data[row * self.width + col] = v;
    }

    /// Distinct positive labels, ascending.
    pub fn labels(&self) -> Vec<u16> {
        let mut seen = vec![false; u16::MAX as usize + 1];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (1..=u16::MAX).filter(|&l| seen[l as usize]).collect()
    }

    pub fn max_label(&self) -> u16 {
        self.data.iter().copied().max().unwrap_or(0)
    }
}

/// Per-pixel objectness confidence in [0, 255].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UncertaintyMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl UncertaintyMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0; height * width] }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: u8) {
        self.data[row * self.width + col] = v;
    }
}

/// Dense optical flow in pixel units: `du` along columns, `dv` along rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub du: Vec<f64>,
    pub dv: Vec<f64>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            du: vec![0.0; height * width],
            dv: vec![0.0; height * width],
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> (f64, f64) {
        let i = row * self.width + col;
        (self.du[i], self.dv[i])
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, du: f64, dv: f64) {
        let i = row * self.width + col;
        self.du[i] = du;
        self.dv[i] = dv;
    }

    /// Bilinear sample at a continuous (row, col); clamped at the border.
    pub fn sample(&self, row: f64, col: f64) -> (f64, f64) {
        let r = row.clamp(0.0, (self.height - 1) as f64);
        let c = col.clamp(0.0, (self.width - 1) as f64);
        let r0 = r.floor() as usize;
        let c0 = c.floor() as usize;
        let r1 = (r0 + 1).min(self.height - 1);
        let c1 = (c0 + 1).min(self.width - 1);
        let fr = r - r0 as f64;
        let fc = c - c0 as f64;
        let lerp = |v00: f64, v01: f64, v10: f64, v11: f64| {
            v00 * (1.0 - fr) * (1.0 - fc)
                + v01 * (1.0 - fr) * fc
                + v10 * fr * (1.0 - fc)
                + v11 * fr * fc
        };
        (
            lerp(
                self.du[r0 * self.width + c0],
                self.du[r0 * self.width + c1],
                self.du[r1 * self.width + c0],
                self.du[r1 * self.width + c1],
            ),
            lerp(
                self.dv[r0 * self.width + c0],
                self.dv[r0 * self.width + c1],
                self.dv[r1 * self.width + c0],
                self.dv[r1 * self.width + c1],
            ),
        )
    }
}

/// A short push: contact pixel, image-plane unit direction (du, dv), and a
/// constant travel distance in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushAction {
    /// (row, col).
    pub contact_point: (u32, u32),
    /// (du along cols, dv along rows), unit norm.
    pub direction: [f64; 2],
    /// Meters.
    pub distance: f64,
}
