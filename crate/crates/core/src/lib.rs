//! Interactive object segmentation at desk scale.
//!
//! A planar rigid-body simulator supplies observations (labels, uncertainty
//! heatmaps, optical flow), a heuristic planner picks minimal pushes near
//! segmentation uncertainty, spatial twists of frames sampled on the moving
//! bodies are grouped by a KDE-backed Bayesian classifier, and the grouped
//! frames seed a flow-guided mask correction. Hungarian-matched overlap and
//! boundary metrics close the loop.

pub mod bfif;
pub mod correction;
pub mod episode;
pub mod eval;
pub mod io;
pub mod planner;
pub mod scene;
pub mod se3;
pub mod seed;

pub use scene::{FlowField, LabelMask, PushAction, SceneState, UncertaintyMap};
pub use se3::{BodyFrame, Pose, Twist, TwistMethod};
