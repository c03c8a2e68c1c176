//! Rigid-body frames, transforms, and spatial-twist extraction.
//!
//! The central operation is [`spatial_twist`]: given the pose of one body
//! frame at two instants, it returns the twist of the underlying rigid
//! displacement expressed in the fixed world frame. Every frame attached to
//! the same rigid body yields the same spatial twist, which is what makes the
//! feature usable for motion-based grouping downstream.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Orthonormality drift above which a composed rotation is re-projected.
const ORTHO_DRIFT_EPS: f64 = 1e-12;

/// Minimum triangle area (m^2) for a frame-defining triplet.
pub const AREA_EPS: f64 = 1e-8;

/// Default cap on pairwise anchor distance (m) within a triplet.
pub const DEFAULT_TRIPLET_DIAMETER: f64 = 0.03;

#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    #[error("triplet is collinear (area {area:.3e} <= {eps:.3e})")]
    CollinearTriplet { area: f64, eps: f64 },
    #[error("triplet pairwise distance {dist:.4} exceeds cap {cap:.4}")]
    TripletTooWide { dist: f64, cap: f64 },
    #[error("dt must be positive, got {0}")]
    DegenerateDt(f64),
    #[error("displacement rotation angle {0:.6} too close to pi for a stable log")]
    RotationNearPi(f64),
}

/// Rigid transform in SE(3): rotation matrix plus translation.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), translation)
    }

    /// Rotation by `theta` about the world z-axis.
    pub fn from_rot_z(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::new(
            Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            Vector3::zeros(),
        )
    }

    /// Deviation of R^T R from the identity, Frobenius norm.
    pub fn ortho_drift(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm()
    }

    /// Project the rotation back onto SO(3) via SVD.
    fn reorthonormalize(&mut self) {
        let svd = self.rotation.svd(true, true);
        let u = svd.u.expect("svd u");
        let vt = svd.v_t.expect("svd v_t");
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u_fixed = u;
            u_fixed.column_mut(2).neg_mut();
            r = u_fixed * vt;
        }
        self.rotation = r;
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

/// `a` then `b` in standard transform-composition order: the matrix product
/// `a * b`, i.e. the right operand is applied first in the mover's frame.
pub fn pose_compose(a: &Pose, b: &Pose) -> Pose {
    let mut out = Pose::new(
        a.rotation * b.rotation,
        a.rotation * b.translation + a.translation,
    );
    if out.ortho_drift() > ORTHO_DRIFT_EPS {
        out.reorthonormalize();
    }
    out
}

/// Twist: angular and linear velocity stacked into six components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub angular: Vector3<f64>,
    pub linear: Vector3<f64>,
}

impl Twist {
    pub fn zero() -> Self {
        Self {
            angular: Vector3::zeros(),
            linear: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.angular.iter().chain(self.linear.iter()).all(|x| x.is_finite())
    }

    /// Euclidean norm over all six components.
    pub fn norm6(&self) -> f64 {
        (self.angular.norm_squared() + self.linear.norm_squared()).sqrt()
    }

    pub fn sub(&self, other: &Twist) -> Twist {
        Twist {
            angular: self.angular - other.angular,
            linear: self.linear - other.linear,
        }
    }
}

/// How the twist is extracted from two pose snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum TwistMethod {
    /// Matrix logarithm of the displacement; exact for constant-twist motion.
    #[default]
    MatrixLog,
    /// Finite-difference Tdot T^-1 with Tdot ~ (T1 - T0)/dt.
    FiniteDifference,
}

/// A body frame sampled from the image: its pose plus the pixel triplet that
/// defined it.
#[derive(Debug, Clone)]
pub struct BodyFrame {
    pub pose: Pose,
    /// (row, col) of the three anchor pixels, origin first.
    pub anchor_pixels: [(f64, f64); 3],
    /// Label value under the anchors when the frame was created.
    pub object_hint: u16,
}

fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

fn unskew(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        (m[(2, 1)] - m[(1, 2)]) * 0.5,
        (m[(0, 2)] - m[(2, 0)]) * 0.5,
        (m[(1, 0)] - m[(0, 1)]) * 0.5,
    )
}

/// Rotation log: returns omega * theta for R = exp([omega] theta).
fn so3_log(r: &Matrix3<f64>) -> Result<Vector3<f64>, KinematicsError> {
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    if theta > std::f64::consts::PI - 1e-6 {
        return Err(KinematicsError::RotationNearPi(theta));
    }
    if theta < 1e-10 {
        // First-order: R ~ I + [w]
        return Ok(unskew(r));
    }
    let axis = unskew(r) / theta.sin();
    Ok(axis * theta)
}

/// Build a frame from three points: origin at `p0`, x-axis toward `p1`,
/// z-axis along the triangle normal.
pub fn frame_from_triplet(
    p0: &Vector3<f64>,
    p1: &Vector3<f64>,
    p2: &Vector3<f64>,
    max_pair_dist: f64,
) -> Result<Pose, KinematicsError> {
    for (a, b) in [(p0, p1), (p0, p2), (p1, p2)] {
        let d = (a - b).norm();
        if d > max_pair_dist {
            return Err(KinematicsError::TripletTooWide {
                dist: d,
                cap: max_pair_dist,
            });
        }
    }
    let e1 = p1 - p0;
    let e2 = p2 - p0;
    let cross = e1.cross(&e2);
    let area = 0.5 * cross.norm();
    if area <= AREA_EPS {
        return Err(KinematicsError::CollinearTriplet {
            area,
            eps: AREA_EPS,
        });
    }
    let x = e1.normalize();
    let z = cross.normalize();
    let y = z.cross(&x);
    Ok(Pose::new(Matrix3::from_columns(&[x, y, z]), *p0))
}

/// Spatial twist of the displacement carrying `frame_t` to `frame_t1`,
/// expressed in the fixed world frame and scaled by `1/dt`.
pub fn spatial_twist(
    frame_t: &Pose,
    frame_t1: &Pose,
    dt: f64,
    method: TwistMethod,
) -> Result<Twist, KinematicsError> {
    if dt <= 0.0 {
        return Err(KinematicsError::DegenerateDt(dt));
    }
    match method {
        TwistMethod::MatrixLog => {
            let disp = pose_compose(frame_t1, &frame_t.inverse());
            let w_theta = so3_log(&disp.rotation)?;
            let theta = w_theta.norm();
            let v_theta = if theta < 1e-10 {
                disp.translation
            } else {
                let axis = w_theta / theta;
                let k = skew(&axis);
                // p = G(theta) v with G = I*theta + (1-cos)[w] + (theta-sin)[w]^2
                let g = Matrix3::identity() * theta
                    + k * (1.0 - theta.cos())
                    + k * k * (theta - theta.sin());
                let v = g
                    .try_inverse()
                    .expect("G(theta) invertible away from pi")
                    * disp.translation;
                v * theta
            };
            Ok(Twist {
                angular: w_theta / dt,
                linear: v_theta / dt,
            })
        }
        TwistMethod::FiniteDifference => {
            let t0 = frame_t.to_matrix();
            let t1 = frame_t1.to_matrix();
            let tdot = (t1 - t0) / dt;
            let s = tdot * t0.try_inverse().expect("pose matrices invertible");
            let rot_part = s.fixed_view::<3, 3>(0, 0).into_owned();
            Ok(Twist {
                angular: unskew(&rot_part),
                linear: s.fixed_view::<3, 1>(0, 3).into_owned(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut impl rand::Rng) -> Pose {
        let axis = Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        let angle = (rng.gen::<f64>() - 0.5) * 2.0;
        let pose_rot = rotation_about(&axis.normalize(), angle);
        Pose::new(
            pose_rot,
            Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5),
        )
    }

    fn rotation_about(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
        let k = skew(axis);
        Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
    }

    #[test]
    fn compose_identity() {
        let id = Pose::identity();
        let out = pose_compose(&id, &id);
        assert_eq!(out, Pose::identity());
    }

    #[test]
    fn compose_translations_commute() {
        let a = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let b = Pose::from_translation(Vector3::new(0.0, 2.0, 0.0));
        let out = pose_compose(&a, &b);
        assert_abs_diff_eq!(out.translation, Vector3::new(1.0, 2.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn compose_matches_matrix_product() {
        // rotZ(pi/2) applied after translation(1,0,0): the translation lands
        // on (0,1,0).
        let a = Pose::from_rot_z(std::f64::consts::FRAC_PI_2);
        let b = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let out = pose_compose(&a, &b);
        let expected = a.to_matrix() * b.to_matrix();
        assert_abs_diff_eq!(out.to_matrix(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(out.translation, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn triplet_axis_aligned() {
        let f = frame_from_triplet(
            &Vector3::zeros(),
            &Vector3::new(1.0, 0.0, 0.0),
            &Vector3::new(0.0, 1.0, 0.0),
            10.0,
        )
        .unwrap();
        assert_abs_diff_eq!(f.rotation, Matrix3::identity(), epsilon = 1e-12);
        assert_abs_diff_eq!(f.translation, Vector3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn triplet_collinear_rejected() {
        let err = frame_from_triplet(
            &Vector3::zeros(),
            &Vector3::new(1e-12, 0.0, 0.0),
            &Vector3::new(2e-12, 0.0, 0.0),
            10.0,
        )
        .unwrap_err();
        assert!(matches!(err, KinematicsError::CollinearTriplet { .. }));
    }

    #[test]
    fn triplet_too_wide_rejected() {
        let err = frame_from_triplet(
            &Vector3::zeros(),
            &Vector3::new(0.1, 0.0, 0.0),
            &Vector3::new(0.0, 0.1, 0.0),
            0.03,
        )
        .unwrap_err();
        assert!(matches!(err, KinematicsError::TripletTooWide { .. }));
    }

    #[test]
    fn twist_zero_for_no_motion() {
        let f = Pose::from_rot_z(0.3);
        let tw = spatial_twist(&f, &f, 1.0, TwistMethod::MatrixLog).unwrap();
        assert!(tw.norm6() < 1e-12);
    }

    #[test]
    fn twist_pure_translation() {
        let f0 = Pose::identity();
        let f1 = Pose::from_translation(Vector3::new(0.01, 0.0, 0.0));
        let tw = spatial_twist(&f0, &f1, 1.0, TwistMethod::MatrixLog).unwrap();
        assert_abs_diff_eq!(tw.angular, Vector3::zeros(), epsilon = 1e-12);
        assert_abs_diff_eq!(tw.linear, Vector3::new(0.01, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn twist_rotation_about_offset_axis() {
        // Rotation by 0.1 rad about the z-axis through (1, 2, 0). Closed-form
        // screw oracle: omega = (0,0,0.1), v = -omega x axis_point.
        let q = Vector3::new(1.0, 2.0, 0.0);
        let rot = Pose::from_rot_z(0.1);
        let disp = pose_compose(
            &pose_compose(&Pose::from_translation(q), &rot),
            &Pose::from_translation(-q),
        );
        let f0 = Pose::from_translation(Vector3::new(0.3, -0.4, 0.0));
        let f1 = pose_compose(&disp, &f0);
        let tw = spatial_twist(&f0, &f1, 1.0, TwistMethod::MatrixLog).unwrap();
        let omega = Vector3::new(0.0, 0.0, 0.1);
        let v_expected = -omega.cross(&q);
        assert_abs_diff_eq!(tw.angular, omega, epsilon = 1e-10);
        assert_abs_diff_eq!(tw.linear, v_expected, epsilon = 1e-10);
        assert_abs_diff_eq!(v_expected, Vector3::new(0.2, -0.1, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn twist_degenerate_dt() {
        let f = Pose::identity();
        assert!(matches!(
            spatial_twist(&f, &f, 0.0, TwistMethod::MatrixLog),
            Err(KinematicsError::DegenerateDt(_))
        ));
    }

    #[test]
    fn twist_rotation_near_pi_rejected() {
        let f0 = Pose::identity();
        let f1 = Pose::from_rot_z(std::f64::consts::PI - 1e-9);
        assert!(matches!(
            spatial_twist(&f0, &f1, 1.0, TwistMethod::MatrixLog),
            Err(KinematicsError::RotationNearPi(_))
        ));
    }

    #[test]
    fn bfif_invariance_over_random_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let disp = random_pose(&mut rng);
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let ta = spatial_twist(&a, &pose_compose(&disp, &a), 1.0, TwistMethod::MatrixLog);
            let tb = spatial_twist(&b, &pose_compose(&disp, &b), 1.0, TwistMethod::MatrixLog);
            match (ta, tb) {
                (Ok(ta), Ok(tb)) => assert!(ta.sub(&tb).norm6() < 1e-9, "twists diverge"),
                _ => panic!("random displacement should stay below the pi guard"),
            }
        }
    }

    #[test]
    fn finite_difference_agrees_for_small_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let axis = Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
                .normalize();
            let angle = rng.gen::<f64>() * 0.05;
            let disp = Pose::new(
                rotation_about(&axis, angle),
                Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()) * 0.002,
            );
            let f0 = random_pose(&mut rng);
            let f1 = pose_compose(&disp, &f0);
            let a = spatial_twist(&f0, &f1, 1.0, TwistMethod::MatrixLog).unwrap();
            let b = spatial_twist(&f0, &f1, 1.0, TwistMethod::FiniteDifference).unwrap();
            assert!(a.sub(&b).norm6() < 1e-4, "methods disagree: {:?}", a.sub(&b).norm6());
        }
    }

    proptest! {
        #[test]
        fn triplet_equivariance(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pt = || Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()) * 0.5;
            let (p0, p1, p2) = (pt(), pt(), pt());
            let g = {
                let mut rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0xdead);
                random_pose(&mut rng2)
            };
            let direct = frame_from_triplet(&p0, &p1, &p2, 10.0);
            let moved = frame_from_triplet(
                &g.transform_point(&p0),
                &g.transform_point(&p1),
                &g.transform_point(&p2),
                10.0,
            );
            if let (Ok(f), Ok(fg)) = (direct, moved) {
                let expected = pose_compose(&g, &f);
                let diff = (fg.to_matrix() - expected.to_matrix()).norm();
                prop_assert!(diff < 1e-9, "equivariance violated: {diff}");
            }
        }
    }
}
