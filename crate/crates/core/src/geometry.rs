//! Poses, rigid transforms, robot polytopes, pinhole projection, and the
//! ground-plane homography shared by perception and planning.
//!
//! Conventions: world and robot frames are x-forward / y-left / z-up with the
//! robot origin on the ground under the chassis center. The camera frame is
//! x-right / y-down / z-forward (optical axis).

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

/// Unit-norm tolerance for polytope face normals and plane normals.
const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("dimension must be positive, got {0}")]
    NonPositiveDimension(f64),
    #[error("polytope face {row} normal has norm {norm}, expected 1")]
    NonUnitNormal { row: usize, norm: f64 },
    #[error("body-frame origin is not strictly interior (face {0})")]
    OriginNotInterior(usize),
    #[error("polytope needs at least 3 faces, got {0}")]
    TooFewFaces(usize),
    #[error("camera intrinsics must be upper-triangular with positive focal lengths")]
    BadIntrinsics,
    #[error("plane normal must have unit norm, got {0}")]
    BadPlaneNormal(f64),
    #[error("camera mount height must be positive, got {0}")]
    BadMountHeight(f64),
    #[error("pose pair produces a near-singular homography")]
    SingularHomography,
}

/// Planar robot state (x, y, heading). The heading is kept in (-pi, pi] so
/// pose deltas are well-defined for stuck detection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2<S> {
    pub x: S,
    pub y: S,
    pub theta: S,
}

/// Wrap an angle into (-pi, pi].
pub fn normalize_angle<S: Real>(a: S) -> S {
    let two_pi = S::PI() + S::PI();
    let mut r = (a + S::PI()) % two_pi;
    if r < S::zero() {
        r = r + two_pi;
    }
    if r == S::zero() {
        S::PI()
    } else {
        r - S::PI()
    }
}

impl<S: Real> Pose2<S> {
    pub fn new(x: S, y: S, theta: S) -> Self {
        debug_assert!(x.is_finite() && y.is_finite() && theta.is_finite());
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn origin() -> Self {
        Self::new(S::zero(), S::zero(), S::zero())
    }

    pub fn position(&self) -> Vector2<S> {
        Vector2::new(self.x, self.y)
    }

    /// Body-to-world rotation matrix for this heading.
    pub fn rotation(&self) -> Matrix2<S> {
        let (s, c) = self.theta.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    /// Map a body-frame point into the world frame.
    pub fn to_world(&self, body: Vector2<S>) -> Vector2<S> {
        self.rotation() * body + self.position()
    }

    /// Map a world-frame point into the body frame.
    pub fn to_body(&self, world: Vector2<S>) -> Vector2<S> {
        self.rotation().transpose() * (world - self.position())
    }

    /// Euclidean distance between the (x, y) positions of two poses.
    pub fn distance_xy(&self, other: &Self) -> S {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }

    /// Full-state delta norm, with the heading difference wrapped.
    pub fn delta_norm(&self, other: &Self) -> S {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dt = normalize_angle(self.theta - other.theta);
        (dx * dx + dy * dy + dt * dt).sqrt()
    }
}

/// Rotation matrix for a pose heading. Convenience free function mirroring
/// [`Pose2::rotation`].
pub fn rotation_of<S: Real>(pose: &Pose2<S>) -> Matrix2<S> {
    pose.rotation()
}

/// Convex robot body as linear inequalities `G x <= g` in the body frame.
/// Every row of `G` has unit norm and the body origin is strictly interior.
#[derive(Clone, Debug, PartialEq)]
pub struct RobotPolytope<S> {
    normals: Vec<Vector2<S>>,
    offsets: Vec<S>,
    /// Set when the polytope is the canonical axis-aligned rectangle; enables
    /// the closed-form distance path.
    half_extents: Option<(S, S)>,
}

impl<S: Real> RobotPolytope<S> {
    pub fn new(normals: Vec<Vector2<S>>, offsets: Vec<S>) -> Result<Self, GeometryError> {
        if normals.len() < 3 {
            return Err(GeometryError::TooFewFaces(normals.len()));
        }
        assert_eq!(normals.len(), offsets.len());
        for (i, n) in normals.iter().enumerate() {
            let norm = (n.x * n.x + n.y * n.y).sqrt();
            if (norm - S::one()).abs() > S::from_f64(UNIT_NORM_TOL) {
                return Err(GeometryError::NonUnitNormal {
                    row: i,
                    norm: norm.as_f64(),
                });
            }
        }
        for (i, &g) in offsets.iter().enumerate() {
            if g <= S::zero() {
                return Err(GeometryError::OriginNotInterior(i));
            }
        }
        Ok(Self {
            normals,
            offsets,
            half_extents: None,
        })
    }

    /// Axis-aligned rectangle of the given overall length (x) and width (y),
    /// faces ordered (+x, -x, +y, -y).
    pub fn rectangle(length: S, width: S) -> Result<Self, GeometryError> {
        if length <= S::zero() {
            return Err(GeometryError::NonPositiveDimension(length.as_f64()));
        }
        if width <= S::zero() {
            return Err(GeometryError::NonPositiveDimension(width.as_f64()));
        }
        let two = S::from_f64(2.0);
        let hl = length / two;
        let hw = width / two;
        let normals = vec![
            Vector2::new(S::one(), S::zero()),
            Vector2::new(-S::one(), S::zero()),
            Vector2::new(S::zero(), S::one()),
            Vector2::new(S::zero(), -S::one()),
        ];
        let mut poly = Self::new(normals, vec![hl, hl, hw, hw])?;
        poly.half_extents = Some((hl, hw));
        Ok(poly)
    }

    pub fn face_count(&self) -> usize {
        self.normals.len()
    }

    pub fn normals(&self) -> &[Vector2<S>] {
        &self.normals
    }

    pub fn offsets(&self) -> &[S] {
        &self.offsets
    }

    /// `(half_length, half_width)` when the polytope is a canonical rectangle.
    pub fn half_extents(&self) -> Option<(S, S)> {
        self.half_extents
    }

    /// Evaluate `G q - g` for a body-frame point.
    pub fn face_margins(&self, q: Vector2<S>) -> Vec<S> {
        self.normals
            .iter()
            .zip(&self.offsets)
            .map(|(n, &g)| n.dot(&q) - g)
            .collect()
    }

    pub fn contains_body(&self, q: Vector2<S>) -> bool {
        self.face_margins(q).iter().all(|&m| m <= S::zero())
    }

    /// Polytope vertices in the body frame, counterclockwise. Faces are
    /// assumed non-redundant (every face supports an edge).
    pub fn vertices(&self) -> Vec<Vector2<S>> {
        let m = self.normals.len();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            let aa = self.normals[a].y.atan2(self.normals[a].x);
            let ab = self.normals[b].y.atan2(self.normals[b].x);
            aa.partial_cmp(&ab).unwrap()
        });
        let mut verts = Vec::with_capacity(m);
        for k in 0..m {
            let i = order[k];
            let j = order[(k + 1) % m];
            let ni = self.normals[i];
            let nj = self.normals[j];
            let det = ni.x * nj.y - ni.y * nj.x;
            if det.abs() < S::from_f64(1e-12) {
                continue;
            }
            let gi = self.offsets[i];
            let gj = self.offsets[j];
            verts.push(Vector2::new(
                (gi * nj.y - gj * ni.y) / det,
                (gj * ni.x - gi * nj.x) / det,
            ));
        }
        verts
    }

    /// Radius of the smallest origin-centered disk containing the body.
    pub fn circumradius(&self) -> S {
        self.vertices()
            .iter()
            .map(|v| (v.x * v.x + v.y * v.y).sqrt())
            .fold(S::zero(), |a, b| if b > a { b } else { a })
    }

    /// Body polygon expressed in the world frame at the given pose.
    pub fn world_polygon(&self, pose: &Pose2<S>) -> Vec<Vector2<S>> {
        self.vertices().iter().map(|v| pose.to_world(*v)).collect()
    }
}

/// Convenience constructor mirroring the rectangle chassis used throughout.
pub fn rect_polytope<S: Real>(length: S, width: S) -> Result<RobotPolytope<S>, GeometryError> {
    RobotPolytope::rectangle(length, width)
}

/// Outcome of projecting a 3D point through a camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Projection<S> {
    Pixel(Vector2<S>),
    BehindCamera,
}

impl<S: Real> Projection<S> {
    pub fn pixel(self) -> Option<Vector2<S>> {
        match self {
            Projection::Pixel(p) => Some(p),
            Projection::BehindCamera => None,
        }
    }
}

/// Pinhole camera rigidly mounted on the robot, plus the ground-plane
/// parameters used for mask warping.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel<S> {
    k: Matrix3<S>,
    k_inv: Matrix3<S>,
    rot_lidar_to_camera: Matrix3<S>,
    trans_lidar_to_camera: Vector3<S>,
    pub image_width: u32,
    pub image_height: u32,
    pub mount_height: S,
    plane_normal: Vector3<S>,
}

/// Camera-frame depths at or below this are classified behind-camera.
pub fn depth_epsilon<S: Real>() -> S {
    S::from_f64(1e-6)
}

impl<S: Real> CameraModel<S> {
    pub fn new(
        k: Matrix3<S>,
        rot_lidar_to_camera: Matrix3<S>,
        trans_lidar_to_camera: Vector3<S>,
        image_width: u32,
        image_height: u32,
        mount_height: S,
        plane_normal: Vector3<S>,
    ) -> Result<Self, GeometryError> {
        let zero = S::zero();
        let lower_ok = k[(1, 0)] == zero && k[(2, 0)] == zero && k[(2, 1)] == zero;
        if !lower_ok || k[(0, 0)] <= zero || k[(1, 1)] <= zero {
            return Err(GeometryError::BadIntrinsics);
        }
        let n_norm = plane_normal.dot(&plane_normal).sqrt();
        if (n_norm - S::one()).abs() > S::from_f64(UNIT_NORM_TOL) {
            return Err(GeometryError::BadPlaneNormal(n_norm.as_f64()));
        }
        if mount_height <= zero {
            return Err(GeometryError::BadMountHeight(mount_height.as_f64()));
        }
        let k_inv = invert3(&k).ok_or(GeometryError::BadIntrinsics)?;
        Ok(Self {
            k,
            k_inv,
            rot_lidar_to_camera,
            trans_lidar_to_camera,
            image_width,
            image_height,
            mount_height,
            plane_normal,
        })
    }

    /// Standard rig: camera at the robot origin at `mount_height`, optical
    /// axis along robot +x, level with the ground plane z = 0.
    pub fn forward_mounted(
        fx: S,
        fy: S,
        cx: S,
        cy: S,
        image_width: u32,
        image_height: u32,
        mount_height: S,
    ) -> Result<Self, GeometryError> {
        let zero = S::zero();
        let one = S::one();
        let k = Matrix3::new(fx, zero, cx, zero, fy, cy, zero, zero, one);
        // Robot axes in camera coordinates: x_cam = -y_r, y_cam = -z_r, z_cam = x_r.
        let rot = Matrix3::new(zero, -one, zero, zero, zero, -one, one, zero, zero);
        let trans = Vector3::new(zero, mount_height, zero);
        Self::new(
            k,
            rot,
            trans,
            image_width,
            image_height,
            mount_height,
            Vector3::new(zero, zero, one),
        )
    }

    pub fn intrinsics(&self) -> &Matrix3<S> {
        &self.k
    }

    /// Project a camera-frame point to pixel coordinates.
    pub fn project_camera(&self, p_cam: Vector3<S>) -> Projection<S> {
        if p_cam.z <= depth_epsilon::<S>() {
            return Projection::BehindCamera;
        }
        let h = self.k * p_cam;
        Projection::Pixel(Vector2::new(h.x / h.z, h.y / h.z))
    }

    /// Map a world-frame point into the camera frame at the given robot pose.
    pub fn world_to_camera(&self, robot_pose: &Pose2<S>, p_world: Vector3<S>) -> Vector3<S> {
        let rel = Vector2::new(p_world.x - robot_pose.x, p_world.y - robot_pose.y);
        let body = robot_pose.rotation().transpose() * rel;
        let p_lidar = Vector3::new(body.x, body.y, p_world.z);
        self.rot_lidar_to_camera * p_lidar + self.trans_lidar_to_camera
    }

    /// Project a world-frame point observed from the given robot pose. With
    /// the identity pose this is the plain lidar-frame projection.
    pub fn project_point(&self, robot_pose: &Pose2<S>, p_world: Vector3<S>) -> Projection<S> {
        self.project_camera(self.world_to_camera(robot_pose, p_world))
    }

    pub fn pixel_in_bounds(&self, px: Vector2<S>) -> bool {
        px.x >= S::zero()
            && px.y >= S::zero()
            && px.x < S::from_f64(f64::from(self.image_width))
            && px.y < S::from_f64(f64::from(self.image_height))
    }

    /// World pose of the camera at a robot pose: returns `(R_wc, c_w)` where
    /// columns of `R_wc` are the camera axes in world coordinates.
    pub fn camera_pose_world(&self, robot_pose: &Pose2<S>) -> (Matrix3<S>, Vector3<S>) {
        let r_cl = &self.rot_lidar_to_camera;
        let r_lc = r_cl.transpose();
        // Camera center in the lidar/robot frame.
        let c_l = -(r_lc * self.trans_lidar_to_camera);
        let r_wl = rot_z(robot_pose.theta);
        let r_wc = r_wl * r_lc;
        let c_w = r_wl * c_l + Vector3::new(robot_pose.x, robot_pose.y, S::zero());
        (r_wc, c_w)
    }

    /// Ground-plane induced homography mapping pixels of plane points imaged
    /// at `pose_tau` to their pixels at `pose_t`, normalized so H[2][2] = 1.
    pub fn plane_homography(
        &self,
        pose_tau: &Pose2<S>,
        pose_t: &Pose2<S>,
    ) -> Result<Matrix3<S>, GeometryError> {
        let (r_wc_tau, c_tau) = self.camera_pose_world(pose_tau);
        let (r_wc_t, c_t) = self.camera_pose_world(pose_t);
        let r_rel = r_wc_t.transpose() * r_wc_tau;
        let t_rel = r_wc_t.transpose() * (c_tau - c_t);

        // Plane through the world origin with the stored normal, expressed in
        // the tau camera frame as n^T p = d.
        let n_c = r_wc_tau.transpose() * self.plane_normal;
        let d = -self.plane_normal.dot(&c_tau);
        if d.abs() < S::from_f64(1e-9) {
            return Err(GeometryError::SingularHomography);
        }

        let h = self.k * (r_rel + t_rel * (n_c.transpose() / d)) * self.k_inv;
        let pivot = h[(2, 2)];
        if pivot.abs() < S::from_f64(1e-12) {
            return Err(GeometryError::SingularHomography);
        }
        let h = h / pivot;
        if invert3(&h).is_none() {
            return Err(GeometryError::SingularHomography);
        }
        Ok(h)
    }
}

/// Apply a homography to a pixel. Returns `None` when the point maps to
/// infinity (w ~ 0).
pub fn apply_homography<S: Real>(h: &Matrix3<S>, px: Vector2<S>) -> Option<Vector2<S>> {
    let v = h * Vector3::new(px.x, px.y, S::one());
    if v.z.abs() < S::from_f64(1e-12) {
        return None;
    }
    Some(Vector2::new(v.x / v.z, v.y / v.z))
}

/// Rotation about the world z axis.
pub fn rot_z<S: Real>(theta: S) -> Matrix3<S> {
    let (s, c) = theta.sin_cos();
    let zero = S::zero();
    let one = S::one();
    Matrix3::new(c, -s, zero, s, c, zero, zero, zero, one)
}

/// Adjugate-based 3x3 inverse; avoids pulling matrix decompositions into the
/// generic scalar bound.
pub fn invert3<S: Real>(m: &Matrix3<S>) -> Option<Matrix3<S>> {
    let a = m[(0, 0)];
    let b = m[(0, 1)];
    let c = m[(0, 2)];
    let d = m[(1, 0)];
    let e = m[(1, 1)];
    let f = m[(1, 2)];
    let g = m[(2, 0)];
    let h = m[(2, 1)];
    let i = m[(2, 2)];
    let det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g);
    if det.abs() < S::from_f64(1e-30) {
        return None;
    }
    let inv_det = S::one() / det;
    Some(Matrix3::new(
        (e * i - f * h) * inv_det,
        (c * h - b * i) * inv_det,
        (b * f - c * e) * inv_det,
        (f * g - d * i) * inv_det,
        (a * i - c * g) * inv_det,
        (c * d - a * f) * inv_det,
        (d * h - e * g) * inv_det,
        (b * g - a * h) * inv_det,
        (a * e - b * d) * inv_det,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rotation_zero_is_identity() {
        let r = rotation_of(&Pose2::new(0.0, 0.0, 0.0));
        assert_eq!(r, Matrix2::identity());
    }

    #[test]
    fn rotation_quarter_turn() {
        let r = rotation_of(&Pose2::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        assert_relative_eq!(r[(0, 0)], 0.0, epsilon = 1e-15);
        assert_relative_eq!(r[(0, 1)], -1.0, epsilon = 1e-15);
        assert_relative_eq!(r[(1, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(r[(1, 1)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn rotation_is_orthonormal() {
        let r = rotation_of(&Pose2::new(0.0, 0.0, 0.3));
        let rtr = r.transpose() * r;
        for i in 0..2 {
            for j in 0..2 {
                let expect: f64 = if i == j { 1.0 } else { 0.0 };
                assert!((rtr[(i, j)] - expect).abs() < 1e-12);
            }
        }
        let det: f64 = r[(0, 0)] * r[(1, 1)] - r[(0, 1)] * r[(1, 0)];
        assert!((det - 1.0).abs() < 1e-12);
    }

    #[test]
    fn angle_normalization_half_open() {
        assert_eq!(normalize_angle(std::f64::consts::PI), std::f64::consts::PI);
        assert_eq!(normalize_angle(-std::f64::consts::PI), std::f64::consts::PI);
        assert_relative_eq!(
            normalize_angle(3.0 * std::f64::consts::PI + 0.1),
            -std::f64::consts::PI + 0.1,
            epsilon = 1e-12
        );
    }

    #[test]
    fn rect_polytope_chassis_offsets() {
        let p = rect_polytope(0.322, 0.220).unwrap();
        assert_eq!(p.offsets(), &[0.161, 0.161, 0.110, 0.110]);
        assert_eq!(p.face_count(), 4);
    }

    #[test]
    fn rect_polytope_boundary_point_active_on_one_row() {
        let p = rect_polytope(2.0, 2.0).unwrap();
        let margins = p.face_margins(Vector2::new(1.0, 0.0));
        let active = margins.iter().filter(|&&m| m == 0.0).count();
        assert_eq!(active, 1);
        assert!(margins.iter().all(|&m| m <= 0.0));
    }

    #[test]
    fn rect_polytope_interior_point_strict() {
        let p = rect_polytope(1.0, 0.5).unwrap();
        assert!(p
            .face_margins(Vector2::new(0.3, 0.1))
            .iter()
            .all(|&m| m < 0.0));
    }

    #[test]
    fn rect_polytope_rejects_nonpositive() {
        assert!(rect_polytope(0.0, 1.0).is_err());
        assert!(rect_polytope(1.0, -0.2).is_err());
    }

    #[test]
    fn rect_vertices_and_circumradius() {
        let p = rect_polytope(0.322, 0.220).unwrap();
        let verts = p.vertices();
        assert_eq!(verts.len(), 4);
        let r = p.circumradius();
        assert_relative_eq!(r, (0.161f64.powi(2) + 0.110f64.powi(2)).sqrt(), epsilon = 1e-12);
    }

    fn test_camera() -> CameraModel<f64> {
        CameraModel::forward_mounted(500.0, 500.0, 320.0, 240.0, 640, 480, 0.4).unwrap()
    }

    #[test]
    fn project_axis_point_hits_principal_point() {
        let cam = test_camera();
        let px = cam.project_camera(Vector3::new(0.0, 0.0, 3.0)).pixel().unwrap();
        assert_relative_eq!(px.x, 320.0, epsilon = 1e-12);
        assert_relative_eq!(px.y, 240.0, epsilon = 1e-12);
    }

    #[test]
    fn project_zero_depth_is_behind_camera() {
        let cam = test_camera();
        assert_eq!(
            cam.project_camera(Vector3::new(1.0, 0.5, 0.0)),
            Projection::BehindCamera
        );
    }

    #[test]
    fn project_hand_evaluated_pixel() {
        let cam = test_camera();
        let px = cam.project_camera(Vector3::new(1.0, 0.5, 2.0)).pixel().unwrap();
        assert_relative_eq!(px.x, 570.0, epsilon = 1e-12);
        assert_relative_eq!(px.y, 365.0, epsilon = 1e-12);
    }

    #[test]
    fn forward_mounted_extrinsic_places_ground_ahead_below_center() {
        let cam = test_camera();
        let px = cam
            .project_point(&Pose2::origin(), Vector3::new(2.0, 0.0, 0.0))
            .pixel()
            .unwrap();
        assert_relative_eq!(px.x, 320.0, epsilon = 1e-12);
        assert!(px.y > 240.0);
    }

    #[test]
    fn homography_zero_motion_is_identity() {
        let cam = test_camera();
        let pose = Pose2::new(1.3, -0.4, 0.7);
        let h = cam.plane_homography(&pose, &pose).unwrap();
        let err: f64 = (h - Matrix3::identity()).abs().sum();
        assert!(err < 1e-9, "identity error {err}");
    }

    #[test]
    fn homography_pure_yaw_matches_k_r_kinv() {
        let cam = test_camera();
        let a = Pose2::new(0.0, 0.0, 0.0);
        let b = Pose2::new(0.0, 0.0, 0.25);
        let h = cam.plane_homography(&a, &b).unwrap();
        let (r_wc_a, _) = cam.camera_pose_world(&a);
        let (r_wc_b, _) = cam.camera_pose_world(&b);
        let r_rel = r_wc_b.transpose() * r_wc_a;
        let mut expect = cam.k * r_rel * cam.k_inv;
        expect /= expect[(2, 2)];
        let err: f64 = (h - expect).abs().sum();
        assert!(err < 1e-9, "rotation-only homography error {err}");
    }

    #[test]
    fn homography_warp_matches_direct_reprojection() {
        let cam = test_camera();
        let pose_tau = Pose2::new(0.0, 0.0, 0.0);
        let pose_t = Pose2::new(0.5, 0.0, 0.0);
        let ground = Vector3::new(3.0, 0.4, 0.0);
        let px_tau = cam.project_point(&pose_tau, ground).pixel().unwrap();
        let px_t = cam.project_point(&pose_t, ground).pixel().unwrap();
        let warped = apply_homography(&cam.plane_homography(&pose_tau, &pose_t).unwrap(), px_tau)
            .unwrap();
        assert!((warped - px_t).norm() < 1e-6, "warp error {}", (warped - px_t).norm());
    }

    #[test]
    fn generic_scalar_compiles_for_f32() {
        let p = Pose2::<f32>::new(0.5, 0.0, 0.3);
        let r = p.rotation();
        assert!((r[(0, 0)] - 0.3f32.cos()).abs() < 1e-6);
        let poly = rect_polytope(0.3f32, 0.2f32).unwrap();
        assert_eq!(poly.face_count(), 4);
    }
}
