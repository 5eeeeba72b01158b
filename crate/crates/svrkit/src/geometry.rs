//! Rigid-pose parametrizations and conversions.
//!
//! A sampling plane's pose is a rotation plus a world translation. Three
//! equivalent label encodings are supported: Euler angles, unit quaternions,
//! and the nine-parameter anchor triplet (plane centre plus two corners in
//! world millimetres). Conversions between all of them are exact up to
//! floating-point rounding, and `pose_from_anchors` inverts
//! `anchors_from_pose` so that a regressor predicting anchors yields a usable
//! pose.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvrError};

/// Tolerance for the orthonormality invariant of stored rotations.
pub const ROTATION_TOL: f64 = 1e-9;

/// Scale-invariant collinearity threshold for anchor triplets.
const COLLINEAR_EPS: f64 = 1e-9;

/// Rigid pose of a sampling plane: rotation plus world translation in mm.
///
/// For in-stack planes the translation is `R * (0, 0, z)` and `z_offset_mm`
/// records the stack offset; free poses carry `z_offset_mm = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub z_offset_mm: f64,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
    z_offset_mm: f64,
}

impl Serialize for RigidPose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut r = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                r[3 * i + j] = self.rotation[(i, j)];
            }
        }
        PoseRepr { r, t: self.translation.into(), z_offset_mm: self.z_offset_mm }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidPose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(d)?;
        let rotation = Matrix3::from_row_slice(&repr.r);
        let pose = RigidPose {
            rotation,
            translation: Vector3::from(repr.t),
            z_offset_mm: repr.z_offset_mm,
        };
        pose.validate().map_err(serde::de::Error::custom)?;
        Ok(pose)
    }
}

impl RigidPose {
    /// Pose from a validated rotation and an arbitrary translation.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Self { rotation, translation, z_offset_mm: 0.0 };
        pose.validate()?;
        Ok(pose)
    }

    /// Internal constructor for rotations that are orthonormal by construction.
    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation, z_offset_mm: 0.0 }
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros(), z_offset_mm: 0.0 }
    }

    /// In-stack plane pose: translation is `R * (0, 0, z)`.
    pub fn from_stack(rotation: Matrix3<f64>, z_offset_mm: f64) -> Self {
        let translation = rotation * Vector3::new(0.0, 0.0, z_offset_mm);
        Self { rotation, translation, z_offset_mm }
    }

    /// Checks the orthonormality invariant `||R^T R - I||_inf < 1e-9`, det +1.
    pub fn validate(&self) -> Result<()> {
        let gram = self.rotation.transpose() * self.rotation - Matrix3::identity();
        let err = gram.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if err >= ROTATION_TOL {
            return Err(SvrError::DegenerateGeometry(format!(
                "rotation not orthonormal (|R^T R - I| = {err:.3e})"
            )));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(SvrError::DegenerateGeometry(format!(
                "rotation determinant {det} != +1"
            )));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(SvrError::InvalidArgument("non-finite translation".into()));
        }
        Ok(())
    }

    /// World position of the in-plane point `(u, w, 0)` (mm).
    pub fn plane_point(&self, u: f64, w: f64) -> Vector3<f64> {
        self.rotation * Vector3::new(u, w, 0.0) + self.translation
    }

    /// Plane normal: the rotated local z axis.
    pub fn normal(&self) -> Vector3<f64> {
        self.rotation * Vector3::z()
    }

    /// Composes `self` with a local perturbation: `R <- R * dR`, `t <- t + dt`.
    pub fn perturbed(&self, d_rotation: &Matrix3<f64>, d_translation: &Vector3<f64>) -> Self {
        Self {
            rotation: self.rotation * d_rotation,
            translation: self.translation + d_translation,
            z_offset_mm: self.z_offset_mm,
        }
    }
}

/// Euler-angle pose: intrinsic `R = Rz(rz) * Ry(ry) * Rx(rx)`.
///
/// `rx`, `rz` lie in `[-pi, pi)` and `ry` in `[-pi/2, pi/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerPose {
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
}

/// Unit-quaternion pose, scalar-first `(q1, q2, q3, q4) = (w, x, y, z)`.
///
/// Canonicalized so `q1 >= 0`; `q` and `-q` denote the same rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuaternionPose {
    pub q: [f64; 4],
    pub t: [f64; 3],
}

/// Nine-parameter anchor label: plane centre and two corners in world mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorTriplet {
    pub pc: Vector3<f64>,
    pub pl: Vector3<f64>,
    pub pr: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct AnchorRepr {
    pc: [f64; 3],
    pl: [f64; 3],
    pr: [f64; 3],
}

impl Serialize for AnchorTriplet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        AnchorRepr { pc: self.pc.into(), pl: self.pl.into(), pr: self.pr.into() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for AnchorTriplet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = AnchorRepr::deserialize(d)?;
        Ok(Self {
            pc: Vector3::from(repr.pc),
            pl: Vector3::from(repr.pl),
            pr: Vector3::from(repr.pr),
        })
    }
}

impl AnchorTriplet {
    pub fn new(pc: Vector3<f64>, pl: Vector3<f64>, pr: Vector3<f64>) -> Self {
        Self { pc, pl, pr }
    }

    /// Flattens to `[pc, pl, pr]` component order, the regression target layout.
    pub fn to_array(&self) -> [f64; 9] {
        [
            self.pc.x, self.pc.y, self.pc.z, self.pl.x, self.pl.y, self.pl.z, self.pr.x,
            self.pr.y, self.pr.z,
        ]
    }

    pub fn from_array(v: &[f64; 9]) -> Self {
        Self {
            pc: Vector3::new(v[0], v[1], v[2]),
            pl: Vector3::new(v[3], v[4], v[5]),
            pr: Vector3::new(v[6], v[7], v[8]),
        }
    }
}

/// Anchor triplet of a plane pose with side length `l_mm`.
///
/// The centre maps to the pose translation; the corners are the rotated
/// in-plane offsets `(-L/2, -L/2, 0)` and `(L/2, -L/2, 0)`.
pub fn anchors_from_pose(pose: &RigidPose, l_mm: f64) -> AnchorTriplet {
    let half = 0.5 * l_mm;
    AnchorTriplet {
        pc: pose.translation,
        pl: pose.plane_point(-half, -half),
        pr: pose.plane_point(half, -half),
    }
}

/// Recovers the plane pose from an anchor triplet.
///
/// Builds the plane frame by cross products over the triplet's edge vectors:
/// `v1 = pr - pl` spans the in-plane x axis, `v2 = pc - (pl + pr)/2` the
/// in-plane y axis, `n1 = v1 x v2` the normal and `n2 = n1 x v1` the
/// re-orthogonalized y axis; the returned rotation has columns
/// `[v1_hat, n2_hat, n1_hat]` and the translation is `pc`. The result is
/// orthonormal with determinant +1 for any non-collinear triplet, and on
/// label-generated triplets it recovers the generating pose exactly.
pub fn pose_from_anchors(a: &AnchorTriplet) -> Result<RigidPose> {
    let v1 = a.pr - a.pl;
    let v2 = a.pc - 0.5 * (a.pl + a.pr);
    let s1 = v1.norm();
    let s2 = v2.norm();
    if s1 == 0.0 || s2 == 0.0 {
        return Err(SvrError::DegenerateGeometry(
            "anchor points coincide; plane frame undefined".into(),
        ));
    }
    let n1 = v1.cross(&v2);
    if n1.norm() < COLLINEAR_EPS * s1 * s2 {
        return Err(SvrError::DegenerateGeometry(
            "anchor points are collinear; plane frame undefined".into(),
        ));
    }
    let n2 = n1.cross(&v1);
    let rotation = Matrix3::from_columns(&[v1 / s1, n2 / n2.norm(), n1 / n1.norm()]);
    Ok(RigidPose::from_parts_unchecked(rotation, a.pc))
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let w = a - 2.0 * PI * ((a + PI) / (2.0 * PI)).floor();
    // floor rounding can land exactly on pi; fold it back.
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Rotation matrix for intrinsic `Rz(rz) * Ry(ry) * Rx(rx)`.
pub fn euler_to_rotation(e: &EulerPose) -> RigidPose {
    let r = Rotation3::from_euler_angles(e.rx, e.ry, e.rz);
    RigidPose {
        rotation: *r.matrix(),
        translation: Vector3::new(e.tx, e.ty, e.tz),
        z_offset_mm: 0.0,
    }
}

/// Euler angles of a pose under the `Rz * Ry * Rx` convention.
///
/// Away from gimbal lock (`|ry| = pi/2`) this inverts [`euler_to_rotation`];
/// at gimbal lock a canonical representative with `rx = 0` is returned.
pub fn rotation_to_euler(pose: &RigidPose) -> EulerPose {
    let r = &pose.rotation;
    let sy = -r[(2, 0)];
    let (rx, ry, rz) = if sy.abs() < 1.0 - 1e-12 {
        (
            f64::atan2(r[(2, 1)], r[(2, 2)]),
            sy.asin(),
            f64::atan2(r[(1, 0)], r[(0, 0)]),
        )
    } else {
        // Gimbal lock: only rz +/- rx is determined; pick rx = 0.
        let ry = if sy > 0.0 {
            std::f64::consts::FRAC_PI_2
        } else {
            -std::f64::consts::FRAC_PI_2
        };
        (0.0, ry, f64::atan2(-r[(0, 1)], r[(1, 1)]))
    };
    EulerPose {
        rx: wrap_angle(rx),
        ry,
        rz: wrap_angle(rz),
        tx: pose.translation.x,
        ty: pose.translation.y,
        tz: pose.translation.z,
    }
}

/// Rotation matrix of a unit quaternion (scalar-first).
pub fn quat_to_rotation(q: &QuaternionPose) -> Result<RigidPose> {
    let norm = q.q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(SvrError::InvalidArgument(format!(
            "quaternion norm {norm} too far from 1"
        )));
    }
    let [w, x, y, z] = [q.q[0] / norm, q.q[1] / norm, q.q[2] / norm, q.q[3] / norm];
    let rotation = Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    );
    Ok(RigidPose {
        rotation,
        translation: Vector3::from(q.t),
        z_offset_mm: 0.0,
    })
}

/// Unit quaternion of a pose, canonicalized so the scalar part is `>= 0`.
pub fn rotation_to_quat(pose: &RigidPose) -> QuaternionPose {
    let r = &pose.rotation;
    // Shepperd's method: pick the largest of the four squared components.
    let trace = r.trace();
    let (mut w, mut x, mut y, mut z);
    if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        w = 0.25 * s;
        x = (r[(2, 1)] - r[(1, 2)]) / s;
        y = (r[(0, 2)] - r[(2, 0)]) / s;
        z = (r[(1, 0)] - r[(0, 1)]) / s;
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        w = (r[(2, 1)] - r[(1, 2)]) / s;
        x = 0.25 * s;
        y = (r[(0, 1)] + r[(1, 0)]) / s;
        z = (r[(0, 2)] + r[(2, 0)]) / s;
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        w = (r[(0, 2)] - r[(2, 0)]) / s;
        x = (r[(0, 1)] + r[(1, 0)]) / s;
        y = 0.25 * s;
        z = (r[(1, 2)] + r[(2, 1)]) / s;
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        w = (r[(1, 0)] - r[(0, 1)]) / s;
        x = (r[(0, 2)] + r[(2, 0)]) / s;
        y = (r[(1, 2)] + r[(2, 1)]) / s;
        z = 0.25 * s;
    }
    let norm = (w * w + x * x + y * y + z * z).sqrt();
    w /= norm;
    x /= norm;
    y /= norm;
    z /= norm;
    if w < 0.0 {
        w = -w;
        x = -x;
        y = -y;
        z = -z;
    }
    QuaternionPose { q: [w, x, y, z], t: pose.translation.into() }
}

/// Mean point-to-point distance between two anchor triplets (mm).
pub fn anchor_error(gt: &AnchorTriplet, pred: &AnchorTriplet) -> f64 {
    ((gt.pc - pred.pc).norm() + (gt.pl - pred.pl).norm() + (gt.pr - pred.pr).norm()) / 3.0
}

/// Geodesic angle between two rotations in radians.
pub fn rotation_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let trace = (a.transpose() * b).trace();
    ((trace - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Translation error in mm and rotation error in degrees between two poses.
pub fn pose_error_decomposed(gt: &RigidPose, pred: &RigidPose) -> (f64, f64) {
    let trans = (gt.translation - pred.translation).norm();
    let rot = rotation_angle(&gt.rotation, &pred.rotation).to_degrees();
    (trans, rot)
}

/// Rotation by `angle` radians about an arbitrary axis.
pub fn rotation_about_axis(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).matrix()
}

/// Rotation taking the +z axis to `normal`.
///
/// Upper-hemisphere normals get the shortest-arc rotation. Lower-hemisphere
/// normals compose the shortest arc to `-normal` with a 180 degree rotation
/// about x, which stays well conditioned at the south pole and makes the
/// mirrored-hemisphere slice relation an exact in-plane flip.
pub fn rotation_from_z_to(normal: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let n = normal.norm();
    if n == 0.0 || !normal.iter().all(|v| v.is_finite()) {
        return Err(SvrError::InvalidArgument("zero or non-finite normal".into()));
    }
    let d = normal / n;
    if d.z >= 0.0 {
        Ok(shortest_arc_from_z(&d))
    } else {
        let flip_x = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        Ok(shortest_arc_from_z(&-d) * flip_x)
    }
}

/// Rodrigues shortest arc from +z to a unit vector with non-negative z.
fn shortest_arc_from_z(d: &Vector3<f64>) -> Matrix3<f64> {
    let v = Vector3::z().cross(d);
    let c = d.z;
    let k = 1.0 / (1.0 + c);
    let vx = Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0);
    Matrix3::identity() + vx + vx * vx * k
}

/// Uniformly distributed random rotation (normalized Gaussian quaternion).
pub fn random_rotation(rng: &mut impl rand::Rng) -> Matrix3<f64> {
    let q: [f64; 4] = std::array::from_fn(|_| rng.sample(rand_distr::StandardNormal));
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let qp = QuaternionPose {
        q: [q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm],
        t: [0.0; 3],
    };
    quat_to_rotation(&qp).expect("normalized quaternion").rotation
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn anchors_identity_pose() {
        let a = anchors_from_pose(&RigidPose::identity(), 256.0);
        assert_eq!(a.pc, Vector3::new(0.0, 0.0, 0.0));
        assert_eq!(a.pl, Vector3::new(-128.0, -128.0, 0.0));
        assert_eq!(a.pr, Vector3::new(128.0, -128.0, 0.0));
    }

    #[test]
    fn anchors_with_stack_offset() {
        let pose = RigidPose::from_stack(Matrix3::identity(), 12.0);
        let a = anchors_from_pose(&pose, 64.0);
        assert_eq!(a.pc, Vector3::new(0.0, 0.0, 12.0));
    }

    #[test]
    fn anchors_rotated_90_about_z() {
        let r = rotation_about_axis(&Vector3::z(), std::f64::consts::FRAC_PI_2);
        let pose = RigidPose::from_stack(r, 0.0);
        let a = anchors_from_pose(&pose, 2.0);
        assert_relative_eq!(a.pl, Vector3::new(1.0, -1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn pose_from_anchors_identity() {
        // Label anchors of the identity pose at z = 0.
        let a = AnchorTriplet::new(
            Vector3::zeros(),
            Vector3::new(-1.0, -1.0, 0.0),
            Vector3::new(1.0, -1.0, 0.0),
        );
        let pose = pose_from_anchors(&a).unwrap();
        assert_relative_eq!(pose.rotation, Matrix3::identity(), epsilon = 1e-12);
        assert_eq!(pose.translation, Vector3::zeros());
    }

    #[test]
    fn pose_from_anchors_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            let z = rng.gen_range(-32.0..32.0);
            let pose = RigidPose::from_stack(r, z);
            let a = anchors_from_pose(&pose, 64.0);
            let rec = pose_from_anchors(&a).unwrap();
            assert_relative_eq!(rec.rotation, r, epsilon = 1e-9);
            assert_relative_eq!(
                rec.translation,
                r * Vector3::new(0.0, 0.0, z),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn pose_from_anchors_orthonormal_on_noisy_triplets() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let r = random_rotation(&mut rng);
            let pose = RigidPose::from_stack(r, rng.gen_range(-10.0..10.0));
            let mut a = anchors_from_pose(&pose, 64.0);
            for p in [&mut a.pc, &mut a.pl, &mut a.pr] {
                *p += Vector3::new(
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                );
            }
            let rec = pose_from_anchors(&a).unwrap();
            rec.validate().unwrap();
        }
    }

    #[test]
    fn pose_from_anchors_collinear_is_degenerate() {
        let a = AnchorTriplet::new(
            Vector3::zeros(),
            Vector3::new(2.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
        );
        assert!(matches!(
            pose_from_anchors(&a),
            Err(SvrError::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn euler_identity() {
        let e = EulerPose { rx: 0.0, ry: 0.0, rz: 0.0, tx: 0.0, ty: 0.0, tz: 0.0 };
        assert_relative_eq!(
            euler_to_rotation(&e).rotation,
            Matrix3::identity(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn quat_identity() {
        let q = QuaternionPose { q: [1.0, 0.0, 0.0, 0.0], t: [0.0; 3] };
        assert_relative_eq!(
            quat_to_rotation(&q).unwrap().rotation,
            Matrix3::identity(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn euler_round_trip_1000_seeds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let r = random_rotation(&mut rng);
            let pose = RigidPose::from_parts_unchecked(r, Vector3::zeros());
            let e = rotation_to_euler(&pose);
            let back = euler_to_rotation(&e);
            assert_relative_eq!(back.rotation, r, epsilon = 1e-9);
            let e2 = rotation_to_euler(&back);
            assert_relative_eq!(e.rx, e2.rx, epsilon = 1e-9);
            assert_relative_eq!(e.ry, e2.ry, epsilon = 1e-9);
            assert_relative_eq!(e.rz, e2.rz, epsilon = 1e-9);
        }
    }

    #[test]
    fn quat_round_trip_and_sign_canonical() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let r = random_rotation(&mut rng);
            let pose = RigidPose::from_parts_unchecked(r, Vector3::zeros());
            let q = rotation_to_quat(&pose);
            assert!(q.q[0] >= 0.0);
            let back = quat_to_rotation(&q).unwrap();
            assert_relative_eq!(back.rotation, r, epsilon = 1e-9);
        }
    }

    #[test]
    fn anchor_error_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = random_rotation(&mut rng);
        let a = anchors_from_pose(&RigidPose::from_stack(r, 3.0), 64.0);
        assert_eq!(anchor_error(&a, &a), 0.0);

        let shift = Vector3::new(3.0, 0.0, 0.0);
        let b = AnchorTriplet::new(a.pc + shift, a.pl + shift, a.pr + shift);
        assert_relative_eq!(anchor_error(&a, &b), 3.0, epsilon = 1e-12);

        let c = AnchorTriplet::new(
            a.pc + Vector3::new(0.0, 3.0, 0.0),
            a.pl + Vector3::new(0.0, 0.0, 6.0),
            a.pr,
        );
        assert_relative_eq!(anchor_error(&a, &c), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn anchor_error_is_pseudometric() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut random_triplet = |rng: &mut ChaCha8Rng| {
            AnchorTriplet::new(
                Vector3::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0), 0.0),
                Vector3::new(rng.gen_range(-10.0..10.0), 0.0, rng.gen_range(-10.0..10.0)),
                Vector3::new(0.0, rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)),
            )
        };
        for _ in 0..200 {
            let a = random_triplet(&mut rng);
            let b = random_triplet(&mut rng);
            let c = random_triplet(&mut rng);
            let ab = anchor_error(&a, &b);
            assert_relative_eq!(ab, anchor_error(&b, &a), epsilon = 1e-12);
            assert!(ab >= 0.0);
            assert!(ab <= anchor_error(&a, &c) + anchor_error(&c, &b) + 1e-12);
        }
    }

    #[test]
    fn anchor_error_rigid_motion_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let a = anchors_from_pose(&RigidPose::from_stack(random_rotation(&mut rng), 1.0), 32.0);
            let b = anchors_from_pose(&RigidPose::from_stack(random_rotation(&mut rng), -2.0), 32.0);
            let m = random_rotation(&mut rng);
            let t = Vector3::new(
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
            );
            let move_triplet = |x: &AnchorTriplet| {
                AnchorTriplet::new(m * x.pc + t, m * x.pl + t, m * x.pr + t)
            };
            assert_relative_eq!(
                anchor_error(&a, &b),
                anchor_error(&move_triplet(&a), &move_triplet(&b)),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn pose_error_examples() {
        let gt = RigidPose::identity();
        assert_eq!(pose_error_decomposed(&gt, &gt), (0.0, 0.0));

        let rot = RigidPose::from_parts_unchecked(
            rotation_about_axis(&Vector3::x(), std::f64::consts::FRAC_PI_2),
            Vector3::zeros(),
        );
        let (t, r) = pose_error_decomposed(&gt, &rot);
        assert_eq!(t, 0.0);
        assert_relative_eq!(r, 90.0, epsilon = 1e-9);

        let trans = RigidPose::from_parts_unchecked(Matrix3::identity(), Vector3::new(0.0, 5.0, 0.0));
        let (t, r) = pose_error_decomposed(&gt, &trans);
        assert_relative_eq!(t, 5.0, epsilon = 1e-12);
        assert_relative_eq!(r, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn rotation_error_matches_quaternion_angle_oracle() {
        // Independent oracle: angle = 2*acos(|<q_a, q_b>|).
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..200 {
            let ra = random_rotation(&mut rng);
            let rb = random_rotation(&mut rng);
            let qa = rotation_to_quat(&RigidPose::from_parts_unchecked(ra, Vector3::zeros()));
            let qb = rotation_to_quat(&RigidPose::from_parts_unchecked(rb, Vector3::zeros()));
            let dot: f64 = qa.q.iter().zip(qb.q.iter()).map(|(x, y)| x * y).sum();
            let oracle = 2.0 * dot.abs().clamp(0.0, 1.0).acos();
            assert_relative_eq!(rotation_angle(&ra, &rb), oracle, epsilon = 1e-7);
        }
    }

    #[test]
    fn rotation_from_z_covers_both_hemispheres() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..500 {
            let n = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if n.norm() < 1e-3 {
                continue;
            }
            let r = rotation_from_z_to(&n).unwrap();
            RigidPose::from_parts_unchecked(r, Vector3::zeros()).validate().unwrap();
            assert_relative_eq!(r * Vector3::z(), n.normalize(), epsilon = 1e-12);
        }
        // Antipodal special case: exactly a 180 degree rotation about x.
        let r = rotation_from_z_to(&Vector3::new(0.0, 0.0, -1.0)).unwrap();
        assert!(r.iter().all(|v| v.is_finite()));
        assert_relative_eq!(
            r,
            Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn pose_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let pose = RigidPose::from_stack(random_rotation(&mut rng), 4.5);
        let json = serde_json::to_string(&pose).unwrap();
        let back: RigidPose = serde_json::from_str(&json).unwrap();
        assert_eq!(pose, back);

        let a = anchors_from_pose(&pose, 64.0);
        let json = serde_json::to_string(&a).unwrap();
        assert!(json.contains("\"pc\""));
        let back: AnchorTriplet = serde_json::from_str(&json).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn label_triplet_isosceles_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let l = rng.gen_range(8.0..256.0);
            let pose = RigidPose::from_stack(random_rotation(&mut rng), rng.gen_range(-9.0..9.0));
            let a = anchors_from_pose(&pose, l);
            let dl = a.pl - a.pc;
            let dr = a.pr - a.pc;
            assert_relative_eq!(dl.norm(), l / 2.0 * 2.0_f64.sqrt(), epsilon = 1e-6);
            assert_relative_eq!(dr.norm(), l / 2.0 * 2.0_f64.sqrt(), epsilon = 1e-6);
            assert!(dl.dot(&dr).abs() < 1e-6 * dl.norm() * dr.norm());
        }
    }
}
