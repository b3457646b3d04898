//! Pinhole camera, rigid poses and Cayley-parametrized pose updates.
//!
//! A [`Pose`] `(R, t)` maps camera coordinates into its parent frame:
//! `x_parent = R x_cam + t`. A point `s` of the parent frame therefore
//! appears in the camera as `Rᵀ (s - t)`.

use std::fmt;
use std::ops::Mul;
use std::str::FromStr;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3, Vector6};

use crate::error::{Error, Result};

/// Pinhole intrinsics in pixels. Images are assumed undistorted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::invalid("intrinsics", "focal lengths must be positive"));
        }
        if !(cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64) {
            return Err(Error::invalid("intrinsics", "principal point must lie inside the image"));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Named calibrations of the public TUM RGB-D sequences (640x480).
    pub fn preset(name: &str) -> Option<Self> {
        let (fx, fy, cx, cy) = match name {
            "tum_fr1" | "fr1" => (517.3, 516.5, 318.6, 255.3),
            "tum_fr2" | "fr2" => (520.9, 521.0, 325.1, 249.7),
            "tum_fr3" | "fr3" => (535.4, 539.2, 320.1, 247.6),
            "tum_default" | "default" => (525.0, 525.0, 319.5, 239.5),
            _ => return None,
        };
        Some(Self {
            fx,
            fy,
            cx,
            cy,
            width: 640,
            height: 480,
        })
    }

    /// Intrinsics of the half-resolution image obtained by 2x2 decimation.
    pub fn half(&self) -> Self {
        Self {
            fx: self.fx / 2.0,
            fy: self.fy / 2.0,
            cx: self.cx / 2.0 - 0.25,
            cy: self.cy / 2.0 - 0.25,
            width: self.width / 2,
            height: self.height / 2,
        }
    }

    /// `true` if `p` lies in `[0, width-1] x [0, height-1]`.
    #[inline]
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= (self.width - 1) as f64 && p.y <= (self.height - 1) as f64
    }
}

/// `fx fy cx cy width height` on one line; `#` starts a comment.
impl FromStr for CameraIntrinsics {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let trimmed = s.trim();
        if let Some(preset) = Self::preset(trimmed) {
            return Ok(preset);
        }
        let fields: Vec<&str> = s
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace)
            .collect();
        if fields.len() != 6 {
            return Err(Error::invalid("intrinsics", format!("expected 6 values, got {}", fields.len())));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| Error::invalid("intrinsics", format!("`{}`: {e}", fields[i])))
        };
        let dim = |i: usize| -> Result<usize> {
            fields[i]
                .parse::<usize>()
                .map_err(|e| Error::invalid("intrinsics", format!("`{}`: {e}", fields[i])))
        };
        Self::new(num(0)?, num(1)?, num(2)?, num(3)?, dim(4)?, dim(5)?)
    }
}

impl fmt::Display for CameraIntrinsics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {} {} {}", self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }
}

/// Pinhole projection of a camera-frame point.
pub fn project(intr: &CameraIntrinsics, point_cam: &Vector3<f64>) -> Result<Vector2<f64>> {
    if !(point_cam.z > 0.0) {
        return Err(Error::NonPositiveDepth(point_cam.z));
    }
    Ok(project_unchecked(intr, point_cam))
}

#[inline]
pub(crate) fn project_unchecked(intr: &CameraIntrinsics, p: &Vector3<f64>) -> Vector2<f64> {
    Vector2::new(intr.fx * p.x / p.z + intr.cx, intr.fy * p.y / p.z + intr.cy)
}

/// Unit bearing through pixel `p`.
pub fn backproject(intr: &CameraIntrinsics, pixel: &Vector2<f64>) -> Vector3<f64> {
    Vector3::new((pixel.x - intr.cx) / intr.fx, (pixel.y - intr.cy) / intr.fy, 1.0).normalize()
}

#[inline]
pub fn skew(c: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -c.z, c.y, c.z, 0.0, -c.x, -c.y, c.x, 0.0)
}

/// `R = (I + [c]x)(I - [c]x)^-1`, evaluated in closed form.
///
/// Exactly the identity at `c = 0`. Rotates by `2 atan(|c|)` about `c`.
pub fn cayley_to_rotation(c: &Vector3<f64>) -> Matrix3<f64> {
    let k = skew(c);
    let n2 = c.norm_squared();
    Matrix3::identity() + (k + k * k) * (2.0 / (1.0 + n2))
}

/// Inverse Cayley map, `[c]x = (R - I)(R + I)^-1`. Undefined for half turns.
pub fn rotation_to_cayley(r: &Matrix3<f64>) -> Vector3<f64> {
    // From the closed form: R - Rᵀ = 4[c]x / (1+|c|²) and tr R = (3 - |c|²)/(1+|c|²).
    let denom = 1.0 + r.trace();
    Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) / denom
}

/// Rotation angle in radians, stable near zero.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let s = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm() / 2.0;
    let c = (r.trace() - 1.0) / 2.0;
    s.atan2(c)
}

/// Nearest rotation matrix in the Frobenius sense.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * vt;
    }
    r
}

/// Compositions after which [`compose`] re-projects R onto SO(3).
pub const REORTHONORMALIZE_EVERY: u32 = 100;

/// Rigid transform, camera-to-parent.
#[derive(Debug, Clone, Copy)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    compositions: u32,
}

impl PartialEq for Pose {
    fn eq(&self, other: &Self) -> bool {
        self.rotation == other.rotation && self.translation == other.translation
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
            compositions: 0,
        }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    pub fn from_axis_angle(axis_angle: &Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self::new(*Rotation3::new(*axis_angle).matrix(), translation)
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self::new(*q.to_rotation_matrix().matrix(), translation)
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    /// Parent-frame point into this camera's frame: `Rᵀ (s - t)`.
    #[inline]
    pub fn to_camera(&self, s: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.tr_mul(&(s - self.translation))
    }

    #[inline]
    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// `‖RᵀR - I‖_F`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm()
    }

    pub fn reorthonormalized(&self) -> Self {
        Self::new(nearest_rotation(&self.rotation), self.translation)
    }

    /// Rotation angle (radians) and translation norm of `self⁻¹ other`.
    pub fn distance(&self, other: &Pose) -> (f64, f64) {
        let rel = self.inverse() * *other;
        (rotation_angle(&rel.rotation), rel.translation.norm())
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        Pose::new(self.rotation * rhs.rotation, self.rotation * rhs.translation + self.translation)
    }
}

/// Local pose update `[c1, c2, c3, tx, ty, tz]`: Cayley rotation parameters
/// followed by a translation in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseDelta(pub Vector6<f64>);

impl PoseDelta {
    pub fn zero() -> Self {
        Self(Vector6::zeros())
    }

    pub fn new(cayley: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self(Vector6::new(cayley.x, cayley.y, cayley.z, translation.x, translation.y, translation.z))
    }

    pub fn cayley(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0 * s)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// The delta `d` with `compose(from, d) == to`.
    pub fn between(from: &Pose, to: &Pose) -> Self {
        let rel = from.rotation.transpose() * to.rotation;
        Self::new(rotation_to_cayley(&rel), to.translation - from.translation)
    }
}

/// `R_new = R_base C(c)`, `t_new = t_base + t_delta`.
pub fn compose(base: &Pose, delta: &PoseDelta) -> Pose {
    let rotation = base.rotation * cayley_to_rotation(&delta.cayley());
    let translation = base.translation + delta.translation();
    let compositions = base.compositions + 1;
    if compositions >= REORTHONORMALIZE_EVERY {
        Pose::new(nearest_rotation(&rotation), translation)
    } else {
        Pose {
            rotation,
            translation,
            compositions,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn projects_on_axis_and_off_axis() {
        let unit = CameraIntrinsics {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
            width: 1,
            height: 1,
        };
        assert_eq!(project(&unit, &Vector3::new(0.0, 0.0, 1.0)).unwrap(), Vector2::new(0.0, 0.0));
        assert_eq!(project(&intr(), &Vector3::new(1.0, 0.0, 2.0)).unwrap(), Vector2::new(370.0, 240.0));
        assert!(matches!(
            project(&intr(), &Vector3::new(1.0, 0.0, 0.0)),
            Err(Error::NonPositiveDepth(_))
        ));
        assert!(project(&intr(), &Vector3::new(1.0, 0.0, -1.0)).is_err());
    }

    #[test]
    fn backprojects_principal_point_and_45_degrees() {
        let k = intr();
        assert_eq!(backproject(&k, &Vector2::new(320.0, 240.0)), Vector3::new(0.0, 0.0, 1.0));
        let b = backproject(&k, &Vector2::new(420.0, 240.0));
        let e = Vector3::new(1.0, 0.0, 1.0) / 2f64.sqrt();
        assert!((b - e).norm() < 1e-15);
    }

    #[test]
    fn project_backproject_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in [intr(), CameraIntrinsics::preset("fr1").unwrap(), CameraIntrinsics::preset("fr3").unwrap()] {
            for _ in 0..1000 {
                let p = Vector2::new(rng.random_range(-50.0..700.0), rng.random_range(-50.0..500.0));
                let d = rng.random_range(0.1..10.0);
                let f = backproject(&k, &p);
                assert!((f.norm() - 1.0).abs() < 1e-12);
                let unnorm = f / f.z;
                assert!((unnorm.z - 1.0).abs() < 1e-15);
                let q = project(&k, &(f * d)).unwrap();
                assert!((q - p).norm() < 1e-9, "{p} -> {q}");
            }
        }
    }

    #[test]
    fn intrinsics_validation_and_parsing() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 5.0, 1.0, 4, 4).is_err());
        let k: CameraIntrinsics = "517.3 516.5 318.6 255.3 640 480 # fr1".parse().unwrap();
        assert_eq!(k, CameraIntrinsics::preset("tum_fr1").unwrap());
        assert_eq!(k.to_string().parse::<CameraIntrinsics>().unwrap(), k);
        assert_eq!("fr2".parse::<CameraIntrinsics>().unwrap().fx, 520.9);
        assert!("1 2 3".parse::<CameraIntrinsics>().is_err());
    }

    #[test]
    fn cayley_zero_is_exact_identity() {
        assert_eq!(cayley_to_rotation(&Vector3::zeros()), Matrix3::identity());
    }

    #[test]
    fn cayley_matches_axis_angle() {
        let r = cayley_to_rotation(&Vector3::new(0.0, 0.0, 1.0));
        assert!((r * Vector3::x() - Vector3::y()).norm() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let axis = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                .normalize();
            let phi: f64 = rng.random_range(-3.0..3.0);
            let c = axis * (phi / 2.0).tan();
            let expected = Rotation3::new(axis * phi);
            assert!((cayley_to_rotation(&c) - expected.matrix()).norm() < 1e-12);
            let back = rotation_to_cayley(&cayley_to_rotation(&c));
            assert!((back - c).norm() < 1e-9 * (1.0 + c.norm_squared()));
        }
    }

    #[test]
    fn cayley_first_order_is_twice_the_skew() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let c = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                * 0.02;
            let lin = Matrix3::identity() + skew(&c) * 2.0;
            let err = (cayley_to_rotation(&c) - lin).norm();
            assert!(err <= 10.0 * c.norm_squared(), "{err}");
        }
    }

    #[test]
    fn compose_identity_and_translation() {
        let base = Pose::from_axis_angle(&Vector3::new(0.1, -0.2, 0.3), Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(compose(&base, &PoseDelta::zero()), base);
        let moved = compose(&Pose::identity(), &PoseDelta::new(Vector3::zeros(), Vector3::new(1.0, 2.0, 3.0)));
        assert_eq!(moved.translation, Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn translation_only_compose_inverts() {
        let p = Pose::from_axis_angle(&Vector3::new(0.3, 0.1, -0.4), Vector3::new(0.5, -1.0, 2.0));
        let d = PoseDelta::new(Vector3::zeros(), Vector3::new(0.25, -0.125, 3.0));
        let back = compose(&compose(&p, &d), &d.scaled(-1.0));
        let (angle, dist) = p.distance(&back);
        assert!(angle < 1e-9 && dist < 1e-9);
    }

    #[test]
    fn between_inverts_compose() {
        let p = Pose::from_axis_angle(&Vector3::new(0.3, 0.1, -0.4), Vector3::new(0.5, -1.0, 2.0));
        let d = PoseDelta::new(Vector3::new(0.01, -0.02, 0.03), Vector3::new(0.1, 0.2, -0.3));
        let q = compose(&p, &d);
        let d2 = PoseDelta::between(&p, &q);
        assert!((d2.0 - d.0).norm() < 1e-12);
    }

    #[test]
    fn chained_updates_stay_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pose = Pose::identity();
        let mut worst: f64 = 0.0;
        for _ in 0..100_000 {
            let c = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            pose = compose(&pose, &PoseDelta::new(c * 0.2, Vector3::zeros()));
            worst = worst.max(pose.orthonormality_error());
        }
        assert!(worst <= 1e-6, "{worst}");
        assert!((pose.rotation.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pose_inverse_and_quaternion() {
        let p = Pose::from_axis_angle(&Vector3::new(0.2, 0.4, -0.1), Vector3::new(1.0, -2.0, 0.5));
        let id = p * p.inverse();
        assert!((id.rotation - Matrix3::identity()).norm() < 1e-12 && id.translation.norm() < 1e-12);
        let q = Pose::from_quaternion(&p.quaternion(), p.translation);
        assert!((q.rotation - p.rotation).norm() < 1e-12);
        let s = Vector3::new(0.3, 0.2, 4.0);
        assert!((p.to_camera(&p.transform_point(&s)) - s).norm() < 1e-12);
    }

    #[test]
    fn rotation_angle_is_accurate_for_small_and_large_angles() {
        for phi in [1e-9, 1e-4, 0.5, 3.0] {
            let r = Rotation3::new(Vector3::new(0.0, phi, 0.0));
            assert!((rotation_angle(r.matrix()) - phi).abs() < 1e-12 * (1.0 + phi));
        }
    }
}
