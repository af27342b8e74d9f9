//! Rigid-body transforms on SE(3), their tangent twists, and the pinhole
//! camera model shared by every solver stage.
//!
//! Twists are ordered `(translation, rotation)`. Pixel coordinates have `u`
//! pointing right and `v` pointing down, with the origin at the centre of the
//! top-left pixel. The camera frame has `z` forward, `x` right, `y` down.

use std::ops::Mul;

use nalgebra::{Matrix2x6, Matrix3, Matrix4, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rotation angles at or above `PI - LOG_ANGLE_MARGIN` have no unique log.
pub const LOG_ANGLE_MARGIN: f64 = 1e-3;

/// Points closer than this to the image plane cannot be projected.
pub const MIN_POINT_DEPTH: f64 = 1e-9;

const SERIES_ANGLE: f64 = 1e-2;

/// Skew-symmetric cross-product matrix of `v`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Tangent-space increment `(translation, rotation)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist(pub Vector6<f64>);

impl Twist {
    pub fn zero() -> Self {
        Twist(Vector6::zeros())
    }

    pub fn new(translation: Vector3<f64>, rotation: Vector3<f64>) -> Self {
        Twist(Vector6::new(
            translation.x,
            translation.y,
            translation.z,
            rotation.x,
            rotation.y,
            rotation.z,
        ))
    }

    pub fn from_slice(v: &[f64; 6]) -> Self {
        Twist(Vector6::from_column_slice(v))
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn rotation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Rigid transform `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[[f64; 4]; 4]", try_from = "[[f64; 4]; 4]")]
pub struct Se3Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Se3Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Se3Pose {
    pub fn identity() -> Self {
        Se3Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Se3Pose { rotation, translation }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Se3Pose {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Pure rotation from an axis-angle vector.
    pub fn from_rotation_vector(omega: Vector3<f64>) -> Self {
        Se3Pose {
            rotation: so3_exp(&omega),
            translation: Vector3::zeros(),
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Se3Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
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

    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        Se3Pose {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }

    /// Frobenius norm of `RᵀR − I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm()
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.rotation.iter().all(|x| x.is_finite())
            && self.translation.iter().all(|x| x.is_finite())
            && self.orthonormality_error() <= tol
            && (self.rotation.determinant() - 1.0).abs() <= tol
    }

    /// Projects the rotation back onto SO(3) (closest rotation in Frobenius norm).
    pub fn renormalized(&self) -> Self {
        let svd = self.rotation.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Se3Pose {
            rotation: r,
            translation: self.translation,
        }
    }

    /// Geodesic rotation angle in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }
}

impl Mul for Se3Pose {
    type Output = Se3Pose;

    fn mul(self, rhs: Se3Pose) -> Se3Pose {
        Se3Pose {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation * rhs.translation + self.translation,
        }
    }
}

impl<'a> Mul<&'a Se3Pose> for &'a Se3Pose {
    type Output = Se3Pose;

    fn mul(self, rhs: &Se3Pose) -> Se3Pose {
        *self * *rhs
    }
}

impl From<Se3Pose> for [[f64; 4]; 4] {
    fn from(p: Se3Pose) -> Self {
        let m = p.to_matrix();
        let mut out = [[0.0; 4]; 4];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, x) in row.iter_mut().enumerate() {
                *x = m[(r, c)];
            }
        }
        out
    }
}

impl TryFrom<[[f64; 4]; 4]> for Se3Pose {
    type Error = String;

    fn try_from(rows: [[f64; 4]; 4]) -> std::result::Result<Self, String> {
        if rows[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(format!("last pose row must be [0, 0, 0, 1], got {:?}", rows[3]));
        }
        let m = Matrix4::from_fn(|r, c| rows[r][c]);
        let pose = Se3Pose::from_matrix(&m);
        if !pose.is_valid(1e-6) {
            return Err("pose rotation is not orthonormal".into());
        }
        Ok(pose)
    }
}

fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    // atan2 form stays accurate near 0 and π, unlike acos of the trace.
    let cos = 0.5 * (r.trace() - 1.0);
    let skew = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin = 0.5 * skew.norm();
    sin.atan2(cos)
}

/// Coefficients `(sinθ/θ, (1−cosθ)/θ², (θ−sinθ)/θ³)`.
fn exp_coefficients(theta: f64) -> (f64, f64, f64) {
    let t2 = theta * theta;
    if theta < SERIES_ANGLE {
        let t4 = t2 * t2;
        let t6 = t4 * t2;
        (
            1.0 - t2 / 6.0 + t4 / 120.0 - t6 / 5040.0,
            0.5 - t2 / 24.0 + t4 / 720.0 - t6 / 40320.0,
            1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0 - t6 / 362880.0,
        )
    } else {
        let half_sin = (0.5 * theta).sin();
        (
            theta.sin() / theta,
            2.0 * half_sin * half_sin / t2,
            (theta - theta.sin()) / (t2 * theta),
        )
    }
}

/// Rodrigues' formula.
pub fn so3_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let (a, b, _) = exp_coefficients(theta);
    let w = hat(omega);
    Matrix3::identity() + w * a + w * w * b
}

/// Rotation vector of `r`, erroring when the angle is within
/// [`LOG_ANGLE_MARGIN`] of π.
pub fn so3_log(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let theta = rotation_angle(r);
    if theta >= std::f64::consts::PI - LOG_ANGLE_MARGIN {
        return Err(Error::AngleNearPi { angle: theta });
    }
    let skew = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if theta < SERIES_ANGLE {
        let t2 = theta * theta;
        return Ok(skew * (0.5 + t2 / 12.0 + 7.0 * t2 * t2 / 720.0));
    }
    if theta < 3.0 {
        return Ok(skew * (theta / (2.0 * theta.sin())));
    }
    // Close to π the skew part vanishes; read the axis from the symmetric part.
    let cos = theta.cos();
    let kkt = ((r + r.transpose()) * 0.5 - Matrix3::identity() * cos) / (1.0 - cos);
    let i = (0..3).max_by(|&a, &b| kkt[(a, a)].total_cmp(&kkt[(b, b)])).unwrap();
    let mut axis: Vector3<f64> = kkt.column(i).into_owned() / kkt[(i, i)].max(0.0).sqrt();
    axis.normalize_mut();
    if axis.dot(&skew) < 0.0 {
        axis = -axis;
    }
    Ok(axis * theta)
}

/// Exponential map from a twist to a rigid transform.
pub fn se3_exp(xi: &Twist) -> Se3Pose {
    let rho = xi.translation();
    let omega = xi.rotation();
    let theta = omega.norm();
    let (a, b, c) = exp_coefficients(theta);
    let w = hat(&omega);
    let w2 = w * w;
    let rotation = Matrix3::identity() + w * a + w2 * b;
    let v = Matrix3::identity() + w * b + w2 * c;
    Se3Pose {
        rotation,
        translation: v * rho,
    }
}

/// Logarithm map, the inverse of [`se3_exp`] for rotation angles below
/// `π − LOG_ANGLE_MARGIN`.
pub fn se3_log(pose: &Se3Pose) -> Result<Twist> {
    let omega = so3_log(&pose.rotation)?;
    let theta = omega.norm();
    let w = hat(&omega);
    // V⁻¹ = I − ½W + k·W², k = (1 − A/(2B)) / θ².
    let k = if theta < SERIES_ANGLE {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        let (a, b, _) = exp_coefficients(theta);
        (1.0 - a / (2.0 * b)) / (theta * theta)
    };
    let v_inv = Matrix3::identity() - w * 0.5 + w * w * k;
    Ok(Twist::new(v_inv * pose.translation, omega))
}

/// Undistorted pinhole intrinsics plus image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl PinholeCamera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let cam = PinholeCamera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid camera intrinsics {self:?}")))
        }
    }

    /// Intrinsics for pyramid level `level` of a 2×2 block-average pyramid.
    ///
    /// Level-`k` pixel `i` covers level-0 pixels `[2ᵏi, 2ᵏ(i+1))`, so its
    /// centre sits at `2ᵏi + (2ᵏ−1)/2`; the principal point is shifted
    /// accordingly instead of being divided alone.
    pub fn at_level(&self, level: usize) -> PinholeCamera {
        let s = (1u64 << level) as f64;
        PinholeCamera {
            fx: self.fx / s,
            fy: self.fy / s,
            cx: (self.cx + 0.5) / s - 0.5,
            cy: (self.cy + 0.5) / s - 0.5,
            width: self.width >> level,
            height: self.height >> level,
        }
    }

    /// Whether pixel `(u, v)` can be bilinearly sampled, shrunk by `margin`.
    pub fn contains(&self, px: &Vector2<f64>, margin: f64) -> bool {
        px.x >= margin && px.y >= margin && px.x <= self.width as f64 - 1.0 - margin && px.y <= self.height as f64 - 1.0 - margin
    }

    /// Direction `K⁻¹[u, v, 1]` with unit z.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

/// Pinhole projection of a camera-frame point.
pub fn project(camera: &PinholeCamera, point_cam: &Vector3<f64>) -> Result<Vector2<f64>> {
    if point_cam.z <= MIN_POINT_DEPTH {
        return Err(Error::BehindCamera { z: point_cam.z });
    }
    Ok(Vector2::new(
        camera.fx * point_cam.x / point_cam.z + camera.cx,
        camera.fy * point_cam.y / point_cam.z + camera.cy,
    ))
}

/// Camera-frame point at `pixel` with the given inverse depth.
pub fn backproject(camera: &PinholeCamera, pixel: &Vector2<f64>, inverse_depth: f64) -> Result<Vector3<f64>> {
    if !(inverse_depth > 0.0) || !inverse_depth.is_finite() {
        return Err(Error::NonPositiveDepth(inverse_depth));
    }
    Ok(camera.ray(pixel.x, pixel.y) / inverse_depth)
}

/// Jacobian of `project(exp(ξ)·X)` with respect to `ξ` at `ξ = 0`.
pub fn warp_jacobian(camera: &PinholeCamera, point_cam: &Vector3<f64>) -> Result<Matrix2x6<f64>> {
    let (x, y, z) = (point_cam.x, point_cam.y, point_cam.z);
    if z <= MIN_POINT_DEPTH {
        return Err(Error::BehindCamera { z });
    }
    let iz = 1.0 / z;
    let iz2 = iz * iz;
    let (fx, fy) = (camera.fx, camera.fy);
    // dπ/dX · [I | −[X]×]
    #[rustfmt::skip]
    let j = Matrix2x6::new(
        fx * iz, 0.0, -fx * x * iz2, -fx * x * y * iz2, fx * (1.0 + x * x * iz2), -fx * y * iz,
        0.0, fy * iz, -fy * y * iz2, -fy * (1.0 + y * y * iz2), fy * x * y * iz2, fy * x * iz,
    );
    Ok(j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn cam() -> PinholeCamera {
        PinholeCamera::new(420.0, 410.0, 375.5, 239.5, 752, 480).unwrap()
    }

    /// Matrix exponential of the 4×4 twist generator by scaling and squaring
    /// a truncated Taylor series.
    fn expm_oracle(xi: &Twist) -> Matrix4<f64> {
        let mut g = Matrix4::zeros();
        g.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat(&xi.rotation()));
        g.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.translation());
        let squarings = 8;
        let a = g / f64::from(1u32 << squarings);
        let mut term = Matrix4::identity();
        let mut sum = Matrix4::identity();
        for k in 1..30 {
            term = term * a / k as f64;
            sum += term;
        }
        for _ in 0..squarings {
            sum = sum * sum;
        }
        sum
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(se3_exp(&Twist::zero()), Se3Pose::identity());
    }

    #[test]
    fn exp_quarter_turn_about_z() {
        let p = se3_exp(&Twist::new(Vector3::zeros(), Vector3::new(0.0, 0.0, PI / 2.0)));
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(p.rotation, expected, epsilon = 1e-15);
        assert_relative_eq!(p.translation, Vector3::zeros());
    }

    #[test]
    fn log_of_identity_is_zero() {
        assert_eq!(se3_log(&Se3Pose::identity()).unwrap(), Twist::zero());
    }

    #[test]
    fn log_rejects_angles_near_pi() {
        let angle = 179.99_f64.to_radians();
        let p = Se3Pose::from_rotation_vector(Vector3::new(0.0, angle, 0.0));
        assert!(matches!(se3_log(&p), Err(Error::AngleNearPi { .. })));
    }

    #[test]
    fn log_roundtrip_close_to_pi() {
        let xi = Twist::new(
            Vector3::new(1.0, -2.0, 0.5),
            Vector3::new(1.0, 2.0, -1.5).normalize() * (PI - 1.5e-3),
        );
        let back = se3_log(&se3_exp(&xi)).unwrap();
        assert_relative_eq!(back.0, xi.0, epsilon = 1e-9);
    }

    #[test]
    fn small_angle_branches_are_continuous() {
        for theta in [SERIES_ANGLE * 0.999, SERIES_ANGLE * 1.001] {
            let xi = Twist::new(Vector3::new(0.3, 0.1, -0.2), Vector3::new(theta, 0.0, 0.0));
            let oracle = expm_oracle(&xi);
            assert_relative_eq!(se3_exp(&xi).to_matrix(), oracle, epsilon = 1e-12);
            assert_relative_eq!(se3_log(&se3_exp(&xi)).unwrap().0, xi.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn project_examples() {
        let unit = PinholeCamera {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
            width: 1,
            height: 1,
        };
        assert_eq!(project(&unit, &Vector3::new(0.0, 0.0, 1.0)).unwrap(), Vector2::zeros());
        let c = PinholeCamera {
            fx: 100.0,
            fy: 100.0,
            cx: 376.0,
            cy: 240.0,
            width: 752,
            height: 480,
        };
        assert_eq!(project(&c, &Vector3::new(1.0, 0.0, 2.0)).unwrap().x, 426.0);
        assert!(matches!(
            project(&c, &Vector3::new(1.0, 0.0, 0.0)),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn backproject_principal_point() {
        let c = cam();
        let p = backproject(&c, &Vector2::new(c.cx, c.cy), 0.5).unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 2.0));
        assert!(matches!(
            backproject(&c, &Vector2::new(1.0, 1.0), 0.0),
            Err(Error::NonPositiveDepth(_))
        ));
    }

    #[test]
    fn jacobian_on_optical_axis() {
        let c = cam();
        let j = warp_jacobian(&c, &Vector3::new(0.0, 0.0, 4.0)).unwrap();
        assert_eq!(j[(0, 0)], c.fx / 4.0);
        assert_eq!(j[(1, 0)], 0.0);
        let j2 = warp_jacobian(&c, &Vector3::new(0.0, 0.0, 8.0)).unwrap();
        for col in 0..3 {
            for row in 0..2 {
                assert_relative_eq!(j2[(row, col)], 0.5 * j[(row, col)]);
            }
        }
    }

    #[test]
    fn level_intrinsics_keep_pixel_centres_aligned() {
        let c = cam();
        let c3 = c.at_level(3);
        // Level-3 pixel 0 centre is level-0 coordinate 3.5.
        let x = backproject(&c, &Vector2::new(3.5, 3.5), 1.0).unwrap();
        let px = project(&c3, &x).unwrap();
        assert_relative_eq!(px, Vector2::new(0.0, 0.0), epsilon = 1e-12);
        assert_eq!((c3.width, c3.height), (94, 60));
    }

    #[test]
    fn pose_json_is_row_major_4x4() {
        let p = Se3Pose::new(
            Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
            Vector3::new(1.0, 2.0, 3.0),
        );
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(
            s,
            "[[0.0,-1.0,0.0,1.0],[1.0,0.0,0.0,2.0],[0.0,0.0,1.0,3.0],[0.0,0.0,0.0,1.0]]"
        );
        let back: Se3Pose = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<Se3Pose>("[[2,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]").is_err());
    }

    fn twist_strategy(max_angle: f64) -> impl Strategy<Value = Twist> {
        (
            prop::array::uniform3(-5.0..5.0f64),
            prop::array::uniform3(-1.0..1.0f64),
            0.0..max_angle,
        )
            .prop_filter_map("non-zero axis", |(t, w, angle)| {
                let w = Vector3::from(w);
                (w.norm() > 1e-3).then(|| Twist::new(Vector3::from(t), w.normalize() * angle))
            })
    }

    proptest! {
        #[test]
        fn exp_matches_series_oracle(xi in twist_strategy(PI - 1e-3)) {
            let m = se3_exp(&xi).to_matrix();
            let oracle = expm_oracle(&xi);
            prop_assert!((m - oracle).abs().max() < 1e-10, "diff {}", (m - oracle).abs().max());
            prop_assert!(se3_exp(&xi).is_valid(1e-9));
        }

        #[test]
        fn log_inverts_exp(xi in twist_strategy(PI - 1e-3)) {
            let pose = se3_exp(&xi);
            let back = se3_exp(&se3_log(&pose).unwrap());
            prop_assert!((back.to_matrix() - pose.to_matrix()).abs().max() < 1e-9);
        }

        #[test]
        fn exp_is_additive_to_first_order(
            a in prop::array::uniform6(-1e-3..1e-3f64),
            b in prop::array::uniform6(-1e-3..1e-3f64),
        ) {
            let (xa, xb) = (Twist::from_slice(&a), Twist::from_slice(&b));
            let lhs = se3_exp(&xa) * se3_exp(&xb);
            let rhs = se3_exp(&Twist(xa.0 + xb.0));
            let scale = xa.norm().max(xb.norm());
            prop_assert!((lhs.to_matrix() - rhs.to_matrix()).norm() <= 2.0 * scale * scale + 1e-15);
        }

        #[test]
        fn backproject_inverts_project(
            u in 0.0..752.0f64, v in 0.0..480.0f64, rho in 1e-3..10.0f64,
        ) {
            let c = cam();
            let px = Vector2::new(u, v);
            let back = project(&c, &backproject(&c, &px, rho).unwrap()).unwrap();
            prop_assert!((back - px).norm() < 1e-9);
        }

        #[test]
        fn project_matches_scalar_formula(
            x in -10.0..10.0f64, y in -10.0..10.0f64, z in 0.1..50.0f64,
        ) {
            let c = cam();
            let px = project(&c, &Vector3::new(x, y, z)).unwrap();
            let u = c.fx * (x / z) + c.cx;
            let v = c.fy * (y / z) + c.cy;
            prop_assert!((px.x - u).abs() <= 1e-12 * u.abs().max(1.0));
            prop_assert!((px.y - v).abs() <= 1e-12 * v.abs().max(1.0));
        }

        #[test]
        fn warp_jacobian_matches_finite_differences(
            x in -5.0..5.0f64, y in -5.0..5.0f64, z in 1.0..30.0f64,
        ) {
            let c = cam();
            let p = Vector3::new(x, y, z);
            let j = warp_jacobian(&c, &p).unwrap();
            let h = 1e-6;
            for k in 0..6 {
                let mut d = Vector6::zeros();
                d[k] = h;
                let plus = project(&c, &se3_exp(&Twist(d)).transform_point(&p)).unwrap();
                let minus = project(&c, &se3_exp(&Twist(-d)).transform_point(&p)).unwrap();
                let fd = (plus - minus) / (2.0 * h);
                for r in 0..2 {
                    let err = (fd[r] - j[(r, k)]).abs() / j[(r, k)].abs().max(1.0);
                    prop_assert!(err < 1e-4, "entry ({r},{k}) fd {} analytic {}", fd[r], j[(r, k)]);
                }
            }
        }
    }
}
