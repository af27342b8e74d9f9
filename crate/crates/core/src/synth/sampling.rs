use std::collections::HashSet;
use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::render::nadir_pose;
use super::scene::HeightmapScene;
use crate::error::{Error, Result};
use crate::geometry::{so3_exp, PinholeCamera, Se3Pose};
use crate::iclk::{SparseFeature, FEATURE_BORDER};
use crate::image::DepthMap;

pub const MAX_POSE_ATTEMPTS: usize = 10_000;

/// Limits for [`sample_pose_pair`]. Angles in degrees, lengths in metres;
/// altitude is measured above the mean terrain elevation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseConstraints {
    pub altitude_min: f64,
    pub altitude_max: f64,
    /// Half-angle of the cone around nadir the optical axis is drawn from.
    pub max_tilt_deg: f64,
    /// Heading is uniform in `[-max_yaw_deg, max_yaw_deg]`.
    pub max_yaw_deg: f64,
    pub max_baseline: f64,
    pub max_relative_angle_deg: f64,
}

impl Default for PoseConstraints {
    fn default() -> Self {
        PoseConstraints {
            altitude_min: 60.0,
            altitude_max: 90.0,
            max_tilt_deg: 10.0,
            max_yaw_deg: 180.0,
            max_baseline: 6.0,
            max_relative_angle_deg: 5.0,
        }
    }
}

impl PoseConstraints {
    pub fn validate(&self) -> Result<()> {
        let ok = self.altitude_min > 0.0
            && self.altitude_max >= self.altitude_min
            && (0.0..90.0).contains(&self.max_tilt_deg)
            && (0.0..=180.0).contains(&self.max_yaw_deg)
            && self.max_baseline >= 0.0
            && (0.0..180.0).contains(&self.max_relative_angle_deg);
        if !ok {
            return Err(Error::InvalidInput(format!("invalid pose constraints {self:?}")));
        }
        Ok(())
    }
}

/// True when the camera is above the highest terrain point and all four
/// frustum corner rays meet the lowest terrain plane inside the extent.
pub fn view_inside_extent(scene: &HeightmapScene, camera: &PinholeCamera, pose: &Se3Pose) -> bool {
    let c = pose.translation;
    if c.z <= scene.max_height() {
        return false;
    }
    let (u1, v1) = (camera.width as f64 - 0.5, camera.height as f64 - 0.5);
    [(-0.5, -0.5), (u1, -0.5), (-0.5, v1), (u1, v1)].iter().all(|&(u, v)| {
        let d = pose.rotation * camera.ray(u, v);
        if d.z >= 0.0 {
            return false;
        }
        let t = (scene.min_height() - c.z) / d.z;
        let p = c + d * t;
        scene.contains(p.x, p.y)
    })
}

/// Rotation vector of a uniformly random axis with angle uniform in `[0, max]`.
pub fn random_rotation(rng: &mut impl Rng, max_angle: f64) -> Vector3<f64> {
    let angle = if max_angle > 0.0 {
        rng.gen_range(0.0..=max_angle)
    } else {
        0.0
    };
    unit_vector(rng) * angle
}

pub fn unit_vector(rng: &mut impl Rng) -> Vector3<f64> {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi = rng.gen_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).sqrt();
    Vector3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Uniform point in the ball of radius `r`.
fn in_ball(rng: &mut impl Rng, r: f64) -> Vector3<f64> {
    if r <= 0.0 {
        return Vector3::zeros();
    }
    unit_vector(rng) * r * rng.gen::<f64>().cbrt()
}

/// Draws `(T^W_{C0}, T^W_{C1})`: view 0 uniform over the scene and the
/// altitude band with its axis uniform inside the tilt cone, view 1 within
/// the baseline ball and relative-angle limit. Pairs with either view
/// leaving the extent are redrawn.
pub fn sample_pose_pair(
    scene: &HeightmapScene,
    camera: &PinholeCamera,
    rng: &mut impl Rng,
    constraints: &PoseConstraints,
) -> Result<(Se3Pose, Se3Pose)> {
    constraints.validate()?;
    let (xm, ym) = scene.extent();
    let base = scene.mean_height();
    let cos_max = constraints.max_tilt_deg.to_radians().cos();
    let max_yaw = constraints.max_yaw_deg.to_radians();
    let max_rel = constraints.max_relative_angle_deg.to_radians();
    for _ in 0..MAX_POSE_ATTEMPTS {
        let alt = if constraints.altitude_max > constraints.altitude_min {
            rng.gen_range(constraints.altitude_min..=constraints.altitude_max)
        } else {
            constraints.altitude_min
        };
        let position = Vector3::new(rng.gen_range(0.0..=xm), rng.gen_range(0.0..=ym), base + alt);
        let yaw = if max_yaw > 0.0 {
            rng.gen_range(-max_yaw..=max_yaw)
        } else {
            0.0
        };
        let cos_tilt = if cos_max < 1.0 { rng.gen_range(cos_max..=1.0) } else { 1.0 };
        let tilt = cos_tilt.clamp(-1.0, 1.0).acos();
        let azimuth = rng.gen_range(0.0..2.0 * PI);
        // tilt about a horizontal world axis, applied to a yawed nadir camera
        let tilt_axis = Vector3::new(azimuth.cos(), azimuth.sin(), 0.0) * tilt;
        let nadir = nadir_pose(Vector3::zeros()).rotation * so3_exp(&Vector3::new(0.0, 0.0, yaw));
        let pose0 = Se3Pose::new(so3_exp(&tilt_axis) * nadir, position);

        let offset = in_ball(rng, constraints.max_baseline);
        let rel = random_rotation(rng, max_rel);
        let pose1 = Se3Pose::new(pose0.rotation * so3_exp(&rel), position + offset);
        if view_inside_extent(scene, camera, &pose0) && view_inside_extent(scene, camera, &pose1) {
            return Ok((pose0, pose1));
        }
    }
    Err(Error::RejectionBudgetExceeded(MAX_POSE_ATTEMPTS))
}

/// `count` distinct integer pixels uniform over the valid-depth part of
/// `[b, W−b) × [b, H−b)`, with `b` the feature border.
pub fn sample_features(depth: &DepthMap, count: usize, rng: &mut impl Rng) -> Result<Vec<SparseFeature>> {
    let b = FEATURE_BORDER;
    let (w, h) = (depth.width, depth.height);
    let available = if w > 2 * b && h > 2 * b {
        (b..h - b)
            .flat_map(|v| (b..w - b).map(move |u| (u, v)))
            .filter(|&(u, v)| depth.is_valid(u, v))
            .count()
    } else {
        0
    };
    if available < count {
        return Err(Error::InsufficientValidDepth {
            available,
            needed: count,
        });
    }
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let (u, v) = (rng.gen_range(b..w - b), rng.gen_range(b..h - b));
        if depth.is_valid(u, v) && seen.insert((u, v)) {
            out.push(SparseFeature::new(u as f64, v as f64, 1.0 / depth.get(u, v)));
        }
    }
    Ok(out)
}
