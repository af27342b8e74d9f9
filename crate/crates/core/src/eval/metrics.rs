use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{backproject, project, so3_log, PinholeCamera, Se3Pose};
use crate::iclk::SparseFeature;
use crate::image::DepthMap;
use crate::refine::FeatureCorrespondence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Initial,
    Iclk,
    FeatureAlignment,
    PoseOptimization,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Initial, Stage::Iclk, Stage::FeatureAlignment, Stage::PoseOptimization];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Initial => "initial",
            Stage::Iclk => "iclk",
            Stage::FeatureAlignment => "feature_alignment",
            Stage::PoseOptimization => "pose_optimization",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Errors of one stage against ground truth; pixels, metres and radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub stage: Stage,
    pub e_pixel: f64,
    pub e_transl: f64,
    pub e_rot: f64,
    pub epe_3d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelError {
    pub mean: f64,
    pub used: usize,
    /// Features behind the camera or outside the image under either pose.
    pub excluded: usize,
}

fn in_image(camera: &PinholeCamera, px: &Vector2<f64>) -> bool {
    camera.contains(px, 0.0)
}

/// Mean distance between each feature projected with `est` and with `gt`.
pub fn pixel_error(features: &[SparseFeature], gt: &Se3Pose, est: &Se3Pose, camera: &PinholeCamera) -> Result<PixelError> {
    let mut sum = 0.0;
    let mut used = 0;
    for f in features {
        let x = backproject(camera, &f.pixel(), f.inverse_depth)?;
        let (Ok(a), Ok(b)) = (
            project(camera, &est.transform_point(&x)),
            project(camera, &gt.transform_point(&x)),
        ) else {
            continue;
        };
        if in_image(camera, &a) && in_image(camera, &b) {
            sum += (a - b).norm();
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::AllOutOfBounds);
    }
    Ok(PixelError {
        mean: sum / used as f64,
        used,
        excluded: features.len() - used,
    })
}

/// Mean distance between the aligned target of every converged
/// correspondence and its ground-truth location.
pub fn correspondence_error(
    correspondences: &[FeatureCorrespondence],
    gt: &Se3Pose,
    camera: &PinholeCamera,
) -> Result<PixelError> {
    let mut sum = 0.0;
    let mut used = 0;
    for c in correspondences.iter().filter(|c| c.alignment_converged) {
        let x = backproject(camera, &c.ref_pixel, c.inverse_depth)?;
        let Ok(truth) = project(camera, &gt.transform_point(&x)) else {
            continue;
        };
        if in_image(camera, &truth) && in_image(camera, &c.target_pixel) {
            sum += (c.target_pixel - truth).norm();
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::AllOutOfBounds);
    }
    Ok(PixelError {
        mean: sum / used as f64,
        used,
        excluded: correspondences.len() - used,
    })
}

/// `(‖t_est − t_gt‖, angle of R_est·R_gtᵀ)`.
pub fn pose_error(gt: &Se3Pose, est: &Se3Pose) -> Result<(f64, f64)> {
    let e_transl = (est.translation - gt.translation).norm();
    let e_rot = so3_log(&(est.rotation * gt.rotation.transpose()))?.norm();
    Ok((e_transl, e_rot))
}

/// Mean `‖est·X − gt·X‖` over the points of every valid depth pixel.
pub fn epe_3d(depth0: &DepthMap, gt: &Se3Pose, est: &Se3Pose, camera: &PinholeCamera) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in 0..depth0.height {
        for u in 0..depth0.width {
            if !depth0.is_valid(u, v) {
                continue;
            }
            let x = backproject(camera, &Vector2::new(u as f64, v as f64), 1.0 / depth0.get(u, v))?;
            sum += (est.transform_point(&x) - gt.transform_point(&x)).norm();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoValidDepth);
    }
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Quaternion, Rotation3, UnitQuaternion, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> PinholeCamera {
        PinholeCamera::new(420.0, 420.0, 375.5, 239.5, 752, 480).unwrap()
    }

    fn random_pose(rng: &mut impl Rng, rot: f64, trans: f64) -> Se3Pose {
        let w = Vector3::from_fn(|_, _| rng.gen_range(-rot..rot));
        let t = Vector3::from_fn(|_, _| rng.gen_range(-trans..trans));
        Se3Pose::new(Se3Pose::from_rotation_vector(w).rotation, t)
    }

    #[test]
    fn identical_poses_have_zero_error() {
        let f = [SparseFeature::new(100.0, 100.0, 0.1), SparseFeature::new(400.0, 300.0, 0.05)];
        let p = Se3Pose::from_translation(Vector3::new(0.3, 0.0, 0.1));
        assert_eq!(pixel_error(&f, &p, &p, &cam()).unwrap().mean, 0.0);
        assert_eq!(pose_error(&p, &p).unwrap(), (0.0, 0.0));
        let d = DepthMap::new(2, 1, vec![3.0, 0.0]).unwrap();
        assert_eq!(epe_3d(&d, &p, &p, &cam()).unwrap(), 0.0);
    }

    #[test]
    fn parallel_translation_shifts_by_f_delta_over_z() {
        let f: Vec<_> = (0..10)
            .map(|k| SparseFeature::new(100.0 + 50.0 * k as f64, 240.0, 1.0 / 40.0))
            .collect();
        let gt = Se3Pose::identity();
        let est = Se3Pose::from_translation(Vector3::new(0.2, 0.0, 0.0));
        let e = pixel_error(&f, &gt, &est, &cam()).unwrap();
        assert_relative_eq!(e.mean, 420.0 * 0.2 / 40.0, epsilon = 1e-9);
        assert_eq!(e.excluded, 0);
    }

    #[test]
    fn out_of_bounds_features_are_excluded() {
        let f = [SparseFeature::new(740.0, 240.0, 0.1), SparseFeature::new(300.0, 240.0, 0.1)];
        let est = Se3Pose::from_translation(Vector3::new(0.5, 0.0, 0.0));
        let e = pixel_error(&f, &Se3Pose::identity(), &est, &cam()).unwrap();
        assert_eq!((e.used, e.excluded), (1, 1));
        let far = Se3Pose::from_translation(Vector3::new(50.0, 0.0, 0.0));
        assert!(matches!(
            pixel_error(&f, &Se3Pose::identity(), &far, &cam()),
            Err(Error::AllOutOfBounds)
        ));
    }

    #[test]
    fn rotation_offset_is_the_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let gt = random_pose(&mut rng, 1.0, 5.0);
            let axis = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize();
            let est = Se3Pose::from_rotation_vector(axis * 0.02) * gt;
            let (_, e_rot) = pose_error(&gt, &est).unwrap();
            assert_relative_eq!(e_rot, 0.02, epsilon = 1e-9);
        }
    }

    #[test]
    fn unit_translation_epe() {
        let d = DepthMap::new(3, 2, vec![2.0, 5.0, 0.0, 8.0, 1.0, 3.0]).unwrap();
        let gt = Se3Pose::from_rotation_vector(Vector3::new(0.0, 0.0, 0.0));
        let est = Se3Pose::from_translation(Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(epe_3d(&d, &gt, &est, &cam()).unwrap(), 1.0);
        assert!(matches!(
            epe_3d(&DepthMap::new(1, 1, vec![0.0]).unwrap(), &gt, &est, &cam()),
            Err(Error::NoValidDepth)
        ));
    }

    #[test]
    fn rotation_error_matches_quaternion_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let (gt, est) = (random_pose(&mut rng, 1.5, 3.0), random_pose(&mut rng, 1.5, 3.0));
            let q = |p: &Se3Pose| UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(p.rotation));
            let d: Quaternion<f64> = (q(&est) * q(&gt).inverse()).into_inner();
            let oracle = 2.0 * d.imag().norm().atan2(d.w.abs());
            match pose_error(&gt, &est) {
                Ok((_, e_rot)) => assert_relative_eq!(e_rot, oracle, epsilon = 1e-9),
                Err(Error::AngleNearPi { .. }) => assert!(oracle > std::f64::consts::PI - 2e-3),
                Err(e) => panic!("{e}"),
            }
        }
    }
}
