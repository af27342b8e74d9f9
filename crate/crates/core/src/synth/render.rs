use nalgebra::Vector3;
use rayon::prelude::*;

use super::scene::HeightmapScene;
use crate::error::{Error, Result};
use crate::geometry::{PinholeCamera, Se3Pose};
use crate::image::{DepthMap, RgbImage};

pub const BISECTION_STEPS: u32 = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub rgb: RgbImage,
    /// Camera-frame z-depth; `0` where the ray missed the terrain.
    pub depth: DepthMap,
    /// `T^W_C`.
    pub pose: Se3Pose,
    pub camera: PinholeCamera,
}

impl HeightmapScene {
    /// Ray-march step length in metres; never exceeds the lattice spacing.
    pub fn march_step(&self) -> f64 {
        0.5 * self.spacing()
    }

    /// Width of the final bisection bracket along the ray, in metres.
    pub fn bisection_tolerance(&self) -> f64 {
        self.march_step() / f64::from(1u32 << BISECTION_STEPS)
    }

    /// Height of a point above the surface; `None` outside the extent.
    fn clearance(&self, p: &Vector3<f64>) -> Option<f64> {
        self.height_at(p.x, p.y).map(|h| p.z - h)
    }

    /// Distance along the unit direction `dir` to the first surface crossing.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let (xm, ym) = self.extent();
        let t_start = if origin.z > self.max_height() {
            if dir.z >= 0.0 {
                return None;
            }
            (self.max_height() - origin.z) / dir.z
        } else {
            0.0
        };
        let t_end = if dir.z < 0.0 {
            (self.min_height() - origin.z) / dir.z
        } else {
            t_start + xm.hypot(ym)
        };
        // outside the extent there is no surface, so those samples count as above it
        let above = |t: f64| self.clearance(&(origin + dir * t)).is_none_or(|c| c > 0.0);
        if !above(t_start) {
            return Some(t_start);
        }
        let step = self.march_step();
        let mut prev = t_start;
        loop {
            let t = (prev + step).min(t_end);
            if !above(t) {
                let (mut lo, mut hi) = (prev, t);
                for _ in 0..BISECTION_STEPS {
                    let mid = 0.5 * (lo + hi);
                    if above(mid) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return Some(0.5 * (lo + hi));
            }
            if t >= t_end {
                return None;
            }
            prev = t;
        }
    }
}

/// Renders colour and z-depth for `pose = T^W_C` by casting one ray through
/// every pixel centre.
pub fn render(scene: &HeightmapScene, pose: &Se3Pose, camera: &PinholeCamera) -> Result<RenderedView> {
    camera.validate()?;
    if !pose.is_valid(1e-6) {
        return Err(Error::InvalidInput("render pose is not a rigid transform".into()));
    }
    let c = pose.translation;
    if scene.height_at(c.x, c.y).is_some_and(|h| c.z <= h) {
        return Err(Error::CameraBelowTerrain);
    }
    let (w, h) = (camera.width, camera.height);
    let rows: Vec<(Vec<[f32; 3]>, Vec<f64>)> = (0..h)
        .into_par_iter()
        .map(|v| {
            let mut rgb = vec![[0.0f32; 3]; w];
            let mut depth = vec![0.0; w];
            for u in 0..w {
                let ray = camera.ray(u as f64, v as f64);
                let norm = ray.norm();
                let dir = pose.rotation * (ray / norm);
                if let Some(t) = scene.intersect(&c, &dir) {
                    let p = c + dir * t;
                    rgb[u] = scene.color_at(p.x, p.y);
                    depth[u] = t / norm;
                }
            }
            (rgb, depth)
        })
        .collect();
    let (mut rgb, mut depth) = (Vec::with_capacity(w * h), Vec::with_capacity(w * h));
    for (r, d) in rows {
        rgb.extend(r);
        depth.extend(d);
    }
    Ok(RenderedView {
        rgb: RgbImage {
            width: w,
            height: h,
            data: rgb,
        },
        depth: DepthMap::new(w, h, depth)?,
        pose: *pose,
        camera: *camera,
    })
}

/// `T^W_C` of a camera at `position` looking straight down, image x along
/// world x.
pub fn nadir_pose(position: Vector3<f64>) -> Se3Pose {
    let r = nalgebra::Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
    Se3Pose::new(r, position)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::backproject;
    use crate::io::HeightGrid;
    use crate::synth::scene::{generate_scene, SceneConfig};
    use nalgebra::Vector2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat(h: f64) -> HeightmapScene {
        let grid = HeightGrid {
            width: 41,
            height: 41,
            spacing: 5.0,
            heights: vec![h; 41 * 41],
        };
        HeightmapScene::new(grid, RgbImage::filled(8, 8, [0.2, 0.4, 0.6])).unwrap()
    }

    fn cam() -> PinholeCamera {
        PinholeCamera::new(100.0, 100.0, 31.5, 23.5, 64, 48).unwrap()
    }

    #[test]
    fn flat_nadir_depth_is_constant() {
        let view = render(&flat(3.0), &nadir_pose(Vector3::new(100.0, 100.0, 53.0)), &cam()).unwrap();
        assert!(view.depth.data.iter().all(|d| (d - 50.0).abs() < 1e-4));
        assert!(view.rgb.data.iter().all(|p| (p[1] - 0.4).abs() < 1e-6));
    }

    #[test]
    fn flat_tilted_center_depth() {
        let theta = 0.3f64;
        let tilt = Se3Pose::from_rotation_vector(Vector3::new(theta, 0.0, 0.0));
        let pose = nadir_pose(Vector3::new(100.0, 100.0, 40.0)) * tilt;
        let cam = PinholeCamera::new(100.0, 100.0, 32.0, 24.0, 65, 49).unwrap();
        let view = render(&flat(0.0), &pose, &cam).unwrap();
        assert!((view.depth.get(32, 24) - 40.0 / theta.cos()).abs() < 1e-4);
    }

    #[test]
    fn camera_below_terrain() {
        assert!(matches!(
            render(&flat(10.0), &nadir_pose(Vector3::new(50.0, 50.0, 9.0)), &cam()),
            Err(Error::CameraBelowTerrain)
        ));
    }

    #[test]
    fn rays_leaving_the_scene_miss() {
        // horizon view: the upper half looks at the sky
        let pose = nadir_pose(Vector3::new(100.0, 100.0, 20.0))
            * Se3Pose::from_rotation_vector(Vector3::new(std::f64::consts::FRAC_PI_2, 0.0, 0.0));
        let view = render(&flat(0.0), &pose, &cam()).unwrap();
        assert_eq!(view.depth.get(10, 0), 0.0);
        assert!(view.depth.get(10, 47) > 0.0);
    }

    #[test]
    fn rendered_points_lie_on_the_surface() {
        let scene = generate_scene(&SceneConfig {
            grid_size: 65,
            texture_size: 128,
            ..SceneConfig::default()
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tol = scene.bisection_tolerance();
        for _ in 0..3 {
            let pos = Vector3::new(
                rng.gen_range(40.0..88.0),
                rng.gen_range(40.0..88.0),
                scene.max_height() + rng.gen_range(5.0..30.0),
            );
            let tilt = Se3Pose::from_rotation_vector(Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), 0.0));
            let pose = nadir_pose(pos) * tilt;
            let view = render(&scene, &pose, &cam()).unwrap();
            for v in 0..48 {
                for u in 0..64 {
                    let d = view.depth.get(u, v);
                    if d > 0.0 {
                        let x = pose.transform_point(&backproject(&cam(), &Vector2::new(u as f64, v as f64), 1.0 / d).unwrap());
                        assert!((x.z - scene.height_at(x.x, x.y).unwrap()).abs() <= 2.0 * tol);
                    }
                }
            }
        }
    }
}
