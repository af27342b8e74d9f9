use nalgebra::Vector2;

use crate::geometry::{backproject, project, PinholeCamera, Se3Pose};
use crate::iclk::SparseFeature;
use crate::image::{DepthMap, GrayImage, RgbImage};

/// `I₀` with `I₁` warped into its frame through `pose` and the dense depth,
/// blended at 50%. Pixels without a valid warp keep `I₀`.
pub fn blend_overlay(i0: &GrayImage, i1: &GrayImage, depth0: &DepthMap, pose: &Se3Pose, camera: &PinholeCamera) -> GrayImage {
    GrayImage::from_fn(i0.width(), i0.height(), |u, v| {
        let base = i0.get(u, v);
        if !depth0.is_valid(u, v) {
            return base;
        }
        backproject(camera, &Vector2::new(u as f64, v as f64), 1.0 / depth0.get(u, v))
            .and_then(|x| project(camera, &pose.transform_point(&x)))
            .ok()
            .and_then(|p| i1.try_sample(p.x, p.y))
            .map_or(base, |w| 0.5 * base + 0.5 * w)
    })
}

const RED: [f32; 3] = [1.0, 0.0, 0.0];
const GREEN: [f32; 3] = [0.0, 1.0, 0.0];

fn plot(img: &mut RgbImage, x: i64, y: i64, c: [f32; 3]) {
    if x >= 0 && y >= 0 && (x as usize) < img.width && (y as usize) < img.height {
        let w = img.width;
        img.data[y as usize * w + x as usize] = c;
    }
}

fn line(img: &mut RgbImage, a: Vector2<f64>, b: Vector2<f64>, c: [f32; 3]) {
    let steps = (b - a).abs().max().ceil().max(1.0) as usize;
    for k in 0..=steps {
        let p = a + (b - a) * (k as f64 / steps as f64);
        plot(img, p.x.round() as i64, p.y.round() as i64, c);
    }
}

/// `I₁` with every feature projected through `est` (green cross) and a red
/// line to its ground-truth location.
pub fn error_lines(i1: &GrayImage, features: &[SparseFeature], gt: &Se3Pose, est: &Se3Pose, camera: &PinholeCamera) -> RgbImage {
    let mut img = RgbImage {
        width: i1.width(),
        height: i1.height(),
        data: i1.data().iter().map(|&g| [g as f32; 3]).collect(),
    };
    for f in features {
        let Ok(x) = backproject(camera, &f.pixel(), f.inverse_depth) else {
            continue;
        };
        let (Ok(a), Ok(b)) = (
            project(camera, &est.transform_point(&x)),
            project(camera, &gt.transform_point(&x)),
        ) else {
            continue;
        };
        line(&mut img, a, b, RED);
        let (cx, cy) = (a.x.round() as i64, a.y.round() as i64);
        for d in -2..=2 {
            plot(&mut img, cx + d, cy, GREEN);
            plot(&mut img, cx, cy + d, GREEN);
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_blend_reproduces_the_image() {
        let cam = PinholeCamera::new(50.0, 50.0, 15.5, 11.5, 32, 24).unwrap();
        let i0 = GrayImage::from_fn(32, 24, |u, v| (u + v) as f64 / 60.0);
        let depth = DepthMap::new(32, 24, vec![10.0; 32 * 24]).unwrap();
        let out = blend_overlay(&i0, &i0, &depth, &Se3Pose::identity(), &cam);
        for (a, b) in out.data().iter().zip(i0.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn error_line_joins_both_projections() {
        let cam = PinholeCamera::new(50.0, 50.0, 15.5, 11.5, 32, 24).unwrap();
        let i1 = GrayImage::filled(32, 24, 0.5);
        let f = [SparseFeature::new(10.0, 12.0, 0.1)];
        let est = Se3Pose::from_translation(nalgebra::Vector3::new(1.0, 0.0, 0.0));
        let img = error_lines(&i1, &f, &Se3Pose::identity(), &est, &cam);
        // est shifts the feature by 5 px to the right
        assert_eq!(img.get(15, 12), GREEN);
        assert_eq!(img.get(12, 12), RED);
        assert_eq!(img.get(0, 0), [0.5; 3]);
    }
}
