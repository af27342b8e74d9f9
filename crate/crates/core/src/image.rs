//! Intensity images, the four-level block-average pyramid, bilinear
//! sampling and central-difference gradients.

use crate::error::{Error, Result};

/// Number of pyramid levels used by the aligner.
pub const PYRAMID_LEVELS: usize = 4;

/// Smallest input accepted by [`build_pyramid`].
pub const MIN_PYRAMID_INPUT: usize = 16;

/// Row-major single-channel image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "{} intensities for a {width}x{height} image",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite intensity".into()));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        GrayImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Bilinear sample, `None` outside `[0, w−1] × [0, h−1]`.
    #[inline]
    pub fn try_sample(&self, u: f64, v: f64) -> Option<f64> {
        let (w, h) = (self.width, self.height);
        if !(u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64) {
            return None;
        }
        let x0 = (u.floor() as usize).min(w.saturating_sub(2));
        let y0 = (v.floor() as usize).min(h.saturating_sub(2));
        let ax = u - x0 as f64;
        let ay = v - y0 as f64;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let top = self.get(x0, y0) * (1.0 - ax) + self.get(x1, y0) * ax;
        let bottom = self.get(x0, y1) * (1.0 - ax) + self.get(x1, y1) * ax;
        Some(top * (1.0 - ay) + bottom * ay)
    }
}

/// Interleaved RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f32; 3]>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        RgbImage {
            width,
            height,
            data: vec![rgb; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.data[y * self.width + x]
    }

    /// Bilinear sample with coordinates clamped to the image.
    pub fn sample_clamped(&self, u: f64, v: f64) -> [f32; 3] {
        let u = u.clamp(0.0, (self.width - 1) as f64);
        let v = v.clamp(0.0, (self.height - 1) as f64);
        let x0 = (u.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (v.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = (u - x0 as f64) as f32;
        let ay = (v - y0 as f64) as f32;
        let (p00, p10, p01, p11) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
        let mut out = [0.0f32; 3];
        for c in 0..3 {
            let top = p00[c] * (1.0 - ax) + p10[c] * ax;
            let bottom = p01[c] * (1.0 - ax) + p11[c] * ax;
            out[c] = top * (1.0 - ay) + bottom * ay;
        }
        out
    }
}

/// Dense camera-frame z-depth in metres; `0` marks a miss.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "{} depths for a {width}x{height} map",
                data.len()
            )));
        }
        Ok(DepthMap { width, height, data })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        let d = self.get(x, y);
        d > 0.0 && d.is_finite()
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| **d > 0.0 && d.is_finite()).count()
    }

    /// Mean over valid pixels.
    pub fn mean_valid(&self) -> Option<f64> {
        let (sum, n) = self
            .data
            .iter()
            .filter(|d| **d > 0.0 && d.is_finite())
            .fold((0.0, 0usize), |(s, n), d| (s + d, n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

/// Luminance `0.299R + 0.587G + 0.114B`.
pub fn to_grayscale(rgb: &RgbImage) -> GrayImage {
    let data = rgb
        .data
        .iter()
        .map(|p| {
            let l = 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]);
            l.clamp(0.0, 1.0)
        })
        .collect();
    GrayImage {
        width: rgb.width,
        height: rgb.height,
        data,
    }
}

/// Checked bilinear interpolation.
pub fn sample_bilinear(image: &GrayImage, u: f64, v: f64) -> Result<f64> {
    image.try_sample(u, v).ok_or(Error::OutOfBounds { u, v })
}

/// Central differences in the interior, one-sided differences on the border.
pub fn gradient(image: &GrayImage) -> Result<(GrayImage, GrayImage)> {
    if image.width < 3 || image.height < 3 {
        return Err(Error::ImageTooSmall {
            width: image.width,
            height: image.height,
            min: 3,
        });
    }
    Ok(gradient_any(image))
}

// Also used on tiny coarse levels, where a 2-pixel axis only has the
// one-sided difference and a 1-pixel axis has none.
fn gradient_any(image: &GrayImage) -> (GrayImage, GrayImage) {
    let (w, h) = (image.width, image.height);
    let diff = |n: usize, i: usize, at: &dyn Fn(usize) -> f64| -> f64 {
        if n < 2 {
            0.0
        } else if i == 0 {
            at(1) - at(0)
        } else if i == n - 1 {
            at(n - 1) - at(n - 2)
        } else {
            0.5 * (at(i + 1) - at(i - 1))
        }
    };
    let dx = GrayImage::from_fn(w, h, |x, y| diff(w, x, &|i| image.get(i, y)));
    let dy = GrayImage::from_fn(w, h, |x, y| diff(h, y, &|j| image.get(x, j)));
    (dx, dy)
}

fn downsample(image: &GrayImage) -> GrayImage {
    let (w, h) = (image.width / 2, image.height / 2);
    GrayImage::from_fn(w, h, |x, y| {
        let (x0, y0) = (2 * x, 2 * y);
        0.25 * (image.get(x0, y0) + image.get(x0 + 1, y0) + image.get(x0, y0 + 1) + image.get(x0 + 1, y0 + 1))
    })
}

/// One pyramid level with its gradients.
#[derive(Debug, Clone)]
pub struct PyramidLevel {
    pub image: GrayImage,
    pub grad_x: GrayImage,
    pub grad_y: GrayImage,
}

/// Four-level 2×2 block-average pyramid; level 0 is the input.
#[derive(Debug, Clone)]
pub struct ImagePyramid {
    levels: Vec<PyramidLevel>,
}

impl ImagePyramid {
    pub fn levels(&self) -> &[PyramidLevel] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &PyramidLevel {
        &self.levels[k]
    }

    pub fn image(&self, k: usize) -> &GrayImage {
        &self.levels[k].image
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn dims(&self) -> Vec<(usize, usize)> {
        self.levels.iter().map(|l| (l.image.width, l.image.height)).collect()
    }
}

pub fn build_pyramid(image: &GrayImage) -> Result<ImagePyramid> {
    if image.width < MIN_PYRAMID_INPUT || image.height < MIN_PYRAMID_INPUT {
        return Err(Error::ImageTooSmall {
            width: image.width,
            height: image.height,
            min: MIN_PYRAMID_INPUT,
        });
    }
    let mut images = vec![image.clone()];
    for _ in 1..PYRAMID_LEVELS {
        let next = downsample(images.last().unwrap());
        images.push(next);
    }
    let levels = images
        .into_iter()
        .map(|image| {
            let (grad_x, grad_y) = gradient_any(&image);
            PyramidLevel { image, grad_x, grad_y }
        })
        .collect();
    Ok(ImagePyramid { levels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| rng.gen::<f64>())
    }

    #[test]
    fn grayscale_coefficients() {
        let white = to_grayscale(&RgbImage::filled(4, 3, [1.0; 3]));
        assert!(white.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let black = to_grayscale(&RgbImage::filled(4, 3, [0.0; 3]));
        assert!(black.data().iter().all(|&v| v == 0.0));
        let green = to_grayscale(&RgbImage::filled(1, 1, [0.0, 1.0, 0.0]));
        assert!((green.get(0, 0) - 0.587).abs() < 1e-12);
    }

    #[test]
    fn pyramid_resolutions() {
        let p = build_pyramid(&GrayImage::filled(752, 480, 0.3)).unwrap();
        assert_eq!(p.dims(), vec![(752, 480), (376, 240), (188, 120), (94, 60)]);
        for l in p.levels() {
            assert!(l.image.data().iter().all(|&v| v == 0.3));
            assert!(l.grad_x.data().iter().all(|&v| v == 0.0));
        }
        let odd = build_pyramid(&GrayImage::filled(101, 37, 0.5)).unwrap();
        assert_eq!(odd.dims(), vec![(101, 37), (50, 18), (25, 9), (12, 4)]);
        assert!(matches!(
            build_pyramid(&GrayImage::filled(15, 100, 0.0)),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn checkerboard_averages_out() {
        let img = GrayImage::from_fn(32, 32, |x, y| ((x + y) % 2) as f64);
        let p = build_pyramid(&img).unwrap();
        assert!(p.image(1).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn pyramid_preserves_mean() {
        let img = random_image(64, 48, 3);
        let p = build_pyramid(&img).unwrap();
        for k in 1..4 {
            assert!((p.image(k).mean() - p.image(k - 1).mean()).abs() < 1e-6);
        }
    }

    #[test]
    fn bilinear_examples() {
        let img = random_image(10, 8, 1);
        assert_eq!(sample_bilinear(&img, 3.0, 4.0).unwrap(), img.get(3, 4));
        assert_eq!(sample_bilinear(&img, 9.0, 7.0).unwrap(), img.get(9, 7));
        let mid = sample_bilinear(&img, 2.5, 1.0).unwrap();
        assert!((mid - 0.5 * (img.get(2, 1) + img.get(3, 1))).abs() < 1e-15);
        assert!(matches!(sample_bilinear(&img, 9.01, 0.0), Err(Error::OutOfBounds { .. })));
        assert!(matches!(sample_bilinear(&img, -0.01, 0.0), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn bilinear_matches_scalar_reference() {
        let img = random_image(20, 15, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let u: f64 = rng.gen_range(0.0..19.0);
            let v: f64 = rng.gen_range(0.0..14.0);
            let (x0, y0) = (u.floor() as usize, v.floor() as usize);
            let (a, b) = (u - x0 as f64, v - y0 as f64);
            let expected = (1.0 - a) * (1.0 - b) * img.get(x0, y0)
                + a * (1.0 - b) * img.get(x0 + 1, y0)
                + (1.0 - a) * b * img.get(x0, y0 + 1)
                + a * b * img.get(x0 + 1, y0 + 1);
            assert!((sample_bilinear(&img, u, v).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_of_ramp_and_constant() {
        let w = 40;
        let ramp = GrayImage::from_fn(w, 10, |x, _| x as f64 / w as f64);
        let (dx, dy) = gradient(&ramp).unwrap();
        for y in 0..10 {
            for x in 0..w {
                assert!((dx.get(x, y) - 1.0 / w as f64).abs() < 1e-15);
                assert_eq!(dy.get(x, y), 0.0);
            }
        }
        let (cx, cy) = gradient(&GrayImage::filled(5, 5, 0.7)).unwrap();
        assert!(cx.data().iter().chain(cy.data()).all(|&v| v == 0.0));
        assert!(matches!(
            gradient(&GrayImage::filled(2, 5, 0.0)),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn gradient_matches_loop_oracle() {
        let img = random_image(17, 11, 5);
        let (dx, dy) = gradient(&img).unwrap();
        let (w, h) = (17, 11);
        for y in 0..h {
            for x in 0..w {
                let ex = if x == 0 {
                    img.get(1, y) - img.get(0, y)
                } else if x == w - 1 {
                    img.get(w - 1, y) - img.get(w - 2, y)
                } else {
                    (img.get(x + 1, y) - img.get(x - 1, y)) / 2.0
                };
                let ey = if y == 0 {
                    img.get(x, 1) - img.get(x, 0)
                } else if y == h - 1 {
                    img.get(x, h - 1) - img.get(x, h - 2)
                } else {
                    (img.get(x, y + 1) - img.get(x, y - 1)) / 2.0
                };
                assert_eq!(dx.get(x, y), ex);
                assert_eq!(dy.get(x, y), ey);
            }
        }
    }

    proptest! {
        #[test]
        fn bilinear_is_lipschitz(u in 0.0..18.0f64, v in 0.0..13.0f64, d in 0.0..1.0f64) {
            let img = random_image(20, 15, 4);
            // Along a row the bilinear slope is bounded by the largest
            // neighbour difference, i.e. twice the largest central gradient
            // is a loose bound; use the forward-difference maximum directly.
            let mut lip = 0.0f64;
            for y in 0..15 {
                for x in 0..19 {
                    lip = lip.max((img.get(x + 1, y) - img.get(x, y)).abs());
                }
            }
            let a = sample_bilinear(&img, u, v).unwrap();
            let b = sample_bilinear(&img, u + d, v).unwrap();
            prop_assert!((a - b).abs() <= lip * d + 1e-12);
        }
    }
}
