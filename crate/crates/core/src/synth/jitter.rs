use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;

/// Photometric change `clamp((v − 0.5)·contrast + 0.5 + brightness)^gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterParams {
    pub brightness_delta: f64,
    pub contrast_factor: f64,
    pub gamma: f64,
    /// Seed the parameters were drawn from.
    pub seed: u64,
}

impl JitterParams {
    pub fn identity() -> Self {
        JitterParams {
            brightness_delta: 0.0,
            contrast_factor: 1.0,
            gamma: 1.0,
            seed: 0,
        }
    }

    pub fn sample(ranges: &JitterRanges, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |(lo, hi): (f64, f64)| if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        JitterParams {
            brightness_delta: draw((-ranges.brightness, ranges.brightness)),
            contrast_factor: draw(ranges.contrast),
            gamma: draw(ranges.gamma),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.contrast_factor > 0.0) || !(self.gamma > 0.0) || !self.brightness_delta.is_finite() {
            return Err(Error::InvalidInput(format!("invalid jitter {self:?}")));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        ((v - 0.5) * self.contrast_factor + 0.5 + self.brightness_delta)
            .clamp(0.0, 1.0)
            .powf(self.gamma)
    }
}

/// Sampling ranges for [`JitterParams::sample`]; brightness is symmetric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterRanges {
    pub brightness: f64,
    pub contrast: (f64, f64),
    pub gamma: (f64, f64),
}

impl Default for JitterRanges {
    fn default() -> Self {
        JitterRanges {
            brightness: 0.2,
            contrast: (0.7, 1.3),
            gamma: (1.0, 1.0),
        }
    }
}

pub fn jitter(rgb: &RgbImage, params: &JitterParams) -> Result<RgbImage> {
    params.validate()?;
    let data = rgb
        .data
        .iter()
        .map(|p| p.map(|c| params.apply(f64::from(c)) as f32))
        .collect();
    Ok(RgbImage {
        width: rgb.width,
        height: rgb.height,
        data,
    })
}
