use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::io::{read_heightmap, read_rgb_png, write_heightmap, write_rgb_png, HeightGrid};

pub const HEIGHTMAP_FILE: &str = "scene.hmap";
pub const TEXTURE_FILE: &str = "texture.png";

/// Textured elevation lattice in a z-up world frame. Lattice node `(i, j)`
/// sits at `(i·spacing, j·spacing)`; the texture spans the same extent with
/// its first and last pixel centres on the lattice corners.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightmapScene {
    grid: HeightGrid,
    texture: RgbImage,
    min_height: f64,
    max_height: f64,
}

impl HeightmapScene {
    pub fn new(grid: HeightGrid, texture: RgbImage) -> Result<Self> {
        if grid.width < 2 || grid.height < 2 || grid.heights.len() != grid.width * grid.height {
            return Err(Error::InvalidInput(format!(
                "height grid {}x{} with {} samples",
                grid.width,
                grid.height,
                grid.heights.len()
            )));
        }
        if !(grid.spacing > 0.0) || !grid.spacing.is_finite() {
            return Err(Error::InvalidInput(format!("lattice spacing {}", grid.spacing)));
        }
        if grid.heights.iter().any(|h| !h.is_finite()) {
            return Err(Error::InvalidInput("non-finite elevation".into()));
        }
        if texture.width < 2 || texture.height < 2 || texture.data.len() != texture.width * texture.height {
            return Err(Error::InvalidInput("texture must be at least 2x2".into()));
        }
        let min_height = grid.heights.iter().copied().fold(f64::INFINITY, f64::min);
        let max_height = grid.heights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(HeightmapScene {
            grid,
            texture,
            min_height,
            max_height,
        })
    }

    pub fn grid(&self) -> &HeightGrid {
        &self.grid
    }

    pub fn texture(&self) -> &RgbImage {
        &self.texture
    }

    pub fn spacing(&self) -> f64 {
        self.grid.spacing
    }

    /// `(x_max, y_max)`; the extent starts at the origin.
    pub fn extent(&self) -> (f64, f64) {
        (
            (self.grid.width - 1) as f64 * self.grid.spacing,
            (self.grid.height - 1) as f64 * self.grid.spacing,
        )
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (xm, ym) = self.extent();
        (0.0..=xm).contains(&x) && (0.0..=ym).contains(&y)
    }

    pub fn min_height(&self) -> f64 {
        self.min_height
    }

    pub fn max_height(&self) -> f64 {
        self.max_height
    }

    pub fn mean_height(&self) -> f64 {
        self.grid.heights.iter().sum::<f64>() / self.grid.heights.len() as f64
    }

    /// Bilinearly interpolated elevation, `None` outside the extent.
    pub fn height_at(&self, x: f64, y: f64) -> Option<f64> {
        if !self.contains(x, y) {
            return None;
        }
        let (nx, ny) = (self.grid.width, self.grid.height);
        let (gx, gy) = (x / self.grid.spacing, y / self.grid.spacing);
        let i0 = (gx.floor() as usize).min(nx - 2);
        let j0 = (gy.floor() as usize).min(ny - 2);
        let (ax, ay) = (gx - i0 as f64, gy - j0 as f64);
        let h = |i: usize, j: usize| self.grid.heights[j * nx + i];
        let top = h(i0, j0) * (1.0 - ax) + h(i0 + 1, j0) * ax;
        let bottom = h(i0, j0 + 1) * (1.0 - ax) + h(i0 + 1, j0 + 1) * ax;
        Some(top * (1.0 - ay) + bottom * ay)
    }

    /// Bilinear texture colour at a world position (clamped to the extent).
    pub fn color_at(&self, x: f64, y: f64) -> [f32; 3] {
        let (xm, ym) = self.extent();
        let tu = x / xm * (self.texture.width - 1) as f64;
        let tv = y / ym * (self.texture.height - 1) as f64;
        self.texture.sample_clamped(tu, tv)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_heightmap(dir.join(HEIGHTMAP_FILE), &self.grid)?;
        write_rgb_png(dir.join(TEXTURE_FILE), &self.texture)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        HeightmapScene::new(
            read_heightmap(dir.join(HEIGHTMAP_FILE))?,
            read_rgb_png(dir.join(TEXTURE_FILE))?,
        )
    }
}

/// Parameters of the procedural fractal scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Lattice nodes per side.
    pub grid_size: usize,
    /// Metres between lattice nodes.
    pub spacing: f64,
    /// Texture pixels per side.
    pub texture_size: usize,
    /// Peak-to-peak elevation range in metres.
    pub relief: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            grid_size: 129,
            spacing: 2.0,
            texture_size: 1024,
            relief: 24.0,
            seed: 1,
        }
    }
}

/// Sum of value-noise octaves on `[0, 1]²`, each a random lattice twice as
/// fine as the last, interpolated with a C¹ smoothstep.
struct FractalNoise {
    octaves: Vec<(usize, f64, Vec<f64>)>,
    total: f64,
}

impl FractalNoise {
    fn new(rng: &mut impl Rng, base_cells: usize, octaves: usize, persistence: f64) -> Self {
        let mut out = Vec::with_capacity(octaves);
        let mut amp = 1.0;
        let mut total = 0.0;
        for k in 0..octaves {
            let cells = base_cells << k;
            let values = (0..(cells + 1) * (cells + 1)).map(|_| rng.gen::<f64>()).collect();
            out.push((cells, amp, values));
            total += amp;
            amp *= persistence;
        }
        FractalNoise { octaves: out, total }
    }

    /// Value in `[0, 1]`.
    fn eval(&self, x: f64, y: f64) -> f64 {
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let mut sum = 0.0;
        for (cells, amp, values) in &self.octaves {
            let n = *cells;
            let (gx, gy) = (x * n as f64, y * n as f64);
            let i = (gx.floor() as usize).min(n - 1);
            let j = (gy.floor() as usize).min(n - 1);
            let (ax, ay) = (smooth(gx - i as f64), smooth(gy - j as f64));
            let v = |i: usize, j: usize| values[j * (n + 1) + i];
            let top = v(i, j) * (1.0 - ax) + v(i + 1, j) * ax;
            let bottom = v(i, j + 1) * (1.0 - ax) + v(i + 1, j + 1) * ax;
            sum += amp * (top * (1.0 - ay) + bottom * ay);
        }
        sum / self.total
    }
}

/// Seeded fractal terrain with a multi-scale texture, deterministic in
/// `config`.
pub fn generate_scene(config: &SceneConfig) -> Result<HeightmapScene> {
    if config.grid_size < 2 || config.texture_size < 2 || !(config.spacing > 0.0) || !(config.relief >= 0.0) {
        return Err(Error::InvalidInput(format!("invalid scene config {config:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let terrain = FractalNoise::new(&mut rng, 4, 6, 0.45);
    // luminance detail down to roughly one texel, plus a slow colour blend
    let octaves = (config.texture_size / 8).max(1).ilog2() as usize + 1;
    let detail = FractalNoise::new(&mut rng, 8, octaves, 0.7);
    let tint = FractalNoise::new(&mut rng, 3, 3, 0.5);

    let n = config.grid_size;
    let last = (n - 1) as f64;
    let heights = (0..n * n)
        .map(|k| {
            let (i, j) = (k % n, k / n);
            config.relief * (terrain.eval(i as f64 / last, j as f64 / last) - 0.5)
        })
        .collect();
    let grid = HeightGrid {
        width: n,
        height: n,
        spacing: config.spacing,
        heights,
    };

    let m = config.texture_size;
    let tlast = (m - 1) as f64;
    let (field, soil) = ([0.35f32, 0.55, 0.25], [0.75f32, 0.6, 0.4]);
    let data = (0..m * m)
        .map(|k| {
            let (x, y) = ((k % m) as f64 / tlast, (k / m) as f64 / tlast);
            let lum = (0.5 + 2.2 * (detail.eval(x, y) - 0.5)).clamp(0.02, 1.0) as f32;
            let t = tint.eval(x, y).clamp(0.0, 1.0) as f32;
            std::array::from_fn(|c| (lum * (field[c] * (1.0 - t) + soil[c] * t) * 1.6).clamp(0.0, 1.0))
        })
        .collect();
    let texture = RgbImage {
        width: m,
        height: m,
        data,
    };
    HeightmapScene::new(grid, texture)
}
