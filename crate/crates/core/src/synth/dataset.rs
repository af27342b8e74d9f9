use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::jitter::{jitter, JitterParams, JitterRanges};
use super::render::render;
use super::sampling::{random_rotation, sample_features, sample_pose_pair, unit_vector, PoseConstraints};
use super::scene::HeightmapScene;
use crate::error::{Error, Result};
use crate::geometry::{so3_exp, PinholeCamera, Se3Pose};
use crate::iclk::SparseFeature;
use crate::image::{to_grayscale, DepthMap, GrayImage};
use crate::io::{read_depth, read_rgb_png, write_depth, write_rgb_png};
use crate::refine::csv_err;

pub const MANIFEST_FILE: &str = "manifest.json";
/// Per-pair copy of the manifest entry with paths relative to the pair
/// directory.
pub const PAIR_FILE: &str = "pair.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_pairs: usize,
    /// Jittered variants stored per view.
    pub jitter_count: usize,
    pub feature_count: usize,
    pub poses: PoseConstraints,
    pub jitter: JitterRanges,
    /// Bound on the rotation angle between the stored initial and true pose.
    pub init_rotation_deg: f64,
    /// Bound on the initial translation error as a fraction of the mean
    /// view-0 depth.
    pub init_translation_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_pairs: 200,
            jitter_count: 10,
            feature_count: 50,
            poses: PoseConstraints::default(),
            jitter: JitterRanges::default(),
            init_rotation_deg: 5.0,
            init_translation_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterEntry {
    pub path: String,
    pub params: JitterParams,
}

/// One rendered pair. Paths are relative to the manifest directory; poses
/// are 4×4 row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub id: String,
    pub rgb0: String,
    pub rgb1: String,
    pub depth0: String,
    pub depth1: String,
    pub features: String,
    /// `T^W_{C0}`.
    pub pose0: Se3Pose,
    /// `T^W_{C1}`.
    pub pose1: Se3Pose,
    /// `T^{C1}_{C0} = pose1⁻¹·pose0`.
    pub relative_pose: Se3Pose,
    /// Perturbed relative pose alignment starts from.
    pub initial_pose: Se3Pose,
    pub jitter0: Vec<JitterEntry>,
    pub jitter1: Vec<JitterEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub camera: PinholeCamera,
    pub config: DatasetConfig,
    pub pairs: Vec<PairEntry>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: Manifest = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("unsupported manifest version {}", m.version)));
        }
        m.camera.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFile {
    pub camera: PinholeCamera,
    pub pair: PairEntry,
}

impl PairFile {
    pub fn load(pair_dir: impl AsRef<Path>) -> Result<Self> {
        let f: PairFile = serde_json::from_reader(BufReader::new(File::open(pair_dir.as_ref().join(PAIR_FILE))?))?;
        f.camera.validate()?;
        Ok(f)
    }

    pub fn save(&self, pair_dir: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(pair_dir.as_ref().join(PAIR_FILE))?);
        serde_json::to_writer_pretty(&mut w, self)?;
        Ok(())
    }
}

/// Grayscale images and ground truth of one pair, ready for alignment.
#[derive(Debug, Clone)]
pub struct PairData {
    pub image0: GrayImage,
    pub image1: GrayImage,
    pub depth0: DepthMap,
    pub depth1: DepthMap,
    pub features: Vec<SparseFeature>,
}

/// Loads a pair relative to `base`; `variant = Some(k)` substitutes the
/// `k`-th jittered image of each view.
pub fn load_pair(base: &Path, pair: &PairEntry, variant: Option<usize>) -> Result<PairData> {
    let pick = |orig: &str, jit: &[JitterEntry]| -> Result<PathBuf> {
        match variant {
            None => Ok(base.join(orig)),
            Some(k) => jit
                .get(k)
                .map(|j| base.join(&j.path))
                .ok_or_else(|| Error::InvalidInput(format!("{} has no jitter variant {k}", pair.id))),
        }
    };
    Ok(PairData {
        image0: to_grayscale(&read_rgb_png(pick(&pair.rgb0, &pair.jitter0)?)?),
        image1: to_grayscale(&read_rgb_png(pick(&pair.rgb1, &pair.jitter1)?)?),
        depth0: read_depth(base.join(&pair.depth0))?,
        depth1: read_depth(base.join(&pair.depth1))?,
        features: read_features_csv(base.join(&pair.features))?,
    })
}

pub fn write_features_csv(path: impl AsRef<Path>, features: &[SparseFeature]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for f in features {
        w.serialize(f).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features_csv(path: impl AsRef<Path>) -> Result<Vec<SparseFeature>> {
    csv::Reader::from_path(path)
        .map_err(csv_err)?
        .deserialize()
        .map(|r| r.map_err(csv_err))
        .collect()
}

/// `truth` with its rotation turned by at most `max_angle` and its
/// translation moved by at most `max_offset`, both about random axes. The
/// rotation and translation errors equal the drawn magnitudes exactly.
pub fn perturb_pose(rng: &mut impl Rng, truth: &Se3Pose, max_angle: f64, max_offset: f64) -> Se3Pose {
    let r = so3_exp(&random_rotation(rng, max_angle));
    let offset: Vector3<f64> = if max_offset > 0.0 {
        unit_vector(rng) * rng.gen_range(0.0..=max_offset)
    } else {
        Vector3::zeros()
    };
    Se3Pose::new(r * truth.rotation, truth.translation + offset)
}

fn generate_pair(
    scene: &HeightmapScene,
    camera: &PinholeCamera,
    config: &DatasetConfig,
    seed: u64,
    index: usize,
    out_dir: &Path,
) -> Result<PairEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let id = format!("pair_{index:04}");
    std::fs::create_dir_all(out_dir.join(&id))?;

    let (pose0, pose1) = sample_pose_pair(scene, camera, &mut rng, &config.poses)?;
    let view0 = render(scene, &pose0, camera)?;
    let view1 = render(scene, &pose1, camera)?;
    let features = sample_features(&view0.depth, config.feature_count, &mut rng)?;
    let relative_pose = pose1.inverse() * pose0;
    let mean_depth = view0.depth.mean_valid().ok_or(Error::NoValidDepth)?;
    let initial_pose = perturb_pose(
        &mut rng,
        &relative_pose,
        config.init_rotation_deg.to_radians(),
        config.init_translation_fraction * mean_depth,
    );

    let dir = out_dir.join(&id);
    write_rgb_png(dir.join("rgb0.png"), &view0.rgb)?;
    write_rgb_png(dir.join("rgb1.png"), &view1.rgb)?;
    write_depth(dir.join("depth0.dpth"), &view0.depth)?;
    write_depth(dir.join("depth1.dpth"), &view1.depth)?;
    write_features_csv(dir.join("features.csv"), &features)?;

    let mut variants = |view: usize, rgb: &crate::image::RgbImage| -> Result<Vec<JitterEntry>> {
        (0..config.jitter_count)
            .map(|k| {
                let params = JitterParams::sample(&config.jitter, rng.gen());
                let path = format!("rgb{view}_j{k:02}.png");
                write_rgb_png(dir.join(&path), &jitter(rgb, &params)?)?;
                Ok(JitterEntry { path, params })
            })
            .collect()
    };
    let jitter0 = variants(0, &view0.rgb)?;
    let jitter1 = variants(1, &view1.rgb)?;
    let local = PairEntry {
        id: id.clone(),
        rgb0: "rgb0.png".into(),
        rgb1: "rgb1.png".into(),
        depth0: "depth0.dpth".into(),
        depth1: "depth1.dpth".into(),
        features: "features.csv".into(),
        pose0,
        pose1,
        relative_pose,
        initial_pose,
        jitter0,
        jitter1,
    };
    PairFile {
        camera: *camera,
        pair: local.clone(),
    }
    .save(&dir)?;
    Ok(prefixed(local, &id))
}

/// Rewrites pair-local paths relative to the parent directory.
fn prefixed(mut entry: PairEntry, id: &str) -> PairEntry {
    let p = |s: &mut String| *s = format!("{id}/{s}");
    for s in [
        &mut entry.rgb0,
        &mut entry.rgb1,
        &mut entry.depth0,
        &mut entry.depth1,
        &mut entry.features,
    ] {
        p(s);
    }
    for j in entry.jitter0.iter_mut().chain(entry.jitter1.iter_mut()) {
        p(&mut j.path);
    }
    entry
}

/// Renders `config.n_pairs` pairs into `out_dir` and writes the manifest.
/// Pair `i` draws from its own stream of `seed`, so the output does not
/// depend on scheduling.
pub fn make_dataset(
    scene: &HeightmapScene,
    camera: &PinholeCamera,
    config: &DatasetConfig,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<Manifest> {
    camera.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let pairs = (0..config.n_pairs)
        .into_par_iter()
        .map(|i| generate_pair(scene, camera, config, seed, i, out_dir))
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        seed,
        camera: *camera,
        config: *config,
        pairs,
    };
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
