//! Ground-truth image pairs rendered from a textured heightmap.

mod dataset;
mod jitter;
mod render;
mod sampling;
mod scene;

pub use dataset::{
    load_pair, make_dataset, perturb_pose, read_features_csv, write_features_csv, DatasetConfig, JitterEntry, Manifest, PairData,
    PairEntry, PairFile, MANIFEST_FILE, MANIFEST_VERSION, PAIR_FILE,
};
pub use jitter::{jitter, JitterParams, JitterRanges};
pub use render::{nadir_pose, render, RenderedView, BISECTION_STEPS};
pub use sampling::{
    random_rotation, sample_features, sample_pose_pair, unit_vector, view_inside_extent, PoseConstraints, MAX_POSE_ATTEMPTS,
};
pub use scene::{generate_scene, HeightmapScene, SceneConfig, HEIGHTMAP_FILE, TEXTURE_FILE};
