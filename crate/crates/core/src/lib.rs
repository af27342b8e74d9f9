//! Sparse-depth 6DoF inverse compositional Lucas-Kanade image alignment.
//!
//! Given a reference image with sparse features of known depth and a target
//! image, [`iclk::align`] estimates the relative pose `T^{C1}_{C0}` that
//! photometrically aligns them. [`refine`] then aligns every feature patch to
//! subpixel accuracy and re-optimises the pose on the resulting
//! correspondences. [`synth`] renders ground-truth image pairs from textured
//! heightmaps and [`eval`] measures every stage against that ground truth.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod geometry;
pub mod iclk;
pub mod image;
pub mod io;
pub mod refine;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{PinholeCamera, Se3Pose, Twist};
pub use iclk::{AlignOptions, AlignmentResult, RobustWeightConfig, SparseFeature, WeightKind};
pub use image::{DepthMap, GrayImage, ImagePyramid, RgbImage};
