//! Sparse 6DoF inverse compositional Lucas-Kanade over a four-level pyramid.
//!
//! Every feature owns an 8×8 patch at each level. The patches are rasterised
//! into a binary mask and a sparse inverse-depth grid, so the solver iterates
//! over masked pixels instead of over features. The template (reference)
//! Jacobian is computed once per level; each iteration only re-samples the
//! target image, solves the damped normal equations
//! `Δξ = (JᵀWJ + λD)⁻¹ JᵀW r` with `D = diag(JᵀWJ)`, and composes the
//! inverted increment into the pose estimate.

use nalgebra::{Matrix6, SymmetricEigen, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{backproject, project, se3_exp, warp_jacobian, PinholeCamera, Se3Pose, Twist};
use crate::image::{GrayImage, ImagePyramid, PYRAMID_LEVELS};

/// Patch width in pixels.
pub const PATCH_SIZE: usize = 8;

/// A patch spans offsets `[-PATCH_HALF, PATCH_HALF - 1]` around its centre.
pub const PATCH_HALF: i64 = (PATCH_SIZE / 2) as i64;

/// Minimum distance of a feature from the level-0 image border.
pub const FEATURE_BORDER: usize = 2 * PATCH_SIZE + 1;

/// Condition number above which the damped normal equations are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// A reference-image pixel with known inverse depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparseFeature {
    pub u: f64,
    pub v: f64,
    pub inverse_depth: f64,
}

impl SparseFeature {
    pub fn new(u: f64, v: f64, inverse_depth: f64) -> Self {
        SparseFeature { u, v, inverse_depth }
    }

    pub fn pixel(&self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }

    /// Checks the border and depth invariants for a `width`×`height` image.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if !(self.inverse_depth > 0.0) || !self.inverse_depth.is_finite() {
            return Err(Error::NonPositiveDepth(self.inverse_depth));
        }
        let b = FEATURE_BORDER as f64;
        if self.u < b || self.u >= width as f64 - b || self.v < b || self.v >= height as f64 - b {
            return Err(Error::InvalidInput(format!(
                "feature ({}, {}) violates the {FEATURE_BORDER}px border of a {width}x{height} image",
                self.u, self.v
            )));
        }
        Ok(())
    }
}

/// Per-level rasterised patches and, once [`precompute_template`] ran, the
/// template data of every masked pixel. Per-pixel vectors are in row-major
/// pixel order.
#[derive(Debug, Clone)]
pub struct MaskedLevelData {
    pub level: usize,
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
    /// Inverse depth per grid cell, zero outside the mask.
    pub inv_depth_grid: Vec<f64>,
    pub pixel_coords: Vec<(usize, usize)>,
    pub template_values: Vec<f64>,
    pub jacobian_rows: Vec<Vector6<f64>>,
    /// Backprojected template points in the reference camera frame.
    pub points: Vec<Vector3<f64>>,
}

impl MaskedLevelData {
    pub fn masked_count(&self) -> usize {
        self.pixel_coords.len()
    }

    pub fn is_precomputed(&self) -> bool {
        self.jacobian_rows.len() == self.pixel_coords.len() && !self.pixel_coords.is_empty()
    }

    pub fn inverse_depth_at(&self, x: usize, y: usize) -> f64 {
        self.inv_depth_grid[y * self.width + x]
    }
}

/// Top-left corner of the patch owned by `feature` at `level`, or `None`
/// when the patch would be clipped by the level bounds.
pub fn patch_origin(feature: &SparseFeature, level: usize, width: usize, height: usize) -> Option<(usize, usize)> {
    let s = (1u64 << level) as f64;
    let cx = (feature.u / s).round() as i64;
    let cy = (feature.v / s).round() as i64;
    let (x0, y0) = (cx - PATCH_HALF, cy - PATCH_HALF);
    let size = PATCH_SIZE as i64;
    if x0 < 0 || y0 < 0 || x0 + size > width as i64 || y0 + size > height as i64 {
        return None;
    }
    Some((x0 as usize, y0 as usize))
}

/// Rasterises feature patches into one mask per pyramid level.
///
/// `pyramid_dims[k]` is the `(width, height)` of level `k`. Overlapping
/// patches keep the larger inverse depth (the nearer surface).
pub fn build_masks(features: &[SparseFeature], pyramid_dims: &[(usize, usize)]) -> Result<Vec<MaskedLevelData>> {
    if features.is_empty() {
        return Err(Error::NoFeatures);
    }
    let &(w0, h0) = pyramid_dims
        .first()
        .ok_or_else(|| Error::InvalidInput("empty pyramid".into()))?;
    for f in features {
        f.validate(w0, h0)?;
    }
    let mut out = Vec::with_capacity(pyramid_dims.len());
    for (level, &(width, height)) in pyramid_dims.iter().enumerate() {
        let mut mask = vec![false; width * height];
        let mut inv_depth_grid = vec![0.0f64; width * height];
        for f in features {
            let Some((x0, y0)) = patch_origin(f, level, width, height) else {
                continue;
            };
            for y in y0..y0 + PATCH_SIZE {
                for x in x0..x0 + PATCH_SIZE {
                    let i = y * width + x;
                    mask[i] = true;
                    inv_depth_grid[i] = inv_depth_grid[i].max(f.inverse_depth);
                }
            }
        }
        let pixel_coords = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .filter(|&(x, y)| mask[y * width + x])
            .collect();
        out.push(MaskedLevelData {
            level,
            width,
            height,
            mask,
            inv_depth_grid,
            pixel_coords,
            template_values: Vec::new(),
            jacobian_rows: Vec::new(),
            points: Vec::new(),
        });
    }
    Ok(out)
}

/// Fills template intensities, backprojected points and Jacobian rows.
///
/// `camera` must already be scaled to `level_data.level`
/// (see [`PinholeCamera::at_level`]).
pub fn precompute_template(
    mut level_data: MaskedLevelData,
    i0_pyramid: &ImagePyramid,
    camera: &PinholeCamera,
) -> Result<MaskedLevelData> {
    let level = i0_pyramid.level(level_data.level);
    if (level.image.width(), level.image.height()) != (level_data.width, level_data.height) {
        return Err(Error::InvalidInput("mask and pyramid level sizes differ".into()));
    }
    let n = level_data.pixel_coords.len();
    let mut template_values = Vec::with_capacity(n);
    let mut jacobian_rows = Vec::with_capacity(n);
    let mut points = Vec::with_capacity(n);
    for &(x, y) in &level_data.pixel_coords {
        let rho = level_data.inverse_depth_at(x, y);
        let point = backproject(camera, &Vector2::new(x as f64, y as f64), rho)?;
        let warp = warp_jacobian(camera, &point)?;
        let grad = nalgebra::RowVector2::new(level.grad_x.get(x, y), level.grad_y.get(x, y));
        jacobian_rows.push((grad * warp).transpose());
        template_values.push(level.image.get(x, y));
        points.push(point);
    }
    level_data.template_values = template_values;
    level_data.jacobian_rows = jacobian_rows;
    level_data.points = points;
    Ok(level_data)
}

/// Photometric residuals `I₁(π(T·X)) − I₀(p)` with per-pixel validity.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl Residuals {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

pub fn compute_residuals(
    level_data: &MaskedLevelData,
    i1_level: &GrayImage,
    camera: &PinholeCamera,
    pose: &Se3Pose,
) -> Result<Residuals> {
    let n = level_data.points.len();
    let mut values = vec![0.0; n];
    let mut valid = vec![false; n];
    let mut any = false;
    for (i, point) in level_data.points.iter().enumerate() {
        let Ok(px) = project(camera, &pose.transform_point(point)) else {
            continue;
        };
        if let Some(sample) = i1_level.try_sample(px.x, px.y) {
            values[i] = sample - level_data.template_values[i];
            valid[i] = true;
            any = true;
        }
    }
    if !any {
        return Err(Error::AllInvalid);
    }
    Ok(Residuals { values, valid })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    None,
    #[default]
    Huber,
    Tukey,
}

/// Fixed robust weighting of photometric residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustWeightConfig {
    pub kind: WeightKind,
    /// In intensity units.
    pub threshold: f64,
}

impl Default for RobustWeightConfig {
    fn default() -> Self {
        RobustWeightConfig {
            kind: WeightKind::Huber,
            threshold: 0.1,
        }
    }
}

impl RobustWeightConfig {
    pub fn none() -> Self {
        RobustWeightConfig {
            kind: WeightKind::None,
            threshold: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != WeightKind::None && !(self.threshold > 0.0) {
            return Err(Error::InvalidInput(format!(
                "robust weight threshold must be positive, got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn weight(&self, r: f64) -> f64 {
        match self.kind {
            WeightKind::None => 1.0,
            WeightKind::Huber => {
                let a = r.abs();
                if a <= self.threshold {
                    1.0
                } else {
                    self.threshold / a
                }
            }
            WeightKind::Tukey => {
                if r.abs() < self.threshold {
                    let q = r / self.threshold;
                    let s = 1.0 - q * q;
                    s * s
                } else {
                    0.0
                }
            }
        }
    }
}

/// Diagonal of `W`.
pub fn robust_weights(residuals: &[f64], config: &RobustWeightConfig) -> Vec<f64> {
    residuals.iter().map(|&r| config.weight(r)).collect()
}

/// Damped Gauss-Newton increment `(JᵀWJ + λ·diag(JᵀWJ))⁻¹ JᵀW r`.
///
/// Pixels with zero weight do not contribute.
pub fn lm_step(jacobian_rows: &[Vector6<f64>], residuals: &[f64], weights: &[f64], lambda: f64) -> Result<Twist> {
    if jacobian_rows.len() != residuals.len() || residuals.len() != weights.len() {
        return Err(Error::InvalidInput("jacobian, residual and weight lengths differ".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidInput(format!("damping must be non-negative, got {lambda}")));
    }
    let mut hessian = Matrix6::zeros();
    let mut gradient = Vector6::zeros();
    let mut used = 0usize;
    for ((j, &r), &w) in jacobian_rows.iter().zip(residuals).zip(weights) {
        if w <= 0.0 {
            continue;
        }
        used += 1;
        let wj = j * w;
        hessian += wj * j.transpose();
        gradient += wj * r;
    }
    if used < 6 {
        return Err(Error::SingularSystem {
            condition: f64::INFINITY,
            best_pose: None,
        });
    }
    let mut damped = hessian;
    for k in 0..6 {
        damped[(k, k)] += lambda * hessian[(k, k)];
    }
    let eig = SymmetricEigen::new(damped).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularSystem {
            condition,
            best_pose: None,
        });
    }
    let delta = damped
        .cholesky()
        .ok_or(Error::SingularSystem {
            condition,
            best_pose: None,
        })?
        .solve(&gradient);
    Ok(Twist(delta))
}

/// Solver settings, also accepted as the `iclk` JSON config block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignOptions {
    /// Per pyramid level.
    pub max_iterations: usize,
    pub lambda: f64,
    pub weight_kind: WeightKind,
    pub weight_threshold: f64,
    pub convergence_tol: f64,
}

impl Default for AlignOptions {
    fn default() -> Self {
        AlignOptions {
            max_iterations: 10,
            lambda: 1e-6,
            weight_kind: WeightKind::Huber,
            weight_threshold: 0.1,
            convergence_tol: 1e-8,
        }
    }
}

impl AlignOptions {
    pub fn weight_config(&self) -> RobustWeightConfig {
        RobustWeightConfig {
            kind: self.weight_kind,
            threshold: self.weight_threshold,
        }
    }

    pub fn with_weights(mut self, config: RobustWeightConfig) -> Self {
        self.weight_kind = config.kind;
        self.weight_threshold = config.threshold;
        self
    }
}

/// Why a pyramid level stopped iterating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// No feature patch survived at this level.
    #[default]
    Skipped,
    StepTolerance,
    CostIncrease,
    /// Iteration budget spent while the cost still changed by ≥ 0.1%.
    MaxIterations,
    /// Iteration budget spent with the last accepted cost change below 0.1%.
    Stalled,
    /// A candidate pose projected every pixel out of the target image.
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub pose: Se3Pose,
    /// Indexed by level (0 = finest).
    pub iterations_per_level: [usize; PYRAMID_LEVELS],
    pub stop_reasons: [StopReason; PYRAMID_LEVELS],
    /// Mean squared weighted residual of the returned pose at level 0.
    pub final_cost: f64,
    pub converged: bool,
    /// Per level (0 = finest): cost of the initial iterate, then of every
    /// evaluated candidate.
    pub residual_history: [Vec<f64>; PYRAMID_LEVELS],
}

/// `Σ wᵢrᵢ² / n_valid` over valid pixels, with the weights written to `weights`.
fn weighted_cost(res: &Residuals, config: &RobustWeightConfig, weights: &mut Vec<f64>) -> f64 {
    weights.clear();
    let mut sum = 0.0;
    let mut n = 0usize;
    for (&r, &ok) in res.values.iter().zip(&res.valid) {
        if ok {
            let w = config.weight(r);
            weights.push(w);
            sum += w * r * r;
            n += 1;
        } else {
            weights.push(0.0);
        }
    }
    sum / n as f64
}

/// Masked cost of `pose` at one precomputed level.
pub fn masked_cost(
    level_data: &MaskedLevelData,
    i1_level: &GrayImage,
    camera: &PinholeCamera,
    pose: &Se3Pose,
    config: &RobustWeightConfig,
) -> Result<f64> {
    let res = compute_residuals(level_data, i1_level, camera, pose)?;
    Ok(weighted_cost(&res, config, &mut Vec::new()))
}

fn attach_pose(err: Error, pose: &Se3Pose) -> Error {
    match err {
        Error::SingularSystem { condition, .. } => Error::SingularSystem {
            condition,
            best_pose: Some(Box::new(*pose)),
        },
        e => e,
    }
}

struct LevelOutcome {
    pose: Se3Pose,
    cost: f64,
    iterations: usize,
    stop: StopReason,
    history: Vec<f64>,
}

fn align_level(
    data: &MaskedLevelData,
    i1: &GrayImage,
    camera: &PinholeCamera,
    start: Se3Pose,
    options: &AlignOptions,
) -> Result<LevelOutcome> {
    let config = options.weight_config();
    let mut weights = Vec::with_capacity(data.masked_count());
    let mut pose = start;
    let mut res = compute_residuals(data, i1, camera, &pose)?;
    let mut cost = weighted_cost(&res, &config, &mut weights);
    let mut history = vec![cost];
    let (mut best_pose, mut best_cost) = (pose, cost);
    let mut last_accepted_change = f64::INFINITY;
    let mut increases = 0;
    let mut iterations = 0;
    let mut stop = StopReason::MaxIterations;
    while iterations < options.max_iterations {
        iterations += 1;
        let delta =
            lm_step(&data.jacobian_rows, &res.values, &weights, options.lambda).map_err(|e| attach_pose(e, &best_pose))?;
        if delta.norm() < options.convergence_tol {
            stop = StopReason::StepTolerance;
            break;
        }
        let candidate = pose * se3_exp(&delta).inverse();
        let next = match compute_residuals(data, i1, camera, &candidate) {
            Ok(r) => r,
            Err(Error::AllInvalid) => {
                stop = StopReason::Diverged;
                break;
            }
            Err(e) => return Err(e),
        };
        let next_cost = weighted_cost(&next, &config, &mut weights);
        history.push(next_cost);
        if next_cost < best_cost {
            last_accepted_change = (best_cost - next_cost) / best_cost.max(f64::MIN_POSITIVE);
            best_pose = candidate;
            best_cost = next_cost;
        }
        increases = if next_cost > cost { increases + 1 } else { 0 };
        if increases >= 2 {
            stop = StopReason::CostIncrease;
            break;
        }
        pose = candidate;
        res = next;
        cost = next_cost;
    }
    if stop == StopReason::MaxIterations && last_accepted_change < 1e-3 {
        stop = StopReason::Stalled;
    }
    Ok(LevelOutcome {
        pose: best_pose.renormalized(),
        cost: best_cost,
        iterations,
        stop,
        history,
    })
}

/// Precomputed template for all levels; reusable across target images.
#[derive(Debug, Clone)]
pub struct Template {
    pub levels: Vec<MaskedLevelData>,
    pub cameras: Vec<PinholeCamera>,
}

impl Template {
    pub fn new(i0_pyramid: &ImagePyramid, features: &[SparseFeature], camera: &PinholeCamera) -> Result<Self> {
        if i0_pyramid.len() != PYRAMID_LEVELS {
            return Err(Error::InvalidInput(format!(
                "expected a {PYRAMID_LEVELS}-level pyramid, got {}",
                i0_pyramid.len()
            )));
        }
        if (camera.width, camera.height) != i0_pyramid.dims()[0] {
            return Err(Error::InvalidInput("camera and image sizes differ".into()));
        }
        let masks = build_masks(features, &i0_pyramid.dims())?;
        let cameras: Vec<_> = (0..PYRAMID_LEVELS).map(|k| camera.at_level(k)).collect();
        let levels = masks
            .into_iter()
            .zip(&cameras)
            .map(|(m, cam)| precompute_template(m, i0_pyramid, cam))
            .collect::<Result<_>>()?;
        Ok(Template { levels, cameras })
    }

    /// Coarse-to-fine alignment of `i1_pyramid` starting from `initial_pose`.
    pub fn align(&self, i1_pyramid: &ImagePyramid, initial_pose: &Se3Pose, options: &AlignOptions) -> Result<AlignmentResult> {
        options.weight_config().validate()?;
        if i1_pyramid.len() != PYRAMID_LEVELS {
            return Err(Error::InvalidInput("target pyramid must have 4 levels".into()));
        }
        if !initial_pose.is_valid(1e-6) {
            return Err(Error::InvalidInput("initial pose is not a valid rigid transform".into()));
        }
        let mut pose = *initial_pose;
        let mut iterations_per_level = [0; PYRAMID_LEVELS];
        let mut stop_reasons = [StopReason::Skipped; PYRAMID_LEVELS];
        let mut residual_history: [Vec<f64>; PYRAMID_LEVELS] = Default::default();
        let mut final_cost = f64::NAN;
        for level in (0..PYRAMID_LEVELS).rev() {
            let data = &self.levels[level];
            if data.masked_count() == 0 {
                continue;
            }
            let outcome = align_level(data, i1_pyramid.image(level), &self.cameras[level], pose, options)?;
            pose = outcome.pose;
            iterations_per_level[level] = outcome.iterations;
            stop_reasons[level] = outcome.stop;
            residual_history[level] = outcome.history;
            final_cost = outcome.cost;
        }
        let converged = matches!(
            stop_reasons[0],
            StopReason::StepTolerance | StopReason::CostIncrease | StopReason::Stalled
        );
        Ok(AlignmentResult {
            pose,
            iterations_per_level,
            stop_reasons,
            final_cost,
            converged,
            residual_history,
        })
    }
}

/// Estimates `T^{C1}_{C0}` aligning `i0_pyramid` (with `features`) to
/// `i1_pyramid`.
pub fn align(
    i0_pyramid: &ImagePyramid,
    i1_pyramid: &ImagePyramid,
    features: &[SparseFeature],
    camera: &PinholeCamera,
    initial_pose: &Se3Pose,
    options: &AlignOptions,
) -> Result<AlignmentResult> {
    Template::new(i0_pyramid, features, camera)?.align(i1_pyramid, initial_pose, options)
}
