//! Post-alignment refinement: per-feature subpixel patch alignment, robust
//! pose optimisation on the resulting correspondences, and an optional
//! per-point inverse-depth update.

use std::path::Path;

use nalgebra::{Matrix2x6, Matrix6, SymmetricEigen, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{backproject, project, se3_exp, warp_jacobian, PinholeCamera, Se3Pose, Twist};
use crate::iclk::{SparseFeature, PATCH_SIZE};
use crate::image::{gradient, GrayImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureAlignOptions {
    pub patch: usize,
    pub max_iters: usize,
    /// Update norm (pixels) below which a feature counts as converged.
    pub tol: f64,
}

impl Default for FeatureAlignOptions {
    fn default() -> Self {
        FeatureAlignOptions {
            patch: PATCH_SIZE,
            max_iters: 30,
            tol: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureCorrespondence {
    pub ref_pixel: Vector2<f64>,
    pub target_pixel: Vector2<f64>,
    pub inverse_depth: f64,
    pub alignment_converged: bool,
    #[serde(default)]
    pub iterations: usize,
}

struct PatchTemplate {
    offsets: Vec<Vector2<f64>>,
    values: Vec<f64>,
    grads: Vec<Vector2<f64>>,
    hessian_inv: nalgebra::Matrix2<f64>,
}

fn patch_offsets(patch: usize) -> Vec<Vector2<f64>> {
    let half = (patch / 2) as i64;
    let mut out = Vec::with_capacity(patch * patch);
    for dy in -half..patch as i64 - half {
        for dx in -half..patch as i64 - half {
            out.push(Vector2::new(dx as f64, dy as f64));
        }
    }
    out
}

fn patch_template(
    i0: &GrayImage,
    gx: &GrayImage,
    gy: &GrayImage,
    center: &Vector2<f64>,
    offsets: &[Vector2<f64>],
) -> Option<PatchTemplate> {
    let mut values = Vec::with_capacity(offsets.len());
    let mut grads = Vec::with_capacity(offsets.len());
    let mut h = nalgebra::Matrix2::zeros();
    for o in offsets {
        let p = center + o;
        values.push(i0.try_sample(p.x, p.y)?);
        let g = Vector2::new(gx.try_sample(p.x, p.y)?, gy.try_sample(p.x, p.y)?);
        h += g * g.transpose();
        grads.push(g);
    }
    // reject textureless patches
    if h.determinant() <= 1e-12 * h.trace().powi(2).max(f64::MIN_POSITIVE) {
        return None;
    }
    Some(PatchTemplate {
        offsets: offsets.to_vec(),
        values,
        grads,
        hessian_inv: h.try_inverse()?,
    })
}

/// 2D inverse-compositional translation alignment of one template patch.
/// Returns the refined centre, the iteration count and the convergence flag.
fn align_patch(
    t: &PatchTemplate,
    i1: &GrayImage,
    start: Vector2<f64>,
    options: &FeatureAlignOptions,
) -> (Vector2<f64>, usize, bool) {
    let half = (options.patch / 2) as f64;
    let (w, h) = (i1.width() as f64, i1.height() as f64);
    let inside =
        |q: &Vector2<f64>| q.x - half >= 0.0 && q.y - half >= 0.0 && q.x + half - 1.0 <= w - 1.0 && q.y + half - 1.0 <= h - 1.0;
    let mut q = start;
    for it in 1..=options.max_iters {
        if !inside(&q) {
            return (q, it - 1, false);
        }
        let mut b = Vector2::zeros();
        for ((o, v), g) in t.offsets.iter().zip(&t.values).zip(&t.grads) {
            let p = q + o;
            let Some(s) = i1.try_sample(p.x, p.y) else {
                return (q, it, false);
            };
            b += g * (s - v);
        }
        let delta = t.hessian_inv * b;
        if !delta.iter().all(|d| d.is_finite()) {
            return (q, it, false);
        }
        q -= delta;
        if delta.norm() < options.tol {
            return (q, it, inside(&q));
        }
    }
    (q, options.max_iters, false)
}

/// Refines the predicted target location of every feature to subpixel
/// accuracy. The pose is only used for the prediction.
pub fn feature_align(
    i0: &GrayImage,
    i1: &GrayImage,
    features: &[SparseFeature],
    camera: &PinholeCamera,
    pose: &Se3Pose,
    options: &FeatureAlignOptions,
) -> Result<Vec<FeatureCorrespondence>> {
    if options.patch < 2 || options.max_iters == 0 || !(options.tol > 0.0) {
        return Err(Error::InvalidInput(format!("invalid feature alignment options {options:?}")));
    }
    let (gx, gy) = gradient(i0)?;
    let offsets = patch_offsets(options.patch);
    let out = features
        .iter()
        .map(|f| {
            let ref_pixel = f.pixel();
            let failed = |target_pixel| FeatureCorrespondence {
                ref_pixel,
                target_pixel,
                inverse_depth: f.inverse_depth,
                alignment_converged: false,
                iterations: 0,
            };
            let predicted =
                match backproject(camera, &ref_pixel, f.inverse_depth).and_then(|x| project(camera, &pose.transform_point(&x))) {
                    Ok(p) => p,
                    Err(_) => return failed(ref_pixel),
                };
            let Some(template) = patch_template(i0, &gx, &gy, &ref_pixel, &offsets) else {
                return failed(predicted);
            };
            let (target_pixel, iterations, converged) = align_patch(&template, i1, predicted, options);
            FeatureCorrespondence {
                ref_pixel,
                target_pixel,
                inverse_depth: f.inverse_depth,
                alignment_converged: converged,
                iterations,
            }
        })
        .collect();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PoseLoss {
    Squared,
    #[default]
    Cauchy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseOptimizeOptions {
    pub loss: PoseLoss,
    /// Pixels.
    pub cauchy_scale: f64,
    pub max_iters: usize,
    /// Reprojection error (pixels) up to which a correspondence is an inlier.
    pub inlier_threshold: f64,
}

impl Default for PoseOptimizeOptions {
    fn default() -> Self {
        PoseOptimizeOptions {
            loss: PoseLoss::Cauchy,
            cauchy_scale: 1.0,
            max_iters: 50,
            inlier_threshold: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementResult {
    pub pose: Se3Pose,
    pub inlier_count: usize,
    /// Mean over converged correspondences, pixels.
    pub mean_reprojection_error: f64,
    /// One entry per input correspondence; `None` when it was not used.
    pub per_feature_errors: Vec<Option<f64>>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
}

impl PoseOptimizeOptions {
    fn rho(&self, s: f64) -> f64 {
        match self.loss {
            PoseLoss::Squared => s,
            PoseLoss::Cauchy => {
                let c2 = self.cauchy_scale * self.cauchy_scale;
                c2 * (s / c2).ln_1p()
            }
        }
    }

    fn weight(&self, s: f64) -> f64 {
        match self.loss {
            PoseLoss::Squared => 1.0,
            PoseLoss::Cauchy => 1.0 / (1.0 + s / (self.cauchy_scale * self.cauchy_scale)),
        }
    }
}

struct Observation {
    point: Vector3<f64>,
    target: Vector2<f64>,
}

fn robust_cost(obs: &[Observation], camera: &PinholeCamera, pose: &Se3Pose, options: &PoseOptimizeOptions) -> f64 {
    let mut cost = 0.0;
    for o in obs {
        match project(camera, &pose.transform_point(&o.point)) {
            Ok(px) => cost += options.rho((px - o.target).norm_squared()),
            Err(_) => return f64::INFINITY,
        }
    }
    cost
}

fn check_geometry(points: &[Vector3<f64>]) -> Result<()> {
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vector3<f64>>() / n;
    let mut scatter = nalgebra::Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        scatter += d * d.transpose();
    }
    let eig = SymmetricEigen::new(scatter).eigenvalues;
    let mut e: Vec<f64> = eig.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    // collinear (or coincident) points leave two vanishing directions
    if e[1] <= 1e-12 * e[2].max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateGeometry);
    }
    Ok(())
}

/// Robust Levenberg-Marquardt over SE(3) on the reprojection error of the
/// converged correspondences, with left-multiplicative updates.
pub fn optimize_pose(
    correspondences: &[FeatureCorrespondence],
    camera: &PinholeCamera,
    initial_pose: &Se3Pose,
    options: &PoseOptimizeOptions,
) -> Result<RefinementResult> {
    if options.loss == PoseLoss::Cauchy && !(options.cauchy_scale > 0.0) {
        return Err(Error::InvalidInput("cauchy scale must be positive".into()));
    }
    let mut used = Vec::new();
    let mut obs = Vec::new();
    for (i, c) in correspondences.iter().enumerate() {
        if c.alignment_converged {
            obs.push(Observation {
                point: backproject(camera, &c.ref_pixel, c.inverse_depth)?,
                target: c.target_pixel,
            });
            used.push(i);
        }
    }
    if obs.len() < 3 {
        return Err(Error::TooFewCorrespondences {
            needed: 3,
            got: obs.len(),
        });
    }
    check_geometry(&obs.iter().map(|o| o.point).collect::<Vec<_>>())?;

    let mut pose = *initial_pose;
    let initial_cost = robust_cost(&obs, camera, &pose, options);
    if !initial_cost.is_finite() {
        return Err(Error::InvalidInput("initial pose puts a point behind the camera".into()));
    }
    let mut cost = initial_cost;
    let mut mu = 1e-4;
    let mut iterations = 0;
    while iterations < options.max_iters {
        iterations += 1;
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for o in &obs {
            let pc = pose.transform_point(&o.point);
            let e = project(camera, &pc)? - o.target;
            let j: Matrix2x6<f64> = warp_jacobian(camera, &pc)?;
            let w = options.weight(e.norm_squared());
            h += j.transpose() * j * w;
            g += j.transpose() * e * w;
        }
        let eig = SymmetricEigen::new(h).eigenvalues;
        if !(eig.min() > 1e-12 * eig.max()) {
            return Err(Error::DegenerateGeometry);
        }
        let mut accepted = false;
        while mu < 1e16 {
            let mut damped = h;
            for k in 0..6 {
                damped[(k, k)] += mu * h[(k, k)];
            }
            let Some(chol) = damped.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let delta = Twist(-chol.solve(&g));
            let candidate = se3_exp(&delta) * pose;
            let c = robust_cost(&obs, camera, &candidate, options);
            if c < cost {
                let small = delta.norm() < 1e-14 || (cost - c) <= 1e-15 * cost;
                pose = candidate;
                cost = c;
                mu = (mu / 10.0).max(1e-12);
                accepted = !small;
                break;
            }
            mu *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    let pose = pose.renormalized();

    let mut per_feature_errors = vec![None; correspondences.len()];
    let mut sum = 0.0;
    let mut inlier_count = 0;
    for (o, &i) in obs.iter().zip(&used) {
        let err = (project(camera, &pose.transform_point(&o.point))? - o.target).norm();
        per_feature_errors[i] = Some(err);
        sum += err;
        if err <= options.inlier_threshold {
            inlier_count += 1;
        }
    }
    Ok(RefinementResult {
        pose,
        inlier_count,
        mean_reprojection_error: sum / obs.len() as f64,
        per_feature_errors,
        initial_cost,
        final_cost: cost.min(initial_cost),
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureUpdate {
    pub inverse_depth: f64,
    pub accepted: bool,
}

/// Per-point inverse-depth Gauss-Newton on the reprojection error with the
/// pose held fixed. Unobservable (no parallax) or sign-flipping updates are
/// rejected and leave the depth unchanged.
pub fn refine_structure(
    correspondences: &[FeatureCorrespondence],
    camera: &PinholeCamera,
    pose: &Se3Pose,
) -> Vec<StructureUpdate> {
    const MAX_STEPS: usize = 10;
    correspondences
        .iter()
        .map(|c| {
            let rejected = StructureUpdate {
                inverse_depth: c.inverse_depth,
                accepted: false,
            };
            if !c.alignment_converged || !(c.inverse_depth > 0.0) {
                return rejected;
            }
            let ray = camera.ray(c.ref_pixel.x, c.ref_pixel.y);
            let rotated = pose.rotation * ray;
            let mut rho = c.inverse_depth;
            for _ in 0..MAX_STEPS {
                let pc = rotated / rho + pose.translation;
                let (Ok(px), Ok(j)) = (project(camera, &pc), warp_jacobian(camera, &pc)) else {
                    return rejected;
                };
                let e = px - c.target_pixel;
                // d(T·X)/dρ = −R·ray/ρ²; the first three Jacobian columns are dπ/dX.
                let dproj = j.fixed_columns::<3>(0) * (-rotated / (rho * rho));
                // pixel motion for a 100% change in inverse depth
                if dproj.norm() * rho < 1e-6 {
                    return rejected;
                }
                let step = -dproj.dot(&e) / dproj.norm_squared();
                if !step.is_finite() || rho + step <= 0.0 {
                    return rejected;
                }
                rho += step;
                if step.abs() <= 1e-12 * rho {
                    break;
                }
            }
            StructureUpdate {
                inverse_depth: rho,
                accepted: true,
            }
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct CorrespondenceRow {
    ref_u: f64,
    ref_v: f64,
    tgt_u: f64,
    tgt_v: f64,
    inv_depth: f64,
    converged: u8,
}

/// Writes `ref_u,ref_v,tgt_u,tgt_v,inv_depth,converged` rows.
pub fn write_correspondences_csv(path: impl AsRef<Path>, correspondences: &[FeatureCorrespondence]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for c in correspondences {
        w.serialize(CorrespondenceRow {
            ref_u: c.ref_pixel.x,
            ref_v: c.ref_pixel.y,
            tgt_u: c.target_pixel.x,
            tgt_v: c.target_pixel.y,
            inv_depth: c.inverse_depth,
            converged: u8::from(c.alignment_converged),
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_correspondences_csv(path: impl AsRef<Path>) -> Result<Vec<FeatureCorrespondence>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize::<CorrespondenceRow>()
        .map(|row| {
            let row = row.map_err(csv_err)?;
            Ok(FeatureCorrespondence {
                ref_pixel: Vector2::new(row.ref_u, row.ref_v),
                target_pixel: Vector2::new(row.tgt_u, row.tgt_v),
                inverse_depth: row.inv_depth,
                alignment_converged: row.converged != 0,
                iterations: 0,
            })
        })
        .collect()
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}
