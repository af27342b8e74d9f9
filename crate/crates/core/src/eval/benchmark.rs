use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{correspondence_error, epe_3d, pixel_error, pose_error, ErrorReport, Stage};
use super::overlay::{blend_overlay, error_lines};
use crate::error::Result;
use crate::geometry::{PinholeCamera, Se3Pose};
use crate::iclk::{align, AlignOptions, AlignmentResult};
use crate::image::{build_pyramid, PYRAMID_LEVELS};
use crate::io::{write_gray_png, write_rgb_png};
use crate::refine::{
    feature_align, optimize_pose, refine_structure, FeatureAlignOptions, FeatureCorrespondence, PoseOptimizeOptions,
    RefinementResult,
};
use crate::synth::{load_pair, Manifest, PairData, PairEntry};

pub const CSV_HEADER: [&str; 11] = [
    "pair_id",
    "stage",
    "e_pixel",
    "e_transl",
    "e_rot",
    "epe_3d",
    "converged",
    "iters_l3",
    "iters_l2",
    "iters_l1",
    "iters_l0",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub iclk: AlignOptions,
    pub feature_align: FeatureAlignOptions,
    pub pose_opt: PoseOptimizeOptions,
    /// Re-optimise the pose after a per-point inverse-depth update.
    pub refine_structure: bool,
    /// Evaluate the `k`-th jittered variant of both views.
    pub jitter_variant: Option<usize>,
    pub max_pairs: Option<usize>,
    /// A pair counts as converged when the aligned pose is within both
    /// bounds of the ground truth (pixels, radians).
    pub converged_max_pixel: f64,
    pub converged_max_rot: f64,
    pub overlays: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            iclk: AlignOptions::default(),
            feature_align: FeatureAlignOptions::default(),
            pose_opt: PoseOptimizeOptions::default(),
            refine_structure: false,
            jitter_variant: None,
            max_pairs: None,
            converged_max_pixel: 1.5,
            converged_max_rot: 0.01,
            overlays: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub pair_id: String,
    /// One entry per completed stage, in stage order.
    pub reports: Vec<ErrorReport>,
    /// Indexed by level (0 = finest); zero when alignment failed.
    pub iterations_per_level: [usize; PYRAMID_LEVELS],
    /// Ground-truth convergence of the photometric alignment.
    pub converged: bool,
    /// The solver's own convergence flag.
    pub solver_converged: bool,
    pub features_aligned: usize,
    pub residual_history: [Vec<f64>; PYRAMID_LEVELS],
    pub error: Option<String>,
    #[serde(skip)]
    pub alignment: Option<AlignmentResult>,
}

impl PairOutcome {
    pub fn report(&self, stage: Stage) -> Option<&ErrorReport> {
        self.reports.iter().find(|r| r.stage == stage)
    }

    pub fn is_complete(&self) -> bool {
        self.reports.len() == Stage::ALL.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
    pub p90: f64,
}

impl Stats {
    fn of(mut values: Vec<f64>) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        values.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let x = p * (values.len() - 1) as f64;
            let (i, f) = (x.floor() as usize, x.fract());
            values[i] + (values[(i + 1).min(values.len() - 1)] - values[i]) * f
        };
        Some(Stats {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            median: q(0.5),
            p90: q(0.9),
        })
    }
}

/// Aggregates of one stage over the converged pairs that completed every
/// stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub count: usize,
    pub e_pixel: Option<Stats>,
    pub e_transl: Option<Stats>,
    pub e_rot: Option<Stats>,
    pub epe_3d: Option<Stats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub seed: u64,
    pub config: BenchmarkConfig,
    pub pairs: usize,
    pub converged: usize,
    pub convergence_rate: f64,
    /// Units: e_pixel px, e_transl m, e_rot rad, epe_3d m.
    pub stages: Vec<StageSummary>,
    pub outcomes: Vec<PairOutcome>,
}

impl BenchmarkReport {
    pub fn summary(&self, stage: Stage) -> Option<&StageSummary> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.csv_string()?)?;
        Ok(())
    }

    pub fn csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).map_err(crate::refine::csv_err)?;
        for o in &self.outcomes {
            let it = o.iterations_per_level;
            for r in &o.reports {
                w.write_record([
                    o.pair_id.clone(),
                    r.stage.to_string(),
                    r.e_pixel.to_string(),
                    r.e_transl.to_string(),
                    r.e_rot.to_string(),
                    r.epe_3d.to_string(),
                    u8::from(o.converged).to_string(),
                    it[3].to_string(),
                    it[2].to_string(),
                    it[1].to_string(),
                    it[0].to_string(),
                ])
                .map_err(crate::refine::csv_err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| crate::Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| crate::Error::Format(e.to_string()))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Plain-text stage table of aggregate means.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{} pairs, {} converged ({:.1}%)\n{:<20}{:>12}{:>12}{:>12}{:>12}\n",
            self.pairs,
            self.converged,
            100.0 * self.convergence_rate,
            "stage",
            "e_pixel[px]",
            "e_transl[m]",
            "e_rot[rad]",
            "epe_3d[m]"
        );
        for s in &self.stages {
            let m = |x: Option<Stats>| x.map_or("-".to_string(), |s| format!("{:.4}", s.mean));
            out += &format!(
                "{:<20}{:>12}{:>12}{:>12}{:>12}\n",
                s.stage.as_str(),
                m(s.e_pixel),
                m(s.e_transl),
                m(s.e_rot),
                m(s.epe_3d)
            );
        }
        out
    }
}

struct Evaluator<'a> {
    data: &'a PairData,
    gt: Se3Pose,
    camera: &'a PinholeCamera,
}

impl Evaluator<'_> {
    fn report(&self, stage: Stage, pose: &Se3Pose, e_pixel: Option<f64>) -> Result<ErrorReport> {
        let e_pixel = match e_pixel {
            Some(e) => e,
            None => pixel_error(&self.data.features, &self.gt, pose, self.camera)?.mean,
        };
        let (e_transl, e_rot) = pose_error(&self.gt, pose)?;
        Ok(ErrorReport {
            stage,
            e_pixel,
            e_transl,
            e_rot,
            epe_3d: epe_3d(&self.data.depth0, &self.gt, pose, self.camera)?,
        })
    }
}

fn refine_pose(
    corr: &[FeatureCorrespondence],
    camera: &PinholeCamera,
    start: &Se3Pose,
    config: &BenchmarkConfig,
) -> Result<RefinementResult> {
    let first = optimize_pose(corr, camera, start, &config.pose_opt)?;
    if !config.refine_structure {
        return Ok(first);
    }
    let updated: Vec<_> = corr
        .iter()
        .zip(refine_structure(corr, camera, &first.pose))
        .map(|(c, u)| FeatureCorrespondence {
            inverse_depth: if u.accepted { u.inverse_depth } else { c.inverse_depth },
            ..*c
        })
        .collect();
    optimize_pose(&updated, camera, &first.pose, &config.pose_opt)
}

fn run_stages(
    entry: &PairEntry,
    data: &PairData,
    camera: &PinholeCamera,
    config: &BenchmarkConfig,
    overlay_dir: Option<&Path>,
    out: &mut PairOutcome,
) -> Result<()> {
    let ev = Evaluator {
        data,
        gt: entry.relative_pose,
        camera,
    };
    out.reports.push(ev.report(Stage::Initial, &entry.initial_pose, None)?);

    let (pyr0, pyr1) = (build_pyramid(&data.image0)?, build_pyramid(&data.image1)?);
    let aligned = align(&pyr0, &pyr1, &data.features, camera, &entry.initial_pose, &config.iclk)?;
    out.iterations_per_level = aligned.iterations_per_level;
    out.residual_history = aligned.residual_history.clone();
    out.solver_converged = aligned.converged;
    let iclk = ev.report(Stage::Iclk, &aligned.pose, None)?;
    out.converged = iclk.e_pixel < config.converged_max_pixel && iclk.e_rot < config.converged_max_rot;
    out.reports.push(iclk);
    out.alignment = Some(aligned.clone());

    let corr = feature_align(
        &data.image0,
        &data.image1,
        &data.features,
        camera,
        &aligned.pose,
        &config.feature_align,
    )?;
    out.features_aligned = corr.iter().filter(|c| c.alignment_converged).count();
    let e_fa = correspondence_error(&corr, &ev.gt, camera)?.mean;
    out.reports
        .push(ev.report(Stage::FeatureAlignment, &aligned.pose, Some(e_fa))?);

    let refined = refine_pose(&corr, camera, &aligned.pose, config)?;
    out.reports.push(ev.report(Stage::PoseOptimization, &refined.pose, None)?);

    if let Some(dir) = overlay_dir {
        for (stage, pose) in [(Stage::Iclk, &aligned.pose), (Stage::PoseOptimization, &refined.pose)] {
            let stem = format!("{}_{}", entry.id, stage);
            write_gray_png(
                dir.join(format!("{stem}_blend.png")),
                &blend_overlay(&data.image0, &data.image1, &data.depth0, pose, camera),
            )?;
            write_rgb_png(
                dir.join(format!("{stem}_errors.png")),
                &error_lines(&data.image1, &data.features, &ev.gt, pose, camera),
            )?;
        }
    }
    Ok(())
}

/// Runs every stage on one pair; failures end that pair's stage list and are
/// recorded in the outcome.
pub fn evaluate_pair(
    base: &Path,
    entry: &PairEntry,
    camera: &PinholeCamera,
    config: &BenchmarkConfig,
    overlay_dir: Option<&Path>,
) -> PairOutcome {
    let mut out = PairOutcome {
        pair_id: entry.id.clone(),
        reports: Vec::new(),
        iterations_per_level: [0; PYRAMID_LEVELS],
        converged: false,
        solver_converged: false,
        features_aligned: 0,
        residual_history: Default::default(),
        error: None,
        alignment: None,
    };
    let result = load_pair(base, entry, config.jitter_variant)
        .and_then(|data| run_stages(entry, &data, camera, config, overlay_dir, &mut out));
    if let Err(e) = result {
        log::warn!("{}: {e}", entry.id);
        out.error = Some(e.to_string());
    }
    out
}

/// Evaluates the manifest at `manifest_dir` pair by pair (in parallel,
/// reported in pair order) and aggregates the converged subset.
pub fn run_benchmark(
    manifest: &Manifest,
    manifest_dir: &Path,
    config: &BenchmarkConfig,
    overlay_dir: Option<&Path>,
) -> Result<BenchmarkReport> {
    config.iclk.weight_config().validate()?;
    let overlay_dir = overlay_dir.filter(|_| config.overlays);
    if let Some(dir) = overlay_dir {
        std::fs::create_dir_all(dir)?;
    }
    let n = config.max_pairs.map_or(manifest.pairs.len(), |m| m.min(manifest.pairs.len()));
    let outcomes: Vec<PairOutcome> = manifest.pairs[..n]
        .par_iter()
        .map(|entry| evaluate_pair(manifest_dir, entry, &manifest.camera, config, overlay_dir))
        .collect();
    Ok(summarize(manifest.seed, config, outcomes))
}

pub fn summarize(seed: u64, config: &BenchmarkConfig, outcomes: Vec<PairOutcome>) -> BenchmarkReport {
    let converged = outcomes.iter().filter(|o| o.converged).count();
    let subset: Vec<&PairOutcome> = outcomes.iter().filter(|o| o.converged && o.is_complete()).collect();
    let stages = Stage::ALL
        .iter()
        .map(|&stage| {
            let col = |f: fn(&ErrorReport) -> f64| Stats::of(subset.iter().filter_map(|o| o.report(stage)).map(f).collect());
            StageSummary {
                stage,
                count: subset.len(),
                e_pixel: col(|r| r.e_pixel),
                e_transl: col(|r| r.e_transl),
                e_rot: col(|r| r.e_rot),
                epe_3d: col(|r| r.epe_3d),
            }
        })
        .collect();
    BenchmarkReport {
        seed,
        config: *config,
        pairs: outcomes.len(),
        converged,
        convergence_rate: if outcomes.is_empty() {
            0.0
        } else {
            converged as f64 / outcomes.len() as f64
        },
        stages,
        outcomes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let s = Stats::of(vec![4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!((s.mean, s.median), (3.0, 3.0));
        assert!((s.p90 - 4.6).abs() < 1e-12);
        assert!(Stats::of(vec![]).is_none());
    }

    #[test]
    fn csv_has_one_row_per_completed_stage() {
        let mk = |stage| ErrorReport {
            stage,
            e_pixel: 1.5,
            e_transl: 0.25,
            e_rot: 0.0,
            epe_3d: 2.0,
        };
        let outcome = PairOutcome {
            pair_id: "pair_0007".into(),
            reports: vec![mk(Stage::Initial), mk(Stage::Iclk)],
            iterations_per_level: [1, 2, 3, 4],
            converged: true,
            solver_converged: true,
            features_aligned: 0,
            residual_history: Default::default(),
            error: Some("too few".into()),
            alignment: None,
        };
        let report = summarize(3, &BenchmarkConfig::default(), vec![outcome]);
        let csv = report.csv_string().unwrap();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER.join(","));
        assert_eq!(lines[2], "pair_0007,iclk,1.5,0.25,0,2,1,4,3,2,1");
        assert_eq!(lines.len(), 3);
        // incomplete pairs stay out of the aggregate
        assert_eq!(report.stages[0].count, 0);
        assert_eq!(report.converged, 1);
    }
}
