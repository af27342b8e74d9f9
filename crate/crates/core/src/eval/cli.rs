use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use super::benchmark::{evaluate_pair, run_benchmark, BenchmarkConfig, BenchmarkReport};
use super::plot::{residual_plot_svg, stage_plot_svg};
use crate::error::{Error, Result};
use crate::geometry::PinholeCamera;
use crate::iclk::AlignmentResult;
use crate::synth::{generate_scene, make_dataset, DatasetConfig, HeightmapScene, Manifest, PairFile, SceneConfig, MANIFEST_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

pub const CSV_FILE: &str = "benchmark.csv";
pub const REPORT_FILE: &str = "report.json";

fn default_camera() -> PinholeCamera {
    PinholeCamera {
        fx: 420.0,
        fy: 420.0,
        cx: 375.5,
        cy: 239.5,
        width: 752,
        height: 480,
    }
}

/// Contents of `--config`; every block is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub camera: PinholeCamera,
    pub scene: SceneConfig,
    pub dataset: DatasetConfig,
    pub benchmark: BenchmarkConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            camera: default_camera(),
            scene: SceneConfig::default(),
            dataset: DatasetConfig::default(),
            benchmark: BenchmarkConfig::default(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "sparse-iclk",
    version,
    about = "Sparse-depth 6DoF image alignment: data generation, alignment and benchmarking"
)]
struct Cli {
    /// JSON file with `camera`, `scene`, `dataset` and `benchmark` blocks.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the scene seed (`gen-scene`) or the dataset seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a procedural textured heightmap scene.
    GenScene,
    /// Render a dataset of image pairs with a manifest.
    GenDataset {
        /// Scene directory; a procedural scene is generated when omitted.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        pairs: Option<usize>,
    },
    /// Align a single pair directory and print the result as JSON.
    Align {
        pair_dir: PathBuf,
        /// Use the k-th jittered variant of both views.
        #[arg(long)]
        variant: Option<usize>,
    },
    /// Run the stage-wise benchmark over a dataset.
    Benchmark {
        /// Dataset directory holding the manifest; rendered into `<out>/dataset` when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        pairs: Option<usize>,
        #[arg(long)]
        variant: Option<usize>,
    },
    /// Render SVG plots from a benchmark report.
    Plot {
        /// Path to a benchmark report.json.
        report: PathBuf,
    },
}

#[derive(Debug, Serialize)]
struct AlignOutput {
    alignment: AlignmentResult,
    reports: Vec<super::metrics::ErrorReport>,
    features_aligned: usize,
    error: Option<String>,
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    let Some(path) = path else {
        return Ok(Config::default());
    };
    let text = std::fs::read_to_string(path)?;
    let config: Config = serde_json::from_str(&text)?;
    config.camera.validate()?;
    Ok(config)
}

fn scene_for(config: &Config, seed: Option<u64>, dir: Option<&Path>) -> Result<HeightmapScene> {
    match dir {
        Some(d) => HeightmapScene::load(d),
        None => generate_scene(&SceneConfig {
            seed: seed.unwrap_or(config.scene.seed),
            ..config.scene
        }),
    }
}

fn gen_dataset(config: &Config, seed: u64, scene: Option<&Path>, pairs: Option<usize>, out: &Path) -> Result<Manifest> {
    let scene = scene_for(config, None, scene)?;
    let dataset = DatasetConfig {
        n_pairs: pairs.unwrap_or(config.dataset.n_pairs),
        ..config.dataset
    };
    make_dataset(&scene, &config.camera, &dataset, seed, out)
}

fn execute(cli: Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    let out = |default: &str| cli.out.clone().unwrap_or_else(|| PathBuf::from(default));
    let dataset_seed = cli.seed.unwrap_or(config.scene.seed);
    match cli.command {
        Command::GenScene => {
            let dir = out("scene");
            scene_for(&config, cli.seed, None)?.save(&dir)?;
            println!("scene written to {}", dir.display());
        }
        Command::GenDataset { scene, pairs } => {
            let dir = out("dataset");
            let m = gen_dataset(&config, dataset_seed, scene.as_deref(), pairs, &dir)?;
            println!("{} pairs written to {}", m.pairs.len(), dir.join(MANIFEST_FILE).display());
        }
        Command::Align { pair_dir, variant } => {
            let pf = PairFile::load(&pair_dir)?;
            let bench = BenchmarkConfig {
                jitter_variant: variant.or(config.benchmark.jitter_variant),
                ..config.benchmark
            };
            let outcome = evaluate_pair(&pair_dir, &pf.pair, &pf.camera, &bench, None);
            let Some(alignment) = outcome.alignment else {
                return Err(Error::InvalidInput(outcome.error.unwrap_or_default()));
            };
            let output = AlignOutput {
                alignment,
                reports: outcome.reports,
                features_aligned: outcome.features_aligned,
                error: outcome.error,
            };
            let json = serde_json::to_string_pretty(&output)?;
            if let Some(dir) = &cli.out {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("align.json"), &json)?;
            }
            println!("{json}");
        }
        Command::Benchmark { dataset, pairs, variant } => {
            let dir = out("benchmark");
            std::fs::create_dir_all(&dir)?;
            let dataset_dir = match dataset {
                Some(d) => d,
                None => {
                    let d = dir.join("dataset");
                    gen_dataset(&config, dataset_seed, None, pairs, &d)?;
                    d
                }
            };
            let manifest = Manifest::load(dataset_dir.join(MANIFEST_FILE))?;
            let bench = BenchmarkConfig {
                max_pairs: pairs.or(config.benchmark.max_pairs),
                jitter_variant: variant.or(config.benchmark.jitter_variant),
                ..config.benchmark
            };
            let report = run_benchmark(&manifest, &dataset_dir, &bench, Some(&dir.join("overlays")))?;
            report.write_csv(dir.join(CSV_FILE))?;
            report.write_json(dir.join(REPORT_FILE))?;
            print!("{}", report.table());
        }
        Command::Plot { report } => {
            let r: BenchmarkReport = serde_json::from_str(&std::fs::read_to_string(&report)?)?;
            let dir = cli
                .out
                .clone()
                .unwrap_or_else(|| report.parent().map_or_else(PathBuf::new, Path::to_path_buf));
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("stages.svg"), stage_plot_svg(&r))?;
            std::fs::write(dir.join("residuals.svg"), residual_plot_svg(&r, 20))?;
            println!("plots written to {}", dir.display());
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}
