//! Ground-truth metrics, the stage-wise benchmark, debug overlays, plots and
//! the command line front end.

pub mod benchmark;
pub mod cli;
mod metrics;
mod overlay;
pub mod plot;

pub use benchmark::{
    evaluate_pair, run_benchmark, summarize, BenchmarkConfig, BenchmarkReport, PairOutcome, StageSummary, Stats,
};
pub use metrics::{correspondence_error, epe_3d, pixel_error, pose_error, ErrorReport, PixelError, Stage};
pub use overlay::{blend_overlay, error_lines};
