use std::io;

use crate::geometry::Se3Pose;

/// Errors produced by the alignment toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("rotation angle {angle} rad is too close to pi for a unique logarithm")]
    AngleNearPi { angle: f64 },
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("inverse depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("image of {width}x{height} is too small (need at least {min}x{min})")]
    ImageTooSmall { width: usize, height: usize, min: usize },
    #[error("sample coordinate ({u}, {v}) is outside the image")]
    OutOfBounds { u: f64, v: f64 },
    #[error("no features provided")]
    NoFeatures,
    #[error("no masked pixel projects inside the target image")]
    AllInvalid,
    #[error("damped normal equations are singular (condition number {condition:e})")]
    SingularSystem {
        condition: f64,
        /// Best pose found before the failure, when raised from a solver loop.
        best_pose: Option<Box<Se3Pose>>,
    },
    #[error("correspondence geometry is degenerate")]
    DegenerateGeometry,
    #[error("need at least {needed} converged correspondences, got {got}")]
    TooFewCorrespondences { needed: usize, got: usize },
    #[error("camera is below the terrain surface")]
    CameraBelowTerrain,
    #[error("no acceptable pose pair after {0} attempts")]
    RejectionBudgetExceeded(usize),
    #[error("only {available} valid depth pixels inside the border, need {needed}")]
    InsufficientValidDepth { available: usize, needed: usize },
    #[error("every feature projects outside the image")]
    AllOutOfBounds,
    #[error("depth map has no valid pixel")]
    NoValidDepth,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
