//! Multi-drive radar pose alignment.
//!
//! Registers 2D radar point clouds between fleet drives by exhaustive
//! grid-based correlation, fuses the resulting relative constraints with
//! noisy GNSS priors in a robust pose graph, and renders the aligned
//! drives into a global radar occupancy map with quantitative quality
//! metrics.
//!
//! The crate is organized along the pipeline stages:
//!
//! * [`geometry`] — planar rigid-body math and trajectory interpolation
//! * [`fleet`] — deterministic synthetic highway fleet generator
//! * [`dataset_io`] — JSONL dataset serialization
//! * [`sampling`] — "what-to-compare" pose pair selection
//! * [`correlation`] — grid-based scan correlation plus an ICP baseline
//! * [`posegraph`] — robust Levenberg-Marquardt pose-graph solver
//! * [`mapgen`] — global cloud aggregation and occupancy rendering
//! * [`eval`] — map entropy, pose RMSE and lateral polyline metrics
//! * [`pipeline`] — end-to-end orchestration used by the CLI

pub mod correlation;
pub mod dataset_io;
pub mod eval;
pub mod fleet;
pub mod geometry;
pub mod mapgen;
pub mod pipeline;
pub mod posegraph;
pub mod sampling;
pub mod seeding;
pub mod sparse;

use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("interpolation time {t} outside trajectory range [{first}, {last}]")]
    TimeOutOfRange { t: f64, first: f64, last: f64 },

    #[error("trajectory '{0}' has fewer than 2 samples")]
    DegenerateTrajectory(String),

    #[error("radar scan is empty")]
    EmptyScan,

    #[error("correlation volume is flat (zero standard deviation); pair must be discarded")]
    DegenerateCorrelation,

    #[error("{file}:{line}: field '{field}': {message}")]
    Parse {
        file: PathBuf,
        line: usize,
        field: String,
        message: String,
    },

    #[error("pose graph construction: {0}")]
    GraphConstruction(String),

    #[error("non-finite residual at initialization in factor {factor}: {detail}")]
    NonFiniteResidual { factor: usize, detail: String },

    #[error("mean map entropy undefined: no point has enough neighbors")]
    UndefinedMme,

    #[error("lateral evaluation: generated and truth polylines never overlap the reference line")]
    EmptyLateralOverlap,

    #[error("mismatched inputs: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
