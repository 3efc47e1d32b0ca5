//! Preprocessing pipeline, training loop, dual-sensor inference, evaluation
//! and latency benchmarking.

mod bench;
mod config;
mod data;
mod infer;
mod optim;
mod pipeline;
mod train;

use std::path::PathBuf;

use thiserror::Error;

pub use bench::{bench, latency_stats, time_runs, BenchMode, LatencyReport};
pub use config::{BenchConfig, PipelineConfig, SchedulerConfig, SynthConfig, TrainConfig};
pub use data::{
    load_sample, prepare_samples, regroup_labels, sequence_seed, write_synth_dataset, DatasetManifest, Sample,
    ScanEntry, SynthDatasetSpec, GROUND_LANE_REST, TEST_SEQUENCE,
};
pub use infer::{evaluate, infer_dual, infer_images, point_labels, DualPrediction, EvalReport};
pub use optim::{Adam, StepScheduler};
pub use pipeline::{preprocess, preprocess_pair, PreprocessStats};
pub use train::{train, TrainOutcome};

use crate::dataset::DatasetError;
use crate::geometry::GeometryError;
use crate::objectives::ObjectiveError;
use crate::projection::ProjectionError;
use crate::segnet::SegNetError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Model(#[from] SegNetError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset is empty: {0}")]
    EmptyDataset(String),
    #[error("loss became non-finite ({loss}) at epoch index {epoch}, batch index {batch}")]
    DivergenceDetected { epoch: usize, batch: usize, loss: f64 },
    #[error("io on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }

    /// Whether the error stems from user input (bad files, bad config)
    /// rather than a fault in the program.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, HarnessError::Tensor(_) | HarnessError::DivergenceDetected { .. })
    }
}
