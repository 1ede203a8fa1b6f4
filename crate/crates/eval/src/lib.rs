//! Experiment harness: episodes, benchmarks over planner variants, oracle
//! re-scoring of chosen actions and performance/compute Pareto reports.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod cli;
pub mod episode;
pub mod models;
pub mod pareto;
pub mod stats;
pub mod utility;
pub mod worlds;

use thiserror::Error;

pub use benchmark::{run_benchmark, BenchmarkConfig, BenchmarkResults, BenchmarkRow, EpisodeSummary, VariantConfig};
pub use episode::{run_episode, EpisodeLog, EpisodeOptions, EpisodeStatus, StepRecord};
pub use models::{LoadedModels, ModelPaths};
pub use pareto::{pareto_report, ParetoPoint, ParetoReport, VariantTrend};
pub use utility::{chosen_utility, UtilityStudy};
pub use worlds::{WorldInstance, WorldSource};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing artifacts: {}", .0.join(", "))]
    MissingArtifacts(Vec<String>),
    #[error("cannot read {path}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    World(#[from] nbv_core::grid_world::WorldError),
    #[error(transparent)]
    Sim(#[from] nbv_core::sim::SimError),
    #[error(transparent)]
    Plan(#[from] nbv_core::planning::PlanError),
    #[error(transparent)]
    Dataset(#[from] nbv_core::dataset::DatasetError),
    #[error(transparent)]
    Model(#[from] nbv_models::ModelError),
}

/// Reads a text file, naming the path in the error.
pub(crate) fn read_text(path: &std::path::Path) -> Result<String, EvalError> {
    std::fs::read_to_string(path).map_err(|source| EvalError::File {
        path: path.display().to_string(),
        source,
    })
}
