//! Sampling-based local next-best-view planning with a frontier fallback.

pub mod frontier;
pub mod gain;
pub mod planner;
pub mod reach;

use thiserror::Error;

use crate::sim::SimError;

pub use frontier::{cluster_frontiers, frontier_cells, global_frontier_plan, GlobalPlan};
pub use gain::{compute_gain, optimize_orientation, ViewStencil};
pub use planner::{
    candidate_cost, detect_local_minimum, local_candidates, plan_step, sample_uniform, select_nbv, Candidate,
    CandidateSource, GainMode, GainPredictor, LocalCandidates, LocalMinimumMonitor, PlanOutcome, PlannerConfig,
    PlannerModels, PlannerRng, PlannerState, PoseProposer, Proposal, SamplerKind,
};
pub use reach::{local_distance_field, reachable_path, DistanceField, InflationKernel, TraversabilityMap};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("infeasible pose: {0}")]
    InfeasiblePose(String),
    #[error("no reachable free cell to sample from")]
    SamplingExhausted,
    #[error("no candidates to select from")]
    NoCandidate,
    #[error("exploration complete: no local gain and no reachable frontier")]
    ExplorationComplete,
    #[error("planner configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}
