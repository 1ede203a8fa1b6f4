use std::collections::HashSet;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid_world::{Cell, GridView};
use crate::planning::frontier::global_frontier_plan;
use crate::planning::gain::{compute_gain, has_positive_gain, optimize_orientation_with, yaw_bin};
use crate::planning::reach::{local_distance_field, DistanceField, TraversabilityMap};
use crate::planning::PlanError;
use crate::sim::{angle_diff, extract_local_map, traversal_time, LocalMap, Pose, RobotModel, SensorModel, SimState};

/// Random stream used by planners and learned samplers.
pub type PlannerRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    Raycast,
    LearnedMlp,
    LearnedCnn,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Uniform,
    Cvae,
    Imitation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    Uniform,
    Cvae,
    Imitation,
    Frontier,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub n_samples: usize,
    pub gain_mode: GainMode,
    pub sampler: SamplerKind,
    pub yaw_bins: usize,
    /// Redraw budget for infeasible learned samples; `None` means 10 x N.
    pub max_resample_attempts: Option<usize>,
    /// Consecutive actions without new observations before the global
    /// planner takes over.
    pub local_minimum_actions: u32,
    /// Score ray-cast candidates on several threads.
    pub parallel_scoring: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            n_samples: 10,
            gain_mode: GainMode::Raycast,
            sampler: SamplerKind::Uniform,
            yaw_bins: 16,
            max_resample_attempts: None,
            local_minimum_actions: 5,
            parallel_scoring: false,
        }
    }
}

impl PlannerConfig {
    pub fn resample_budget(&self) -> usize {
        self.max_resample_attempts.unwrap_or(10 * self.n_samples)
    }

    pub fn validate(&self, models: &PlannerModels) -> Result<(), PlanError> {
        if self.n_samples == 0 {
            return Err(PlanError::Config("n_samples must be at least 1".into()));
        }
        if self.yaw_bins < 4 {
            return Err(PlanError::Config("yaw_bins must be at least 4".into()));
        }
        match self.sampler {
            SamplerKind::Uniform => {}
            SamplerKind::Cvae if models.cvae.is_none() => {
                return Err(PlanError::Config("cvae sampler requires a cvae model".into()))
            }
            SamplerKind::Imitation if models.imitation.is_none() => {
                return Err(PlanError::Config(
                    "imitation sampler requires an imitation model".into(),
                ))
            }
            _ => {}
        }
        match self.gain_mode {
            GainMode::LearnedMlp if models.gain_mlp.is_none() => {
                Err(PlanError::Config("learned_mlp gains require a gain_mlp model".into()))
            }
            GainMode::LearnedCnn if models.gain_cnn.is_none() => {
                Err(PlanError::Config("learned_cnn gains require a gain_cnn model".into()))
            }
            GainMode::Joint if self.sampler != SamplerKind::Cvae => {
                Err(PlanError::Config("joint gains require the cvae sampler".into()))
            }
            _ => Ok(()),
        }
    }
}

/// A scored viewpoint. `pose` is in the world frame, `path` in global cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub pose: Pose,
    pub gain: f64,
    pub cost: f64,
    pub path: Vec<Cell>,
    pub source: CandidateSource,
}

impl Candidate {
    pub fn utility(&self) -> f64 {
        self.gain / self.cost
    }
}

/// A viewpoint proposed by a learned sampler, optionally with its own gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub pose: Pose,
    pub gain: Option<f64>,
}

/// Learned source of candidate poses.
pub trait PoseProposer: Send + Sync {
    fn propose(&self, local: &LocalMap, n: usize, rng: &mut PlannerRng) -> Vec<Proposal>;

    /// Deterministic proposers are not redrawn after an infeasible output.
    fn is_stochastic(&self) -> bool {
        true
    }
}

/// Learned estimate of the visible-unknown count of poses.
pub trait GainPredictor: Send + Sync {
    fn predict(&self, local: &LocalMap, poses: &[Pose]) -> Vec<f64>;
}

#[derive(Clone, Copy, Default)]
pub struct PlannerModels<'a> {
    pub cvae: Option<&'a dyn PoseProposer>,
    pub imitation: Option<&'a dyn PoseProposer>,
    pub gain_mlp: Option<&'a dyn GainPredictor>,
    pub gain_cnn: Option<&'a dyn GainPredictor>,
}

/// Counts consecutive actions that observed nothing new.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalMinimumMonitor {
    pub consecutive_zero_gain_actions: u32,
    pub threshold: u32,
}

impl Default for LocalMinimumMonitor {
    fn default() -> Self {
        Self::new(5)
    }
}

impl LocalMinimumMonitor {
    pub fn new(threshold: u32) -> Self {
        Self {
            consecutive_zero_gain_actions: 0,
            threshold,
        }
    }

    pub fn record(&mut self, newly_observed: usize) {
        if newly_observed > 0 {
            self.consecutive_zero_gain_actions = 0;
        } else {
            self.consecutive_zero_gain_actions += 1;
        }
    }

    pub fn triggered(&self) -> bool {
        self.consecutive_zero_gain_actions >= self.threshold
    }
}

/// Per-episode planner memory.
#[derive(Debug, Clone, Default)]
pub struct PlannerState {
    pub monitor: LocalMinimumMonitor,
    /// Frontier cells whose visit observed nothing; skipped by the global planner.
    pub frontier_blacklist: HashSet<Cell>,
    pending_cluster: Option<Vec<Cell>>,
}

impl PlannerState {
    pub fn new(config: &PlannerConfig) -> Self {
        Self {
            monitor: LocalMinimumMonitor::new(config.local_minimum_actions),
            ..Self::default()
        }
    }

    /// Feeds back the outcome of executing the last plan.
    pub fn record_step(&mut self, newly_observed: usize) {
        self.monitor.record(newly_observed);
        if let Some(cluster) = self.pending_cluster.take() {
            if newly_observed == 0 {
                self.frontier_blacklist.extend(cluster);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub chosen: Candidate,
    /// Wall-clock seconds spent inside `plan_step`.
    pub compute_time: f64,
    pub global: bool,
    pub candidates: Vec<Candidate>,
    /// Index of `chosen` in `candidates`; `None` for global plans.
    pub chosen_index: Option<usize>,
    /// Learned samples rejected as infeasible.
    pub infeasible_draws: usize,
    /// Candidates filled in by uniform sampling after learned draws ran out.
    pub backfilled: usize,
}

/// Cost of reaching a pose: traversal time, floored at one cell of travel.
pub fn candidate_cost(path_length: f64, delta_yaw: f64, robot: &RobotModel, resolution: f64) -> f64 {
    let t = traversal_time(path_length, delta_yaw, robot).unwrap_or(f64::INFINITY);
    t.max(resolution / robot.v_max)
}

/// Index of the highest gain/cost candidate; ties go to the lowest index.
pub fn select_nbv(candidates: &[Candidate]) -> Result<usize, PlanError> {
    if candidates.is_empty() {
        return Err(PlanError::NoCandidate);
    }
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate().skip(1) {
        let b = &candidates[best];
        // gain_i / cost_i > gain_b / cost_b with positive costs.
        if c.gain * b.cost > b.gain * c.cost {
            best = i;
        }
    }
    Ok(best)
}

fn sampleable(field: &DistanceField, trav: &TraversabilityMap, c: Cell) -> bool {
    field.is_reachable(c) && (trav.is_traversable(c) || c == field.source())
}

/// Uniformly random reachable cell center with ray-cast orientation.
pub fn sample_uniform(
    local: &LocalMap,
    field: &DistanceField,
    sensor: &SensorModel,
    yaw_bins: usize,
    rng: &mut PlannerRng,
) -> Result<Pose, PlanError> {
    let cells = field.reached();
    if cells.is_empty() {
        return Err(PlanError::SamplingExhausted);
    }
    let c = cells[rng.random_range(0..cells.len())];
    let center = local.cell_center(c);
    let (yaw, _) = optimize_orientation_with(local, center, sensor, yaw_bins, &mut Vec::new())?;
    Ok(Pose::new(center[0], center[1], yaw))
}

/// True when no reachable cell has a heading with positive gain, or the
/// monitor has seen too many actions without new observations.
pub fn detect_local_minimum(
    local: &LocalMap,
    field: &DistanceField,
    monitor: &LocalMinimumMonitor,
    sensor: &SensorModel,
    yaw_bins: usize,
) -> bool {
    if monitor.triggered() {
        return true;
    }
    let mut scratch = Vec::new();
    !field
        .reached()
        .iter()
        .any(|&c| has_positive_gain(local, c, sensor, yaw_bins, &mut scratch))
}

struct Draw {
    cell: Cell,
    yaw: Option<f64>,
    gain: Option<f64>,
    source: CandidateSource,
}

/// One local planning iteration: sample, score, select. Falls back to the
/// frontier planner in local minima.
pub fn plan_step(
    state: &SimState,
    pstate: &mut PlannerState,
    config: &PlannerConfig,
    models: &PlannerModels,
    rng: &mut PlannerRng,
) -> Result<PlanOutcome, PlanError> {
    let started = Instant::now();
    config.validate(models)?;
    let sensor = state.config.sensor;
    let robot = state.config.robot;
    let local = extract_local_map(state);
    let res = local.resolution();
    let (trav, field) = local_distance_field(&local, &robot);

    if detect_local_minimum(&local, &field, &pstate.monitor, &sensor, config.yaw_bins) {
        let plan = global_frontier_plan(
            &state.belief,
            &state.robot,
            &robot,
            &sensor,
            config.yaw_bins,
            &pstate.frontier_blacklist,
        )
        .ok_or(PlanError::ExplorationComplete)?;
        let dyaw = angle_diff(plan.goal.yaw, state.robot.yaw);
        let cost = candidate_cost(plan.path_length, dyaw, &robot, res);
        pstate.pending_cluster = Some(plan.cluster);
        let chosen = Candidate {
            pose: plan.goal,
            gain: 0.0,
            cost,
            path: plan.path,
            source: CandidateSource::Frontier,
        };
        return Ok(PlanOutcome {
            chosen,
            compute_time: started.elapsed().as_secs_f64(),
            global: true,
            candidates: Vec::new(),
            chosen_index: None,
            infeasible_draws: 0,
            backfilled: 0,
        });
    }

    let mut batch = local_candidates(
        &local,
        &trav,
        &field,
        state.robot.yaw,
        &robot,
        &sensor,
        config,
        models,
        rng,
    )?;
    for c in &mut batch.candidates {
        c.path = c.path.iter().map(|&p| local.to_global(p)).collect();
    }
    let LocalCandidates {
        candidates,
        infeasible,
        backfilled,
    } = batch;
    let best = select_nbv(&candidates)?;
    Ok(PlanOutcome {
        chosen: candidates[best].clone(),
        compute_time: started.elapsed().as_secs_f64(),
        global: false,
        candidates,
        chosen_index: Some(best),
        infeasible_draws: infeasible,
        backfilled,
    })
}

/// Scored candidates of one local planning iteration. Paths are in the
/// local map's cells.
#[derive(Debug, Clone)]
pub struct LocalCandidates {
    pub candidates: Vec<Candidate>,
    pub infeasible: usize,
    pub backfilled: usize,
}

/// Draws and scores `config.n_samples` candidates on a local map: learned
/// samples first (infeasible ones redrawn within the budget), uniform
/// reachable cells for the remainder.
#[allow(clippy::too_many_arguments)]
pub fn local_candidates(
    local: &LocalMap,
    trav: &TraversabilityMap,
    field: &DistanceField,
    robot_yaw: f64,
    robot: &RobotModel,
    sensor: &SensorModel,
    config: &PlannerConfig,
    models: &PlannerModels,
    rng: &mut PlannerRng,
) -> Result<LocalCandidates, PlanError> {
    let reachable = field.reached();
    if reachable.is_empty() {
        return Err(PlanError::SamplingExhausted);
    }
    let n = config.n_samples;
    let mut draws: Vec<Draw> = Vec::with_capacity(n);
    let mut infeasible = 0;
    let proposer = match config.sampler {
        SamplerKind::Uniform => None,
        SamplerKind::Cvae => models.cvae.map(|p| (p, CandidateSource::Cvae)),
        SamplerKind::Imitation => models.imitation.map(|p| (p, CandidateSource::Imitation)),
    };
    if let Some((proposer, source)) = proposer {
        let budget = config.resample_budget();
        let mut attempts = 0;
        while draws.len() < n && attempts < budget {
            let want = (n - draws.len()).min(budget - attempts);
            attempts += want;
            let mut rejected = 0;
            for p in proposer.propose(local, want, rng).into_iter().take(want) {
                let cell = local.world_to_cell(p.pose.x, p.pose.y);
                if sampleable(field, trav, cell) {
                    draws.push(Draw {
                        cell,
                        yaw: Some(p.pose.yaw),
                        gain: p.gain,
                        source,
                    });
                } else {
                    rejected += 1;
                }
            }
            infeasible += rejected;
            if rejected > 0 && !proposer.is_stochastic() {
                break;
            }
        }
    }
    let backfilled = n - draws.len();
    for _ in 0..backfilled {
        draws.push(Draw {
            cell: reachable[rng.random_range(0..reachable.len())],
            yaw: None,
            gain: None,
            source: CandidateSource::Uniform,
        });
    }

    let poses = score_draws(local, &draws, config, models, sensor)?;
    let res = local.resolution();
    let candidates = draws
        .iter()
        .zip(poses)
        .map(|(d, (pose, gain))| Candidate {
            pose,
            gain,
            cost: candidate_cost(
                field.distance(d.cell).unwrap_or(0.0),
                angle_diff(pose.yaw, robot_yaw),
                robot,
                res,
            ),
            path: field.path_to(d.cell).unwrap_or_default(),
            source: d.source,
        })
        .collect();
    Ok(LocalCandidates {
        candidates,
        infeasible,
        backfilled,
    })
}

/// Resolves yaw and gain for every draw according to the gain mode.
fn score_draws(
    local: &LocalMap,
    draws: &[Draw],
    config: &PlannerConfig,
    models: &PlannerModels,
    sensor: &SensorModel,
) -> Result<Vec<(Pose, f64)>, PlanError> {
    let mut out: Vec<Option<(Pose, f64)>> = vec![None; draws.len()];
    let predictor = match config.gain_mode {
        GainMode::LearnedMlp => models.gain_mlp,
        GainMode::LearnedCnn => models.gain_cnn,
        _ => None,
    };
    let center = |d: &Draw| local.cell_center(d.cell);

    // Ray-cast scoring: orientation optimisation for draws without yaw,
    // direct gain otherwise. Joint-mode draws lacking a gain use it too.
    let raycast_idx: Vec<usize> = (0..draws.len())
        .filter(|&i| match config.gain_mode {
            GainMode::Raycast => true,
            GainMode::Joint => draws[i].gain.is_none(),
            _ => false,
        })
        .collect();
    let raycast_one = |d: &Draw, scratch: &mut Vec<f64>| -> Result<(Pose, f64), PlanError> {
        let c = center(d);
        match d.yaw {
            Some(yaw) => {
                let pose = Pose::new(c[0], c[1], yaw);
                Ok((pose, compute_gain(local, &pose, sensor)? as f64))
            }
            None => {
                let (yaw, g) = optimize_orientation_with(local, c, sensor, config.yaw_bins, scratch)?;
                Ok((Pose::new(c[0], c[1], yaw), g as f64))
            }
        }
    };
    if config.parallel_scoring && raycast_idx.len() > 1 {
        let threads = std::thread::available_parallelism()
            .map_or(1, |n| n.get())
            .min(raycast_idx.len());
        let chunk = raycast_idx.len().div_ceil(threads);
        let results: Vec<Result<Vec<(usize, (Pose, f64))>, PlanError>> = std::thread::scope(|s| {
            let handles: Vec<_> = raycast_idx
                .chunks(chunk)
                .map(|idx| {
                    s.spawn(|| {
                        let mut scratch = Vec::new();
                        idx.iter()
                            .map(|&i| raycast_one(&draws[i], &mut scratch).map(|r| (i, r)))
                            .collect::<Result<Vec<_>, _>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("scoring thread panicked"))
                .collect()
        });
        for r in results {
            for (i, v) in r? {
                out[i] = Some(v);
            }
        }
    } else {
        let mut scratch = Vec::new();
        for &i in &raycast_idx {
            out[i] = Some(raycast_one(&draws[i], &mut scratch)?);
        }
    }

    if config.gain_mode == GainMode::Joint {
        for (i, d) in draws.iter().enumerate() {
            if let (Some(g), Some(yaw)) = (d.gain, d.yaw) {
                let c = center(d);
                out[i] = Some((Pose::new(c[0], c[1], yaw), g.max(0.0)));
            }
        }
    }

    if let Some(predictor) = predictor {
        // One batch: every yaw bin for unoriented draws, one pose otherwise.
        let mut batch = Vec::new();
        let mut spans = Vec::with_capacity(draws.len());
        for d in draws {
            let c = center(d);
            let start = batch.len();
            match d.yaw {
                Some(yaw) => batch.push(Pose::new(c[0], c[1], yaw)),
                None => batch.extend((0..config.yaw_bins).map(|k| Pose::new(c[0], c[1], yaw_bin(k, config.yaw_bins)))),
            }
            spans.push(start..batch.len());
        }
        let gains = predictor.predict(local, &batch);
        for (i, span) in spans.into_iter().enumerate() {
            let mut best = span.start;
            for j in span.clone() {
                if gains[j] > gains[best] {
                    best = j;
                }
            }
            out[i] = Some((batch[best], gains[best].max(0.0)));
        }
    }

    out.into_iter()
        .map(|o| o.ok_or_else(|| PlanError::Config("candidate left unscored".into())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(gain: f64, cost: f64) -> Candidate {
        Candidate {
            pose: Pose::new(0.0, 0.0, 0.0),
            gain,
            cost,
            path: Vec::new(),
            source: CandidateSource::Uniform,
        }
    }

    #[test]
    fn select_examples() {
        assert_eq!(select_nbv(&[cand(10.0, 2.0), cand(10.0, 5.0)]).unwrap(), 0);
        assert_eq!(select_nbv(&[cand(1.0, 2.0)]).unwrap(), 0);
        assert_eq!(
            select_nbv(&[cand(1.0, 2.0), cand(3.0, 2.0), cand(3.0, 2.0)]).unwrap(),
            1
        );
        assert!(matches!(select_nbv(&[]), Err(PlanError::NoCandidate)));
    }

    #[test]
    fn monitor_resets_on_observation() {
        let mut m = LocalMinimumMonitor::default();
        for _ in 0..4 {
            m.record(0);
        }
        assert!(!m.triggered());
        m.record(3);
        assert_eq!(m.consecutive_zero_gain_actions, 0);
        for _ in 0..5 {
            m.record(0);
        }
        assert!(m.triggered());
    }

    #[test]
    fn cost_floor_applies() {
        let r = RobotModel::default();
        assert_eq!(candidate_cost(0.0, 0.0, &r, 0.2), 0.2);
        assert_eq!(candidate_cost(2.0, 0.0, &r, 0.2), 2.0);
    }

    #[test]
    fn config_validation() {
        let models = PlannerModels::default();
        let mut cfg = PlannerConfig::default();
        assert!(cfg.validate(&models).is_ok());
        cfg.sampler = SamplerKind::Cvae;
        assert!(matches!(cfg.validate(&models), Err(PlanError::Config(_))));
        cfg.sampler = SamplerKind::Uniform;
        cfg.gain_mode = GainMode::Joint;
        assert!(matches!(cfg.validate(&models), Err(PlanError::Config(_))));
        cfg.gain_mode = GainMode::Raycast;
        cfg.yaw_bins = 2;
        assert!(cfg.validate(&models).is_err());
    }
}
