//! One exploration episode and its JSON-lines log.

use std::io::{BufRead, Write};
use std::time::Instant;

use nbv_core::planning::{
    compute_gain, plan_step, CandidateSource, GainMode, PlanError, PlannerConfig, PlannerModels, PlannerRng,
    PlannerState, SamplerKind,
};
use nbv_core::sim::{coverage, extract_local_map};
use nbv_core::{Pose, SimConfig, SimState};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::worlds::WorldInstance;
use crate::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Complete,
    BudgetExhausted,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeOptions {
    pub step_budget: usize,
    /// Fraction of observable cells at which exploration counts as complete.
    pub completion_coverage: f64,
    pub sim: SimConfig,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        Self {
            step_budget: 500,
            completion_coverage: 0.99,
            sim: SimConfig::default(),
        }
    }
}

/// State after executing one planned action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Cumulative simulated time (s).
    pub sim_time: f64,
    /// Traversal time of this action (s).
    pub duration: f64,
    /// Wall-clock seconds spent in the planner for this action.
    pub compute_time: f64,
    pub coverage: f64,
    /// Cumulative distance (m).
    pub distance: f64,
    pub pose: Pose,
    pub sampler: SamplerKind,
    pub gain_mode: GainMode,
    pub global: bool,
    pub source: CandidateSource,
    /// Gain the planner used to rank the action.
    pub planned_gain: f64,
    /// Ray-cast gain of the action on the belief it was planned on; `None`
    /// for global plans.
    pub true_gain: Option<f64>,
    pub cost: f64,
    pub newly_observed: usize,
}

impl StepRecord {
    pub fn true_utility(&self) -> Option<f64> {
        self.true_gain.map(|g| g / self.cost)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub world: String,
    pub start: Pose,
    pub seed: u64,
    pub planner: PlannerConfig,
    pub options: EpisodeOptions,
    pub initial_coverage: f64,
    pub steps: Vec<StepRecord>,
    pub status: EpisodeStatus,
    pub failure: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogLine {
    Episode {
        world: String,
        start: Pose,
        seed: u64,
        planner: PlannerConfig,
        options: EpisodeOptions,
        initial_coverage: f64,
    },
    Step(StepRecord),
    End {
        status: EpisodeStatus,
        failure: Option<String>,
    },
}

impl EpisodeLog {
    pub fn final_coverage(&self) -> f64 {
        self.steps.last().map_or(self.initial_coverage, |s| s.coverage)
    }

    pub fn total_time(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.sim_time)
    }

    pub fn total_distance(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.distance)
    }

    pub fn total_compute(&self) -> f64 {
        self.steps.iter().map(|s| s.compute_time).sum()
    }

    pub fn mean_compute(&self) -> Option<f64> {
        (!self.steps.is_empty()).then(|| self.total_compute() / self.steps.len() as f64)
    }

    /// Simulated time at which coverage first reached `target`.
    pub fn time_to_coverage(&self, target: f64) -> Option<f64> {
        if self.initial_coverage >= target {
            return Some(0.0);
        }
        self.steps.iter().find(|s| s.coverage >= target).map(|s| s.sim_time)
    }

    /// Mean oracle utility of the locally planned actions.
    pub fn mean_true_utility(&self) -> Option<f64> {
        let u: Vec<f64> = self.steps.iter().filter_map(StepRecord::true_utility).collect();
        (!u.is_empty()).then(|| u.iter().sum::<f64>() / u.len() as f64)
    }

    /// Sum of action times plus `gamma` times the summed planner compute.
    pub fn objective(&self, gamma: f64) -> f64 {
        self.steps.iter().map(|s| s.duration).sum::<f64>() + gamma * self.total_compute()
    }

    /// Copy with wall-clock fields zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        let mut log = self.clone();
        for s in &mut log.steps {
            s.compute_time = 0.0;
        }
        log
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), EvalError> {
        let header = LogLine::Episode {
            world: self.world.clone(),
            start: self.start,
            seed: self.seed,
            planner: self.planner,
            options: self.options,
            initial_coverage: self.initial_coverage,
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for s in &self.steps {
            serde_json::to_writer(&mut out, &LogLine::Step(s.clone()))?;
            out.write_all(b"\n")?;
        }
        let end = LogLine::End {
            status: self.status,
            failure: self.failure.clone(),
        };
        serde_json::to_writer(&mut out, &end)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, EvalError> {
        let mut log: Option<Self> = None;
        let mut ended = false;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |m: &str| EvalError::Config(format!("episode log line {}: {m}", i + 1));
            if ended {
                return Err(bad("content after the end record"));
            }
            match serde_json::from_str::<LogLine>(&line)? {
                LogLine::Episode {
                    world,
                    start,
                    seed,
                    planner,
                    options,
                    initial_coverage,
                } => {
                    if log.is_some() {
                        return Err(bad("second episode header"));
                    }
                    log = Some(Self {
                        world,
                        start,
                        seed,
                        planner,
                        options,
                        initial_coverage,
                        steps: Vec::new(),
                        status: EpisodeStatus::Failed,
                        failure: None,
                    });
                }
                LogLine::Step(s) => log.as_mut().ok_or_else(|| bad("step before header"))?.steps.push(s),
                LogLine::End { status, failure } => {
                    let l = log.as_mut().ok_or_else(|| bad("end before header"))?;
                    l.status = status;
                    l.failure = failure;
                    ended = true;
                }
            }
        }
        match log {
            Some(l) if ended => Ok(l),
            _ => Err(EvalError::Config("episode log has no header or end record".into())),
        }
    }
}

/// Alternates planning and execution until the completion coverage is
/// reached, the step budget runs out or the planner reports nothing left to
/// explore. Model/config mismatches are errors before the first step; later
/// failures end the episode with `Failed`.
pub fn run_episode(
    world: &WorldInstance,
    observable: &[bool],
    planner: &PlannerConfig,
    models: &PlannerModels,
    seed: u64,
    options: &EpisodeOptions,
) -> Result<EpisodeLog, EvalError> {
    planner.validate(models)?;
    if !(options.completion_coverage > 0.0 && options.completion_coverage <= 1.0) {
        return Err(EvalError::Config("completion coverage must be in (0, 1]".into()));
    }
    let mut state = SimState::new(world.grid.clone(), world.start, options.sim)?;
    state.scan_in_place()?;
    let mut pstate = PlannerState::new(planner);
    let mut rng = PlannerRng::seed_from_u64(seed);
    let sensor = options.sim.sensor;
    let mut log = EpisodeLog {
        world: world.name.clone(),
        start: world.start,
        seed,
        planner: *planner,
        options: *options,
        initial_coverage: coverage(&state.belief, observable),
        steps: Vec::new(),
        status: EpisodeStatus::BudgetExhausted,
        failure: None,
    };
    let mut cov = log.initial_coverage;
    for step in 0..options.step_budget {
        if cov >= options.completion_coverage {
            break;
        }
        let started = Instant::now();
        let planned = plan_step(&state, &mut pstate, planner, models, &mut rng);
        let compute_time = started.elapsed().as_secs_f64();
        let out = match planned {
            Ok(o) => o,
            Err(PlanError::ExplorationComplete) => {
                log.status = EpisodeStatus::Failed;
                log.failure = Some(format!("planner found nothing left to explore at coverage {cov:.4}"));
                return Ok(log);
            }
            Err(e) => {
                log.status = EpisodeStatus::Failed;
                log.failure = Some(e.to_string());
                return Ok(log);
            }
        };
        let true_gain = if out.global {
            None
        } else {
            let local = extract_local_map(&state);
            Some(f64::from(compute_gain(&local, &out.chosen.pose, &sensor)?))
        };
        let outcome = match state.step(&out.chosen.pose, &out.chosen.path) {
            Ok(o) => o,
            Err(e) => {
                log.status = EpisodeStatus::Failed;
                log.failure = Some(e.to_string());
                return Ok(log);
            }
        };
        pstate.record_step(outcome.newly_observed);
        cov = coverage(&state.belief, observable);
        log.steps.push(StepRecord {
            step,
            sim_time: state.elapsed_time,
            duration: outcome.duration,
            compute_time,
            coverage: cov,
            distance: state.distance_traveled,
            pose: state.robot,
            sampler: planner.sampler,
            gain_mode: planner.gain_mode,
            global: out.global,
            source: out.chosen.source,
            planned_gain: out.chosen.gain,
            true_gain,
            cost: out.chosen.cost,
            newly_observed: outcome.newly_observed,
        });
    }
    if cov >= options.completion_coverage {
        log.status = EpisodeStatus::Complete;
    }
    Ok(log)
}
