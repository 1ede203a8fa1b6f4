//! Benchmarks: every planner variant on every world, start pose and repeat,
//! aggregated per (variant, N).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use nbv_core::dataset::derive_seed;
use nbv_core::planning::{GainMode, PlannerConfig, SamplerKind};
use nbv_core::{Pose, SimConfig};
use serde::{Deserialize, Serialize};

use crate::episode::{run_episode, EpisodeLog, EpisodeOptions, EpisodeStatus};
use crate::models::{LoadedModels, ModelPaths};
use crate::stats::{mean_std, target_label};
use crate::worlds::{load_worlds, WorldInstance, WorldSource};
use crate::{read_text, EvalError};

/// A planner family evaluated at several sample counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub name: String,
    pub sampler: SamplerKind,
    pub gain_mode: GainMode,
    pub n_samples: Vec<usize>,
    #[serde(default)]
    pub yaw_bins: Option<usize>,
}

impl VariantConfig {
    pub fn planner(&self, n: usize) -> PlannerConfig {
        let mut p = PlannerConfig {
            n_samples: n,
            sampler: self.sampler,
            gain_mode: self.gain_mode,
            // Timing comparisons are single-threaded.
            parallel_scoring: false,
            ..PlannerConfig::default()
        };
        if let Some(b) = self.yaw_bins {
            p.yaw_bins = b;
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub variants: Vec<VariantConfig>,
    pub worlds: Vec<WorldSource>,
    pub repeats: usize,
    pub starts_per_world: usize,
    pub step_budget: usize,
    pub completion_coverage: f64,
    pub coverage_targets: Vec<f64>,
    /// Weight of planner compute time in the reported objective.
    pub gamma: f64,
    /// Episode workers; each episode plans on one thread.
    pub threads: usize,
    pub models: ModelPaths,
    pub sim: SimConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            variants: Vec::new(),
            worlds: Vec::new(),
            repeats: 3,
            starts_per_world: 1,
            step_budget: 500,
            completion_coverage: 0.99,
            coverage_targets: vec![0.9, 0.99],
            gamma: 0.0,
            threads: 1,
            models: ModelPaths::default(),
            sim: SimConfig::default(),
        }
    }
}

impl BenchmarkConfig {
    /// Parses a TOML file; relative model and world paths are taken from
    /// the file's directory.
    pub fn from_file(path: &Path) -> Result<Self, EvalError> {
        let mut cfg: Self = toml::from_str(&read_text(path)?)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        cfg.models.resolve_relative_to(dir);
        for w in &mut cfg.worlds {
            if let WorldSource::File { path, .. } = w {
                if path.is_relative() {
                    *path = dir.join(&*path);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::Config(m.into()));
        if self.repeats == 0 || self.starts_per_world == 0 {
            return bad("repeats and starts_per_world must be at least 1");
        }
        if self.variants.is_empty() || self.worlds.is_empty() {
            return bad("a benchmark needs at least one variant and one world");
        }
        if self
            .variants
            .iter()
            .any(|v| v.n_samples.is_empty() || v.n_samples.contains(&0))
        {
            return bad("every variant needs a non-empty list of positive sample counts");
        }
        if self.coverage_targets.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
            return bad("coverage targets must be in (0, 1]");
        }
        if !(self.completion_coverage > 0.0 && self.completion_coverage <= 1.0) {
            return bad("completion_coverage must be in (0, 1]");
        }
        if !(self.gamma >= 0.0) {
            return bad("gamma must be non-negative");
        }
        let mut names: Vec<&str> = self.variants.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("variant names must be unique");
        }
        Ok(())
    }

    pub fn planners(&self) -> Vec<PlannerConfig> {
        self.variants
            .iter()
            .flat_map(|v| v.n_samples.iter().map(|&n| v.planner(n)))
            .collect()
    }
}

/// One episode of a benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub variant: String,
    pub n_samples: usize,
    pub world: String,
    pub start_index: usize,
    pub repeat: usize,
    pub seed: u64,
    pub status: EpisodeStatus,
    pub steps: usize,
    pub final_coverage: f64,
    pub sim_time: f64,
    pub distance: f64,
    pub true_utility: Option<f64>,
    /// Time to each configured coverage target, in config order.
    pub time_to_target: Vec<Option<f64>>,
    pub compute_total: f64,
    pub compute_per_step: Option<f64>,
    pub objective: f64,
}

impl EpisodeSummary {
    fn from_log(log: &EpisodeLog, variant: &str, start_index: usize, repeat: usize, cfg: &BenchmarkConfig) -> Self {
        Self {
            variant: variant.to_string(),
            n_samples: log.planner.n_samples,
            world: log.world.clone(),
            start_index,
            repeat,
            seed: log.seed,
            status: log.status,
            steps: log.steps.len(),
            final_coverage: log.final_coverage(),
            sim_time: log.total_time(),
            distance: log.total_distance(),
            true_utility: log.mean_true_utility(),
            time_to_target: cfg.coverage_targets.iter().map(|&t| log.time_to_coverage(t)).collect(),
            compute_total: log.total_compute(),
            compute_per_step: log.mean_compute(),
            objective: log.objective(cfg.gamma),
        }
    }
}

/// Aggregate of one (variant, N) cell. Times exclude episodes that did not
/// reach the respective coverage.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub variant: String,
    pub sampler: SamplerKind,
    pub gain_mode: GainMode,
    pub n_samples: usize,
    pub episodes: usize,
    pub completed: usize,
    pub completion_time: Option<(f64, f64)>,
    pub distance: Option<(f64, f64)>,
    pub steps: Option<(f64, f64)>,
    pub true_utility: Option<(f64, f64)>,
    /// Per coverage target: (target, mean/std time, episodes reaching it).
    pub time_to_target: Vec<(f64, Option<(f64, f64)>, usize)>,
    pub compute_per_step: Option<(f64, f64)>,
    pub compute_per_episode: Option<(f64, f64)>,
    pub objective: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkResults {
    pub coverage_targets: Vec<f64>,
    pub episodes: Vec<EpisodeSummary>,
    pub rows: Vec<BenchmarkRow>,
}

struct Job {
    variant: usize,
    n: usize,
    world: usize,
    start: usize,
    repeat: usize,
}

/// Runs every (variant, N, world, start, repeat) episode. Episode seeds
/// depend only on (world, start, repeat), so variants see the same random
/// streams. Output order is independent of scheduling.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkResults, EvalError> {
    cfg.validate()?;
    let models = LoadedModels::load_for(&cfg.models, &cfg.planners())?;
    let worlds = load_worlds(&cfg.worlds, &cfg.sim.robot)?;
    let starts: Vec<Vec<Pose>> = worlds
        .iter()
        .enumerate()
        .map(|(i, w)| {
            w.start_poses(
                cfg.starts_per_world,
                derive_seed(cfg.seed, i as u64, u64::MAX),
                &cfg.sim.robot,
            )
        })
        .collect();
    let observable: Vec<Vec<Vec<bool>>> = worlds
        .iter()
        .zip(&starts)
        .map(|(w, ss)| {
            ss.iter()
                .map(|&s| WorldInstance { start: s, ..w.clone() }.observable(&cfg.sim))
                .collect()
        })
        .collect();

    let mut jobs = Vec::new();
    for (vi, v) in cfg.variants.iter().enumerate() {
        for &n in &v.n_samples {
            for (wi, ss) in starts.iter().enumerate() {
                for si in 0..ss.len() {
                    for r in 0..cfg.repeats {
                        jobs.push(Job {
                            variant: vi,
                            n,
                            world: wi,
                            start: si,
                            repeat: r,
                        });
                    }
                }
            }
        }
    }
    let options = EpisodeOptions {
        step_budget: cfg.step_budget,
        completion_coverage: cfg.completion_coverage,
        sim: cfg.sim,
    };
    let next = AtomicUsize::new(0);
    let threads = cfg.threads.clamp(1, jobs.len().max(1));
    let planner_models = models.planner_models();
    let run_job = |job: &Job| -> Result<EpisodeSummary, EvalError> {
        let v = &cfg.variants[job.variant];
        let world = WorldInstance {
            start: starts[job.world][job.start],
            ..worlds[job.world].clone()
        };
        let seed = derive_seed(cfg.seed, (job.world as u64) << 32 | job.start as u64, job.repeat as u64);
        let log = run_episode(
            &world,
            &observable[job.world][job.start],
            &v.planner(job.n),
            &planner_models,
            seed,
            &options,
        )?;
        log::info!(
            "{} N={} {} start {} repeat {}: {:?} coverage {:.4} in {:.1} s",
            v.name,
            job.n,
            world.name,
            job.start,
            job.repeat,
            log.status,
            log.final_coverage(),
            log.total_time()
        );
        Ok(EpisodeSummary::from_log(&log, &v.name, job.start, job.repeat, cfg))
    };
    let mut results: Vec<(usize, Result<EpisodeSummary, EvalError>)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|_| {
                s.spawn(|| {
                    let mut out = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= jobs.len() {
                            break;
                        }
                        out.push((i, run_job(&jobs[i])));
                    }
                    out
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("benchmark worker panicked"))
            .collect()
    });
    results.sort_by_key(|(i, _)| *i);
    let episodes = results.into_iter().map(|(_, r)| r).collect::<Result<Vec<_>, _>>()?;
    let rows = aggregate(cfg, &episodes);
    Ok(BenchmarkResults {
        coverage_targets: cfg.coverage_targets.clone(),
        episodes,
        rows,
    })
}

fn aggregate(cfg: &BenchmarkConfig, episodes: &[EpisodeSummary]) -> Vec<BenchmarkRow> {
    let mut groups: BTreeMap<(usize, usize), Vec<&EpisodeSummary>> = BTreeMap::new();
    for e in episodes {
        let vi = cfg
            .variants
            .iter()
            .position(|v| v.name == e.variant)
            .expect("known variant");
        groups.entry((vi, e.n_samples)).or_default().push(e);
    }
    groups
        .into_iter()
        .map(|((vi, n), eps)| {
            let v = &cfg.variants[vi];
            let col = |f: &dyn Fn(&EpisodeSummary) -> Option<f64>| -> Option<(f64, f64)> {
                mean_std(&eps.iter().filter_map(|e| f(e)).collect::<Vec<_>>())
            };
            let complete = |e: &EpisodeSummary| e.status == EpisodeStatus::Complete;
            BenchmarkRow {
                variant: v.name.clone(),
                sampler: v.sampler,
                gain_mode: v.gain_mode,
                n_samples: n,
                episodes: eps.len(),
                completed: eps.iter().filter(|e| complete(e)).count(),
                completion_time: col(&|e| complete(e).then_some(e.sim_time)),
                distance: col(&|e| complete(e).then_some(e.distance)),
                steps: col(&|e| complete(e).then_some(e.steps as f64)),
                true_utility: col(&|e| e.true_utility),
                time_to_target: cfg
                    .coverage_targets
                    .iter()
                    .enumerate()
                    .map(|(k, &t)| {
                        let times: Vec<f64> = eps.iter().filter_map(|e| e.time_to_target[k]).collect();
                        (t, mean_std(&times), times.len())
                    })
                    .collect(),
                compute_per_step: col(&|e| e.compute_per_step),
                compute_per_episode: col(&|e| Some(e.compute_total)),
                objective: col(&|e| Some(e.objective)),
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn pair(v: Option<(f64, f64)>) -> [String; 2] {
    [opt(v.map(|p| p.0)), opt(v.map(|p| p.1))]
}

fn tag<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|j| j.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Columns that carry wall-clock measurements or are derived from them
/// (Pareto membership depends on measured compute).
pub fn is_timing_column(name: &str) -> bool {
    name.starts_with("compute_") || name.starts_with("objective") || name == "pareto_optimal"
}

impl BenchmarkResults {
    /// Aggregate table, one row per (variant, N). Empty cells mean no
    /// episode contributed.
    pub fn write_rows_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = [
            "variant",
            "sampler",
            "gain_mode",
            "n_samples",
            "episodes",
            "completed",
            "completion_time_mean",
            "completion_time_std",
            "distance_mean",
            "distance_std",
            "steps_mean",
            "steps_std",
            "true_utility_mean",
            "true_utility_std",
        ]
        .map(String::from)
        .to_vec();
        for &t in &self.coverage_targets {
            let l = target_label(t);
            header.extend([
                format!("time_to_{l}_mean"),
                format!("time_to_{l}_std"),
                format!("reached_{l}"),
            ]);
        }
        header.extend(
            [
                "compute_per_step_mean",
                "compute_per_step_std",
                "compute_per_episode_mean",
                "compute_per_episode_std",
                "objective_mean",
                "objective_std",
            ]
            .map(String::from),
        );
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.variant.clone(),
                tag(&r.sampler),
                tag(&r.gain_mode),
                r.n_samples.to_string(),
                r.episodes.to_string(),
                r.completed.to_string(),
            ];
            for p in [r.completion_time, r.distance, r.steps, r.true_utility] {
                rec.extend(pair(p));
            }
            for (_, p, reached) in &r.time_to_target {
                rec.extend(pair(*p));
                rec.push(reached.to_string());
            }
            for p in [r.compute_per_step, r.compute_per_episode, r.objective] {
                rec.extend(pair(p));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// One row per episode.
    pub fn write_episodes_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = [
            "variant",
            "n_samples",
            "world",
            "start_index",
            "repeat",
            "seed",
            "status",
            "steps",
            "final_coverage",
            "sim_time",
            "distance",
            "true_utility",
        ]
        .map(String::from)
        .to_vec();
        for &t in &self.coverage_targets {
            header.push(format!("time_to_{}", target_label(t)));
        }
        header.extend(["compute_total", "compute_per_step", "objective"].map(String::from));
        w.write_record(&header)?;
        for e in &self.episodes {
            let mut rec = vec![
                e.variant.clone(),
                e.n_samples.to_string(),
                e.world.clone(),
                e.start_index.to_string(),
                e.repeat.to_string(),
                e.seed.to_string(),
                tag(&e.status),
                e.steps.to_string(),
                e.final_coverage.to_string(),
                e.sim_time.to_string(),
                e.distance.to_string(),
                opt(e.true_utility),
            ];
            rec.extend(e.time_to_target.iter().map(|t| opt(*t)));
            rec.extend([
                e.compute_total.to_string(),
                opt(e.compute_per_step),
                e.objective.to_string(),
            ]);
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
