//! The `nbv` command line. Exit codes: 0 success, 1 runtime error, 2 usage
//! error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nbv_core::dataset::{
    add_negatives, collect_dataset, load_dataset, read_meta, save_dataset, split, Dataset, DatasetRecord, TeacherConfig,
};
use nbv_core::grid_world::{generate_world, save_world};
use nbv_core::planning::{GainMode, PlannerConfig, SamplerKind};
use nbv_core::{Pose, SimConfig, VoxelState, WorldGenParams, WorldKind};
use nbv_models::{
    gain_normalizer, train_cvae, train_gain, train_imitation, AnyModel, EncoderKind, TrainConfig, TrainLog,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde_json::json;

use crate::benchmark::{run_benchmark, BenchmarkConfig};
use crate::episode::{run_episode, EpisodeOptions};
use crate::models::{LoadedModels, ModelPaths};
use crate::pareto::{pareto_report, read_benchmark_csv};
use crate::read_text;
use crate::utility::chosen_utility;
use crate::worlds::WorldInstance;

#[derive(Parser, Debug)]
#[command(
    name = "nbv",
    version,
    about = "Next-best-view exploration: worlds, datasets, training and evaluation"
)]
pub struct Cli {
    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Procedural worlds.
    #[command(subcommand)]
    Worlds(WorldsCmd),
    /// Teacher datasets.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Model training.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Episodes, benchmarks and reports.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Print artifact summaries as JSON.
    #[command(subcommand)]
    Inspect(InspectCmd),
}

#[derive(Subcommand, Debug)]
pub enum WorldsCmd {
    /// Generate one world and print its start pose.
    Generate {
        #[arg(long, default_value = "maze")]
        kind: WorldKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Side length in meters.
        #[arg(long)]
        side: Option<f64>,
    },
}

#[derive(Subcommand, Debug)]
pub enum DatasetCmd {
    /// Run the teacher on Maze worlds and store its selections.
    Collect {
        #[arg(long)]
        worlds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Teacher settings (TOML); flags override.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long)]
        n_samples: Option<usize>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        max_records_per_world: Option<usize>,
        /// Random labelled poses per teacher target, for gain regression.
        #[arg(long)]
        negatives: Option<f64>,
    },
    /// World-level train/validation split.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        val_out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
    },
    /// Summary statistics as JSON.
    Stats {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Training settings (TOML); flags override.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated hidden widths.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub max_batches_per_epoch: Option<usize>,
    /// Write the per-epoch log as JSON.
    #[arg(long)]
    pub log_out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum TrainCmd {
    Cvae {
        #[command(flatten)]
        args: TrainArgs,
        /// Also predict the gain of each sample.
        #[arg(long)]
        joint: bool,
    },
    Gain {
        #[command(flatten)]
        args: TrainArgs,
        #[arg(long, default_value = "pooling", value_parser = parse_serde::<EncoderKind>)]
        encoder: EncoderKind,
    },
    Imitation {
        #[command(flatten)]
        args: TrainArgs,
    },
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[arg(long)]
    pub cvae: Option<PathBuf>,
    #[arg(long)]
    pub gain_mlp: Option<PathBuf>,
    #[arg(long)]
    pub gain_cnn: Option<PathBuf>,
    #[arg(long)]
    pub imitation: Option<PathBuf>,
}

impl ModelArgs {
    fn paths(&self) -> ModelPaths {
        ModelPaths {
            cvae: self.cvae.clone(),
            gain_mlp: self.gain_mlp.clone(),
            gain_cnn: self.gain_cnn.clone(),
            imitation: self.imitation.clone(),
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct PlannerArgs {
    /// Planner settings (TOML with n_samples, sampler, gain_mode, yaw_bins, ...).
    #[arg(long)]
    pub planner_config: Option<PathBuf>,
    #[arg(long, value_parser = parse_serde::<SamplerKind>)]
    pub sampler: Option<SamplerKind>,
    #[arg(long, value_parser = parse_serde::<GainMode>)]
    pub gain_mode: Option<GainMode>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub yaw_bins: Option<usize>,
}

impl PlannerArgs {
    fn config(&self) -> Result<PlannerConfig> {
        let mut cfg: PlannerConfig = match &self.planner_config {
            Some(p) => toml::from_str(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
            None => PlannerConfig::default(),
        };
        if let Some(v) = self.sampler {
            cfg.sampler = v;
        }
        if let Some(v) = self.gain_mode {
            cfg.gain_mode = v;
        }
        if let Some(v) = self.n_samples {
            cfg.n_samples = v;
        }
        if let Some(v) = self.yaw_bins {
            cfg.yaw_bins = v;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
pub enum EvalCmd {
    /// Run one episode and write its JSON-lines log.
    Episode {
        /// Saved world file; otherwise a world is generated.
        #[arg(long)]
        world: Option<PathBuf>,
        /// Start pose "x,y,yaw" for a world file.
        #[arg(long, value_parser = parse_pose, allow_hyphen_values = true)]
        start: Option<Pose>,
        #[arg(long, default_value = "maze")]
        kind: WorldKind,
        #[arg(long, default_value_t = 0)]
        world_seed: u64,
        #[command(flatten)]
        planner: PlannerArgs,
        #[command(flatten)]
        models: ModelArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        budget: usize,
        #[arg(long, default_value_t = 0.99)]
        completion: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a benchmark config and write the aggregate CSV.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-episode CSV.
        #[arg(long)]
        episodes_out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Pareto points and per-variant trends from a benchmark CSV.
    Pareto {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        trends_out: Option<PathBuf>,
        /// Coverage target whose time is the performance axis.
        #[arg(long, default_value_t = 0.9)]
        target: f64,
    },
    /// Oracle utility of chosen actions on the local maps of a dataset.
    Utility {
        #[arg(long)]
        dataset: PathBuf,
        /// Evaluate a random subset of this many maps (default: all).
        #[arg(long)]
        limit: Option<usize>,
        #[command(flatten)]
        planner: PlannerArgs,
        #[command(flatten)]
        models: ModelArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand, Debug)]
pub enum InspectCmd {
    Model {
        path: PathBuf,
    },
    Dataset {
        path: PathBuf,
        /// Read every record and report label statistics.
        #[arg(long)]
        full: bool,
    },
}

fn parse_serde<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_pose(s: &str) -> std::result::Result<Pose, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [x, y, yaw] => Ok(Pose::new(x, y, yaw)),
        _ => Err(format!("expected x,y,yaw but got {} values", v.len())),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let _ = env_logger::Builder::new().parse_filters(&cli.log_level).try_init();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

/// Writes to `path`, or stdout when absent.
fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let file = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            let mut w = BufWriter::new(file);
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string(v)?);
    Ok(())
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Worlds(WorldsCmd::Generate { kind, seed, out, side }) => {
            let mut params = WorldGenParams {
                seed,
                world_kind: kind,
                ..WorldGenParams::default()
            };
            if let Some(s) = side {
                params.side_length_m = s;
            }
            let w = generate_world(&params)?;
            save_world(&out, &w.grid).with_context(|| format!("writing {}", out.display()))?;
            print_json(&json!({
                "path": out,
                "kind": kind,
                "seed": seed,
                "width": w.grid.width(),
                "height": w.grid.height(),
                "start": [w.start.x, w.start.y, w.start.yaw],
            }))
        }
        Command::Dataset(cmd) => run_dataset(cmd),
        Command::Train(cmd) => run_train(cmd),
        Command::Eval(cmd) => run_eval(cmd),
        Command::Inspect(InspectCmd::Model { path }) => {
            let (model, meta) = AnyModel::load(&path).with_context(|| format!("loading {}", path.display()))?;
            print_json(&json!({
                "kind": model.kind().tag(),
                "parameters": model.num_params(),
                "meta": meta,
            }))
        }
        Command::Inspect(InspectCmd::Dataset { path, full }) => {
            if full {
                let ds = load_dataset(&path).with_context(|| format!("loading {}", path.display()))?;
                print_json(&dataset_stats(&ds))
            } else {
                let meta = read_meta(&path).with_context(|| format!("reading {}", path.display()))?;
                print_json(&serde_json::to_value(meta)?)
            }
        }
    }
}

fn dataset_stats(ds: &Dataset) -> serde_json::Value {
    let mut counts = [0usize; 3];
    let (mut pos, mut neg) = (0usize, 0usize);
    let (mut pos_gain, mut neg_gain) = (0.0, 0.0);
    for r in &ds.records {
        for &c in &r.cells {
            counts[c as usize] += 1;
        }
        for t in &r.targets {
            let g = t.pose.gain.unwrap_or(0.0);
            if t.negative {
                neg += 1;
                neg_gain += g;
            } else {
                pos += 1;
                pos_gain += g;
            }
        }
    }
    let cells = counts.iter().sum::<usize>().max(1) as f64;
    let worlds: std::collections::BTreeSet<u32> = ds.records.iter().map(|r| r.world_id).collect();
    json!({
        "meta": ds.meta,
        "records": ds.records.len(),
        "distinct_worlds": worlds.len(),
        "positive_targets": pos,
        "negative_targets": neg,
        "mean_positive_gain": if pos > 0 { pos_gain / pos as f64 } else { 0.0 },
        "mean_negative_gain": if neg > 0 { neg_gain / neg as f64 } else { 0.0 },
        "free_fraction": counts[VoxelState::Free as usize] as f64 / cells,
        "occupied_fraction": counts[VoxelState::Occupied as usize] as f64 / cells,
        "unknown_fraction": counts[VoxelState::Unknown as usize] as f64 / cells,
    })
}

fn run_dataset(cmd: DatasetCmd) -> Result<()> {
    match cmd {
        DatasetCmd::Collect {
            worlds,
            seed,
            out,
            config,
            threads,
            n_samples,
            repetitions,
            max_records_per_world,
            negatives,
        } => {
            let mut cfg: TeacherConfig = match &config {
                Some(p) => toml::from_str(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
                None => TeacherConfig::default(),
            };
            if let Some(v) = n_samples {
                cfg.n_samples = v;
            }
            if let Some(v) = repetitions {
                cfg.repetitions = v;
            }
            if let Some(v) = max_records_per_world {
                cfg.max_records_per_world = v;
            }
            let mut ds = collect_dataset(worlds, seed, &WorldGenParams::default(), &cfg, threads)?;
            if let Some(ratio) = negatives {
                add_negatives(&mut ds.records, ratio, seed, &cfg.sim.robot, &cfg.sim.sensor)?;
            }
            save_dataset(&out, &ds).with_context(|| format!("writing {}", out.display()))?;
            print_json(&json!({ "path": out, "records": ds.records.len(), "worlds": worlds }))
        }
        DatasetCmd::Split {
            input,
            train_out,
            val_out,
            seed,
            train_fraction,
        } => {
            let ds = load_dataset(&input).with_context(|| format!("loading {}", input.display()))?;
            let fractions = (train_fraction, 1.0 - train_fraction);
            let (train, val) = split(ds.records, fractions, seed)?;
            let (nt, nv) = (train.len(), val.len());
            for (records, path) in [(train, &train_out), (val, &val_out)] {
                let mut part = Dataset::from_records(records, seed);
                part.meta.split_fractions = fractions;
                save_dataset(path, &part).with_context(|| format!("writing {}", path.display()))?;
            }
            print_json(&json!({ "train_records": nt, "val_records": nv }))
        }
        DatasetCmd::Stats { input } => {
            let ds = load_dataset(&input).with_context(|| format!("loading {}", input.display()))?;
            print_json(&dataset_stats(&ds))
        }
    }
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match &args.config {
        Some(p) => toml::from_str(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = &args.hidden {
        cfg.hidden = v.clone();
    }
    if args.max_batches_per_epoch.is_some() {
        cfg.max_batches_per_epoch = args.max_batches_per_epoch;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_split(args: &TrainArgs) -> Result<(Vec<DatasetRecord>, Vec<DatasetRecord>)> {
    let train = load_dataset(&args.train).with_context(|| format!("loading {}", args.train.display()))?;
    let val = load_dataset(&args.val).with_context(|| format!("loading {}", args.val.display()))?;
    Ok((train.records, val.records))
}

fn run_train(cmd: TrainCmd) -> Result<()> {
    let args = match &cmd {
        TrainCmd::Cvae { args, .. } | TrainCmd::Gain { args, .. } | TrainCmd::Imitation { args } => args.clone(),
    };
    let cfg = train_config(&args)?;
    let (train, val) = load_split(&args)?;
    let res = train.first().map_or(0.2, |r| r.resolution);
    let scale = gain_normalizer(SimConfig::default().sensor.range, res);
    let (model, log): (AnyModel, TrainLog) = match cmd {
        TrainCmd::Cvae { joint, .. } => {
            let (m, log) = train_cvae(&train, &val, &cfg, joint, scale)?;
            (AnyModel::Cvae(m), log)
        }
        TrainCmd::Gain { encoder, .. } => {
            let (m, log) = train_gain(&train, &val, &cfg, encoder, scale)?;
            (AnyModel::Gain(m), log)
        }
        TrainCmd::Imitation { .. } => {
            let (m, log) = train_imitation(&train, &val, &cfg)?;
            (AnyModel::Imitation(m), log)
        }
    };
    let info = json!({
        "train_records": train.len(),
        "val_records": val.len(),
        "best_epoch": log.best_epoch,
        "best_val_loss": log.best_val_loss(),
        "config": cfg,
    });
    model
        .save(&args.out, info.clone())
        .with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(p) = &args.log_out {
        std::fs::write(p, serde_json::to_vec_pretty(&log)?).with_context(|| format!("writing {}", p.display()))?;
    }
    print_json(&json!({ "kind": model.kind().tag(), "path": args.out, "summary": info }))
}

fn run_eval(cmd: EvalCmd) -> Result<()> {
    match cmd {
        EvalCmd::Episode {
            world,
            start,
            kind,
            world_seed,
            planner,
            models,
            seed,
            budget,
            completion,
            out,
        } => {
            let sim = SimConfig::default();
            let instance = match world {
                Some(path) => WorldInstance::from_file(&path, start, &sim.robot)?,
                None => {
                    let w = generate_world(&WorldGenParams {
                        seed: world_seed,
                        world_kind: kind,
                        ..WorldGenParams::default()
                    })?;
                    let start = start.unwrap_or(w.start);
                    WorldInstance {
                        name: format!(
                            "{}-{world_seed}",
                            serde_json::to_value(kind)?.as_str().unwrap_or("world")
                        ),
                        grid: Arc::new(w.grid),
                        start,
                    }
                }
            };
            let planner = planner.config()?;
            let loaded = LoadedModels::load_for(&models.paths(), &[planner])?;
            let options = EpisodeOptions {
                step_budget: budget,
                completion_coverage: completion,
                sim,
            };
            let observable = instance.observable(&sim);
            let log = run_episode(
                &instance,
                &observable,
                &planner,
                &loaded.planner_models(),
                seed,
                &options,
            )?;
            with_output(out.as_deref(), |w| Ok(log.write_jsonl(w)?))
        }
        EvalCmd::Benchmark {
            config,
            out,
            episodes_out,
            seed,
            threads,
            repeats,
        } => {
            let mut cfg = BenchmarkConfig::from_file(&config)?;
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = threads {
                cfg.threads = v;
            }
            if let Some(v) = repeats {
                cfg.repeats = v;
            }
            let results = run_benchmark(&cfg)?;
            if let Some(p) = &episodes_out {
                with_output(Some(p), |w| Ok(results.write_episodes_csv(w)?))?;
            }
            with_output(out.as_deref(), |w| Ok(results.write_rows_csv(w)?))
        }
        EvalCmd::Pareto {
            input,
            out,
            trends_out,
            target,
        } => {
            let file = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let rows = read_benchmark_csv(BufReader::new(file), target)?;
            let report = pareto_report(&rows);
            if let Some(p) = &trends_out {
                with_output(Some(p), |w| Ok(report.write_trends_csv(w)?))?;
            }
            with_output(out.as_deref(), |w| Ok(report.write_points_csv(w)?))
        }
        EvalCmd::Utility {
            dataset,
            limit,
            planner,
            models,
            seed,
        } => {
            let ds = load_dataset(&dataset).with_context(|| format!("loading {}", dataset.display()))?;
            if ds.records.is_empty() {
                bail!("{} holds no records", dataset.display());
            }
            // Records are grouped by world in episode order; a fixed stride would
            // alias with episode position, so subsets are drawn at random.
            let mut picked: Vec<usize> = match limit {
                Some(k) if k < ds.records.len() => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rand::seq::index::sample(&mut rng, ds.records.len(), k).into_vec()
                }
                _ => (0..ds.records.len()).collect(),
            };
            picked.sort_unstable();
            let maps: Vec<_> = picked.iter().map(|&i| ds.records[i].local_map()).collect();
            let planner = planner.config()?;
            let loaded = LoadedModels::load_for(&models.paths(), &[planner])?;
            let sim = SimConfig::default();
            let study = chosen_utility(&maps, &planner, &loaded.planner_models(), &sim.robot, &sim.sensor, seed)?;
            print_json(&json!({
                "sampler": planner.sampler,
                "gain_mode": planner.gain_mode,
                "n_samples": planner.n_samples,
                "maps": study.maps,
                "skipped": study.skipped,
                "mean_utility": study.mean_utility,
                "std_utility": study.std_utility,
                "mean_true_gain": study.mean_true_gain,
            }))
        }
    }
}
