//! Teacher demonstrations, negative augmentation, world-level splits and
//! the on-disk dataset format.
//!
//! Targets are stored in the frame of their local map: the window corner is
//! the origin and axes are world-aligned, so a record's map can be re-scored
//! without the world it came from.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid_world::{generate_world, Cell, GridView, OccupancyGrid, VoxelState, WorldError, WorldGenParams};
use crate::planning::gain::{compute_gain, optimize_orientation_with};
use crate::planning::planner::{
    candidate_cost, detect_local_minimum, plan_step, select_nbv, Candidate, CandidateSource,
};
use crate::planning::reach::{local_distance_field, DistanceField};
use crate::planning::{PlanError, PlannerConfig, PlannerModels, PlannerState};
use crate::sim::{
    angle_diff, coverage, extract_local_map, normalize_angle, observable_cells, LocalMap, Pose, RobotModel,
    SensorModel, SimConfig, SimError, SimState,
};

pub const DATASET_MAGIC: &[u8; 4] = b"NBVD";
pub const DATASET_FORMAT_VERSION: u32 = 1;
const META_LEN: usize = 64;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("dataset format error: {0}")]
    Format(String),
    #[error("dataset record {index} is corrupt: {reason}")]
    CorruptRecord { index: usize, reason: String },
    #[error("unsupported dataset version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// A pose in the local-map frame with an optional visible-unknown label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseTarget {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub gain: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub pose: PoseTarget,
    /// Random pose added for gain regression rather than a teacher NBV.
    pub negative: bool,
    /// Seed of the rng stream that produced the target; replays it exactly.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub world_id: u32,
    pub step: u32,
    pub resolution: f64,
    pub map_size: usize,
    pub cells: Vec<VoxelState>,
    pub robot_yaw: f64,
    pub targets: Vec<Target>,
}

impl DatasetRecord {
    /// The stored map as a local map whose origin is the window corner.
    pub fn local_map(&self) -> LocalMap {
        LocalMap::from_cells(
            self.map_size,
            self.resolution,
            Cell::new(0, 0),
            self.cells.clone(),
            self.robot_yaw,
        )
    }

    pub fn positives(&self) -> impl Iterator<Item = &Target> {
        self.targets.iter().filter(|t| !t.negative)
    }

    pub fn negatives(&self) -> impl Iterator<Item = &Target> {
        self.targets.iter().filter(|t| t.negative)
    }
}

/// Re-expresses a belief window in its own frame.
pub fn normalized_local_map(local: &LocalMap) -> LocalMap {
    LocalMap::from_cells(
        local.size(),
        local.resolution(),
        Cell::new(0, 0),
        local.cells().to_vec(),
        local.robot_yaw,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub version: u32,
    pub record_count: u64,
    pub world_count: u64,
    pub split_fractions: (f64, f64),
    pub seed: u64,
    pub map_size: u32,
    pub resolution: f64,
}

impl Default for DatasetMeta {
    fn default() -> Self {
        Self {
            version: DATASET_FORMAT_VERSION,
            record_count: 0,
            world_count: 0,
            split_fractions: (0.8, 0.2),
            seed: 0,
            map_size: 50,
            resolution: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn from_records(records: Vec<DatasetRecord>, seed: u64) -> Self {
        let worlds: BTreeSet<u32> = records.iter().map(|r| r.world_id).collect();
        let first = records.first();
        let meta = DatasetMeta {
            record_count: records.len() as u64,
            world_count: worlds.len() as u64,
            seed,
            map_size: first.map_or(50, |r| r.map_size as u32),
            resolution: first.map_or(0.2, |r| r.resolution),
            ..DatasetMeta::default()
        };
        Self { meta, records }
    }
}

/// Mixes a base seed with two indices (splitmix64 finaliser).
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherConfig {
    /// Uniform candidates per teacher selection.
    pub n_samples: usize,
    /// Independent selections stored per record.
    pub repetitions: usize,
    /// Record every k-th planning step.
    pub record_every: usize,
    pub max_records_per_world: usize,
    pub max_steps: usize,
    pub coverage_target: f64,
    pub yaw_bins: usize,
    pub sim: SimConfig,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            n_samples: 25,
            repetitions: 20,
            record_every: 3,
            max_records_per_world: 20,
            max_steps: 500,
            coverage_target: 0.99,
            yaw_bins: 16,
            sim: SimConfig::default(),
        }
    }
}

/// Best of `n` uniform, orientation-optimised candidates on `local`, drawn
/// from `rng`. Candidate paths are local cells.
#[allow(clippy::too_many_arguments)]
pub fn uniform_best(
    local: &LocalMap,
    field: &DistanceField,
    robot_yaw: f64,
    robot: &RobotModel,
    sensor: &SensorModel,
    n: usize,
    yaw_bins: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Cell, Candidate), PlanError> {
    let reached = field.reached();
    if reached.is_empty() {
        return Err(PlanError::SamplingExhausted);
    }
    let cells: Vec<Cell> = (0..n).map(|_| reached[rng.random_range(0..reached.len())]).collect();
    let mut scratch = Vec::new();
    let mut candidates = Vec::with_capacity(n);
    for &c in &cells {
        let center = local.cell_center(c);
        let (yaw, gain) = optimize_orientation_with(local, center, sensor, yaw_bins, &mut scratch)?;
        let dist = field.distance(c).unwrap_or(0.0);
        candidates.push(Candidate {
            pose: Pose::new(center[0], center[1], yaw),
            gain: gain as f64,
            cost: candidate_cost(dist, angle_diff(yaw, robot_yaw), robot, local.resolution()),
            path: Vec::new(),
            source: CandidateSource::Uniform,
        });
    }
    let best = select_nbv(&candidates)?;
    Ok((cells[best], candidates.swap_remove(best)))
}

/// Runs a uniform-planner exploration episode, storing at recorded steps the
/// local map and the winners of independent best-of-N selections. The first
/// winner is executed.
pub fn collect_teacher_samples(
    world: Arc<OccupancyGrid>,
    start: Pose,
    cfg: &TeacherConfig,
    world_id: u32,
    seed: u64,
) -> Result<Vec<DatasetRecord>, DatasetError> {
    if cfg.n_samples == 0 || cfg.repetitions == 0 || cfg.record_every == 0 {
        return Err(DatasetError::Argument("teacher counts must be positive".into()));
    }
    let observable = observable_cells(&world, &start, &cfg.sim);
    let mut state = SimState::new(world, start, cfg.sim).map_err(|e| DatasetError::Argument(e.to_string()))?;
    state.scan_in_place()?;
    let planner = PlannerConfig {
        n_samples: cfg.n_samples,
        yaw_bins: cfg.yaw_bins,
        ..PlannerConfig::default()
    };
    let mut pstate = PlannerState::new(&planner);
    let mut episode_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::from(world_id), u64::MAX));
    let robot = cfg.sim.robot;
    let sensor = cfg.sim.sensor;
    let mut records = Vec::new();

    for step in 0..cfg.max_steps {
        if records.len() >= cfg.max_records_per_world || coverage(&state.belief, &observable) >= cfg.coverage_target {
            break;
        }
        let window = extract_local_map(&state);
        let local = normalized_local_map(&window);
        let (_, field) = local_distance_field(&local, &robot);
        let record_now = step % cfg.record_every == 0
            && !detect_local_minimum(&local, &field, &pstate.monitor, &sensor, cfg.yaw_bins);
        let (target, path) = if record_now {
            let mut targets = Vec::with_capacity(cfg.repetitions);
            let mut first = None;
            for rep in 0..cfg.repetitions {
                let rep_seed = derive_seed(seed, u64::from(world_id) << 32 | step as u64, rep as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
                let (cell, cand) = uniform_best(
                    &local,
                    &field,
                    state.robot.yaw,
                    &robot,
                    &sensor,
                    cfg.n_samples,
                    cfg.yaw_bins,
                    &mut rng,
                )?;
                targets.push(Target {
                    pose: PoseTarget {
                        x: cand.pose.x,
                        y: cand.pose.y,
                        yaw: cand.pose.yaw,
                        gain: Some(cand.gain),
                    },
                    negative: false,
                    seed: rep_seed,
                });
                first.get_or_insert((cell, cand.pose.yaw));
            }
            records.push(DatasetRecord {
                world_id,
                step: step as u32,
                resolution: local.resolution(),
                map_size: local.size(),
                cells: local.cells().to_vec(),
                robot_yaw: local.robot_yaw,
                targets,
            });
            let (cell, yaw) = first.expect("at least one repetition");
            let global = window.to_global(cell);
            let [x, y] = state.belief.cell_center(global);
            let path = field
                .path_to(cell)
                .expect("sampled cell is reachable")
                .into_iter()
                .map(|c| window.to_global(c))
                .collect::<Vec<_>>();
            (Pose::new(x, y, yaw), path)
        } else {
            match plan_step(
                &state,
                &mut pstate,
                &planner,
                &PlannerModels::default(),
                &mut episode_rng,
            ) {
                Ok(out) => (out.chosen.pose, out.chosen.path),
                Err(PlanError::ExplorationComplete) => break,
                Err(e) => return Err(e.into()),
            }
        };
        let outcome = state.step(&target, &path)?;
        pstate.record_step(outcome.newly_observed);
    }
    Ok(records)
}

/// Collects teacher records from `num_worlds` Maze worlds, one worker per
/// world. Output order is by world id regardless of scheduling.
pub fn collect_dataset(
    num_worlds: usize,
    seed: u64,
    world_template: &WorldGenParams,
    cfg: &TeacherConfig,
    threads: usize,
) -> Result<Dataset, DatasetError> {
    let threads = threads.max(1).min(num_worlds.max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<Vec<(usize, Result<Vec<DatasetRecord>, DatasetError>)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|_| {
                s.spawn(|| {
                    let mut out = Vec::new();
                    loop {
                        let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        if i >= num_worlds {
                            break;
                        }
                        let params = WorldGenParams {
                            seed: derive_seed(seed, i as u64, 0),
                            ..world_template.clone()
                        };
                        let r = generate_world(&params)
                            .map_err(DatasetError::from)
                            .and_then(|w| collect_teacher_samples(Arc::new(w.grid), w.start, cfg, i as u32, seed));
                        out.push((i, r));
                    }
                    out
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("collection worker panicked"))
            .collect()
    });
    let mut per_world: Vec<(usize, Result<Vec<DatasetRecord>, DatasetError>)> = results.into_iter().flatten().collect();
    per_world.sort_by_key(|(i, _)| *i);
    let mut records = Vec::new();
    for (i, r) in per_world {
        match r {
            Ok(mut recs) => records.append(&mut recs),
            Err(e) => log::warn!("world {i} skipped: {e}"),
        }
    }
    let mut ds = Dataset::from_records(records, seed);
    ds.meta.world_count = num_worlds as u64;
    Ok(ds)
}

/// Appends `ceil(ratio * positives)` random reachable poses to every record,
/// labelled with their ray-cast gain. Returns the number of records skipped
/// for lack of a feasible cell.
pub fn add_negatives(
    records: &mut [DatasetRecord],
    ratio: f64,
    seed: u64,
    robot: &RobotModel,
    sensor: &SensorModel,
) -> Result<usize, DatasetError> {
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(DatasetError::Argument(format!(
            "negative ratio must be positive, got {ratio}"
        )));
    }
    let mut skipped = 0;
    for (i, rec) in records.iter_mut().enumerate() {
        let local = rec.local_map();
        let (_, field) = local_distance_field(&local, robot);
        let reached = field.reached();
        if reached.is_empty() {
            skipped += 1;
            continue;
        }
        let count = (ratio * rec.positives().count() as f64).ceil() as usize;
        let neg_seed = derive_seed(seed, i as u64, u64::from(rec.world_id));
        let mut rng = ChaCha8Rng::seed_from_u64(neg_seed);
        for _ in 0..count {
            let c = reached[rng.random_range(0..reached.len())];
            let yaw = normalize_angle(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
            let [x, y] = local.cell_center(c);
            let pose = Pose::new(x, y, yaw);
            let gain = compute_gain(&local, &pose, sensor)? as f64;
            rec.targets.push(Target {
                pose: PoseTarget {
                    x,
                    y,
                    yaw: pose.yaw,
                    gain: Some(gain),
                },
                negative: true,
                seed: neg_seed,
            });
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} records without a feasible cell received no negatives");
    }
    Ok(skipped)
}

/// World-level split: every world lands entirely in train or validation.
pub fn split(
    records: Vec<DatasetRecord>,
    fractions: (f64, f64),
    seed: u64,
) -> Result<(Vec<DatasetRecord>, Vec<DatasetRecord>), DatasetError> {
    if !(fractions.0 > 0.0 && fractions.1 > 0.0) || ((fractions.0 + fractions.1) - 1.0).abs() > 1e-9 {
        return Err(DatasetError::Argument(format!(
            "split fractions {fractions:?} must be positive and sum to 1"
        )));
    }
    let mut worlds: Vec<u32> = records
        .iter()
        .map(|r| r.world_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if worlds.len() < 2 {
        return Err(DatasetError::Data(format!(
            "need at least 2 worlds to split, found {}",
            worlds.len()
        )));
    }
    worlds.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((worlds.len() as f64 * fractions.0).round() as usize).clamp(1, worlds.len() - 1);
    let train_worlds: BTreeSet<u32> = worlds[..n_train].iter().copied().collect();
    Ok(records.into_iter().partition(|r| train_worlds.contains(&r.world_id)))
}

fn write_meta<W: Write>(out: &mut W, meta: &DatasetMeta) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(META_LEN);
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&meta.version.to_le_bytes());
    buf.extend_from_slice(&meta.record_count.to_le_bytes());
    buf.extend_from_slice(&meta.world_count.to_le_bytes());
    buf.extend_from_slice(&meta.split_fractions.0.to_le_bytes());
    buf.extend_from_slice(&meta.split_fractions.1.to_le_bytes());
    buf.extend_from_slice(&meta.seed.to_le_bytes());
    buf.extend_from_slice(&meta.map_size.to_le_bytes());
    buf.extend_from_slice(&meta.resolution.to_le_bytes());
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    debug_assert_eq!(buf.len(), META_LEN);
    out.write_all(&buf)
}

fn parse_meta(buf: &[u8; META_LEN]) -> Result<DatasetMeta, DatasetError> {
    if &buf[..4] != DATASET_MAGIC {
        return Err(DatasetError::Format("not a dataset file (bad magic)".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != DATASET_FORMAT_VERSION {
        return Err(DatasetError::Version {
            expected: DATASET_FORMAT_VERSION,
            found: version,
        });
    }
    if crc32fast::hash(&buf[..60]) != u32_at(60) {
        return Err(DatasetError::Format("meta block checksum mismatch".into()));
    }
    Ok(DatasetMeta {
        version,
        record_count: u64_at(8),
        world_count: u64_at(16),
        split_fractions: (f64_at(24), f64_at(32)),
        seed: u64_at(40),
        map_size: u32_at(48),
        resolution: f64_at(52),
    })
}

fn encode_record(rec: &DatasetRecord, buf: &mut Vec<u8>) {
    buf.clear();
    buf.extend_from_slice(&rec.world_id.to_le_bytes());
    buf.extend_from_slice(&rec.step.to_le_bytes());
    buf.extend_from_slice(&rec.resolution.to_le_bytes());
    buf.extend_from_slice(&(rec.map_size as u32).to_le_bytes());
    buf.extend_from_slice(&rec.robot_yaw.to_le_bytes());
    buf.extend(rec.cells.iter().map(|&s| s as u8));
    buf.extend_from_slice(&(rec.targets.len() as u32).to_le_bytes());
    for t in &rec.targets {
        for v in [t.pose.x, t.pose.y, t.pose.yaw, t.pose.gain.unwrap_or(f64::NAN)] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.push(u8::from(t.negative));
        buf.extend_from_slice(&t.seed.to_le_bytes());
    }
}

fn decode_record(buf: &[u8]) -> Result<DatasetRecord, String> {
    let mut pos = 0;
    let mut take = |n: usize| -> Result<&[u8], String> {
        let s = buf.get(pos..pos + n).ok_or("record payload truncated")?;
        pos += n;
        Ok(s)
    };
    let world_id = u32::from_le_bytes(take(4)?.try_into().unwrap());
    let step = u32::from_le_bytes(take(4)?.try_into().unwrap());
    let resolution = f64::from_le_bytes(take(8)?.try_into().unwrap());
    let map_size = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let robot_yaw = f64::from_le_bytes(take(8)?.try_into().unwrap());
    let cells = take(map_size * map_size)?
        .iter()
        .map(|&b| VoxelState::from_u8(b).ok_or_else(|| format!("invalid cell state {b}")))
        .collect::<Result<Vec<_>, _>>()?;
    let n = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let mut v = [0.0; 4];
        for x in &mut v {
            *x = f64::from_le_bytes(take(8)?.try_into().unwrap());
        }
        let negative = take(1)?[0] != 0;
        let seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
        targets.push(Target {
            pose: PoseTarget {
                x: v[0],
                y: v[1],
                yaw: v[2],
                gain: (!v[3].is_nan()).then_some(v[3]),
            },
            negative,
            seed,
        });
    }
    if pos != buf.len() {
        return Err("trailing bytes in record payload".into());
    }
    Ok(DatasetRecord {
        world_id,
        step,
        resolution,
        map_size,
        cells,
        robot_yaw,
        targets,
    })
}

/// Streams records to a file; the record count in the meta block is patched
/// on `finish`.
pub struct DatasetWriter<W: Write + Seek> {
    out: W,
    meta: DatasetMeta,
    buf: Vec<u8>,
}

impl DatasetWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, meta: DatasetMeta) -> Result<Self, DatasetError> {
        Self::new(BufWriter::new(File::create(path)?), meta)
    }
}

impl<W: Write + Seek> DatasetWriter<W> {
    pub fn new(mut out: W, mut meta: DatasetMeta) -> Result<Self, DatasetError> {
        meta.version = DATASET_FORMAT_VERSION;
        meta.record_count = 0;
        write_meta(&mut out, &meta)?;
        Ok(Self {
            out,
            meta,
            buf: Vec::new(),
        })
    }

    pub fn append(&mut self, rec: &DatasetRecord) -> Result<(), DatasetError> {
        encode_record(rec, &mut self.buf);
        self.out.write_all(&(self.buf.len() as u32).to_le_bytes())?;
        self.out.write_all(&self.buf)?;
        self.out.write_all(&crc32fast::hash(&self.buf).to_le_bytes())?;
        self.meta.record_count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<DatasetMeta, DatasetError> {
        self.out.seek(SeekFrom::Start(0))?;
        write_meta(&mut self.out, &self.meta)?;
        self.out.seek(SeekFrom::End(0))?;
        self.out.flush()?;
        Ok(self.meta)
    }
}

/// Reads records one at a time after the meta block.
pub struct DatasetReader<R: Read> {
    input: R,
    meta: DatasetMeta,
    index: usize,
    buf: Vec<u8>,
}

impl DatasetReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: Read> DatasetReader<R> {
    pub fn new(mut input: R) -> Result<Self, DatasetError> {
        let mut head = [0u8; META_LEN];
        input
            .read_exact(&mut head)
            .map_err(|_| DatasetError::Format("file shorter than the meta block".into()))?;
        let meta = parse_meta(&head)?;
        Ok(Self {
            input,
            meta,
            index: 0,
            buf: Vec::new(),
        })
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    fn read_next(&mut self) -> Result<DatasetRecord, DatasetError> {
        let index = self.index;
        let corrupt = |reason: String| DatasetError::CorruptRecord { index, reason };
        let mut len = [0u8; 4];
        self.input
            .read_exact(&mut len)
            .map_err(|e| corrupt(format!("length: {e}")))?;
        let len = u32::from_le_bytes(len) as usize;
        self.buf.resize(len + 4, 0);
        self.input
            .read_exact(&mut self.buf)
            .map_err(|e| corrupt(format!("payload: {e}")))?;
        let (payload, crc) = self.buf.split_at(len);
        if crc32fast::hash(payload) != u32::from_le_bytes(crc.try_into().unwrap()) {
            return Err(corrupt("checksum mismatch".into()));
        }
        let rec = decode_record(payload).map_err(corrupt)?;
        self.index += 1;
        Ok(rec)
    }
}

impl<R: Read> Iterator for DatasetReader<R> {
    type Item = Result<DatasetRecord, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.index as u64 >= self.meta.record_count {
            return None;
        }
        let r = self.read_next();
        if r.is_err() {
            // Stop after the first error.
            self.index = usize::MAX;
        }
        Some(r)
    }
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<(), DatasetError> {
    let mut w = DatasetWriter::create(path, ds.meta)?;
    for r in &ds.records {
        w.append(r)?;
    }
    w.finish()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let mut reader = DatasetReader::open(path)?;
    let meta = *reader.meta();
    let records = reader.by_ref().collect::<Result<Vec<_>, _>>()?;
    let mut probe = [0u8; 1];
    if reader.input.read(&mut probe)? != 0 {
        return Err(DatasetError::Format("trailing bytes after the last record".into()));
    }
    Ok(Dataset { meta, records })
}

/// Reads only the fixed-size meta block.
pub fn read_meta(path: impl AsRef<Path>) -> Result<DatasetMeta, DatasetError> {
    Ok(*DatasetReader::new(File::open(path)?)?.meta())
}
