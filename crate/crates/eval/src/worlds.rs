//! Worlds referenced by experiments: generated from seeds or loaded from
//! files, with start poses and the observable-cell set used for coverage.

use std::path::PathBuf;
use std::sync::Arc;

use nbv_core::dataset::derive_seed;
use nbv_core::grid_world::{generate_world, load_world};
use nbv_core::planning::{DistanceField, InflationKernel, TraversabilityMap};
use nbv_core::sim::observable_cells;
use nbv_core::{Cell, GridView, OccupancyGrid, Pose, RobotModel, SimConfig, WorldGenParams, WorldKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::EvalError;

/// A set of worlds in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorldSource {
    /// `count` worlds whose seeds derive from `seed`, numbered from `first`.
    Generated {
        kind: WorldKind,
        count: usize,
        seed: u64,
        #[serde(default)]
        first: usize,
    },
    /// A saved world; without `start` the traversable cell nearest the
    /// center is used.
    File { path: PathBuf, start: Option<[f64; 3]> },
}

#[derive(Debug, Clone)]
pub struct WorldInstance {
    pub name: String,
    pub grid: Arc<OccupancyGrid>,
    pub start: Pose,
}

impl WorldInstance {
    /// World `index` of the seeded family `seed`; the same derivation as
    /// teacher data collection, so disjoint base seeds give disjoint worlds.
    pub fn generated(kind: WorldKind, seed: u64, index: usize) -> Result<Self, EvalError> {
        let params = WorldGenParams {
            seed: derive_seed(seed, index as u64, 0),
            world_kind: kind,
            ..WorldGenParams::default()
        };
        let w = generate_world(&params)?;
        let kind = match kind {
            WorldKind::Maze => "maze",
            WorldKind::Cluttered => "cluttered",
        };
        Ok(Self {
            name: format!("{kind}-{seed}-{index}"),
            grid: Arc::new(w.grid),
            start: w.start,
        })
    }

    pub fn from_file(path: &std::path::Path, start: Option<Pose>, robot: &RobotModel) -> Result<Self, EvalError> {
        let grid = load_world(path)?;
        let start = match start {
            Some(s) => s,
            None => central_start(&grid, robot).ok_or_else(|| {
                EvalError::Config(format!("{}: no traversable cell for a start pose", path.display()))
            })?,
        };
        Ok(Self {
            name: path.display().to_string(),
            grid: Arc::new(grid),
            start,
        })
    }

    pub fn observable(&self, sim: &SimConfig) -> Vec<bool> {
        observable_cells(&self.grid, &self.start, sim)
    }

    /// `count` start poses: the world's own start followed by random
    /// footprint-reachable poses drawn from `seed`.
    pub fn start_poses(&self, count: usize, seed: u64, robot: &RobotModel) -> Vec<Pose> {
        let mut starts = vec![self.start];
        if count <= 1 {
            return starts;
        }
        let kernel = InflationKernel::new(robot.footprint_radius, self.grid.resolution());
        let trav = TraversabilityMap::new(&*self.grid, &kernel);
        let field = DistanceField::compute(&*self.grid, &trav, self.grid.world_to_cell(self.start.x, self.start.y));
        let reached = field.reached();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        while starts.len() < count && !reached.is_empty() {
            let c = reached[rng.random_range(0..reached.len())];
            let [x, y] = self.grid.cell_center(c);
            starts.push(Pose::new(
                x,
                y,
                rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            ));
        }
        starts
    }
}

/// Traversable cell nearest the grid center, facing +x.
pub fn central_start(grid: &OccupancyGrid, robot: &RobotModel) -> Option<Pose> {
    let kernel = InflationKernel::new(robot.footprint_radius, grid.resolution());
    let trav = TraversabilityMap::new(grid, &kernel);
    let (w, h) = grid.dims();
    let (cx, cy) = (f64::from(w) / 2.0, f64::from(h) / 2.0);
    let mut best: Option<(f64, Cell)> = None;
    for y in 0..h {
        for x in 0..w {
            let c = Cell::new(x, y);
            if !trav.is_traversable(c) {
                continue;
            }
            let d = (f64::from(x) + 0.5 - cx).powi(2) + (f64::from(y) + 0.5 - cy).powi(2);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, c));
            }
        }
    }
    best.map(|(_, c)| {
        let [x, y] = grid.cell_center(c);
        Pose::new(x, y, 0.0)
    })
}

/// Expands world sources in order.
pub fn load_worlds(sources: &[WorldSource], robot: &RobotModel) -> Result<Vec<WorldInstance>, EvalError> {
    let mut out = Vec::new();
    for s in sources {
        match s {
            WorldSource::Generated {
                kind,
                count,
                seed,
                first,
            } => {
                for i in *first..first + count {
                    out.push(WorldInstance::generated(*kind, *seed, i)?);
                }
            }
            WorldSource::File { path, start } => {
                let start = start.map(|[x, y, yaw]| Pose::new(x, y, yaw));
                out.push(WorldInstance::from_file(path, start, robot)?);
            }
        }
    }
    Ok(out)
}
