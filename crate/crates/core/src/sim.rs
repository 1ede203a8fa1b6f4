//! Kinematic robot and noise-free depth-sensor simulation over occupancy grids.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid_world::{Cell, GridView, OccupancyGrid, VoxelState};
use crate::planning::reach::{DistanceField, InflationKernel, TraversabilityMap};

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Signed shortest rotation from `from` to `to`.
pub fn angle_diff(to: f64, from: f64) -> f64 {
    normalize_angle(to - from)
}

/// Planar pose in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn with_yaw(self, yaw: f64) -> Self {
        Self::new(self.x, self.y, yaw)
    }
}

/// How translation and rotation times combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionModel {
    /// Omnidirectional base: translate and rotate at the same time.
    #[default]
    Simultaneous,
    /// Rotate then translate.
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotModel {
    pub v_max: f64,
    pub omega_max: f64,
    pub footprint_radius: f64,
    pub motion: MotionModel,
}

impl Default for RobotModel {
    fn default() -> Self {
        Self {
            v_max: 1.0,
            omega_max: 1.0,
            footprint_radius: 0.2,
            motion: MotionModel::Simultaneous,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorModel {
    pub fov: f64,
    pub range: f64,
    pub rays_per_scan: usize,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            fov: FRAC_PI_2,
            range: 5.0,
            rays_per_scan: 180,
        }
    }
}

impl SensorModel {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.fov > 0.0 && self.fov <= 2.0 * PI + 1e-12) || !(self.range > 0.0) || self.rays_per_scan < 2 {
            return Err(SimError::Argument(format!("invalid sensor model {self:?}")));
        }
        Ok(())
    }

    /// Sensor range in cells.
    pub fn range_cells(&self, resolution: f64) -> f64 {
        self.range / resolution
    }

    /// Side length of the square local map: twice the sensing range.
    pub fn local_map_cells(&self, resolution: f64) -> usize {
        2 * (self.range_cells(resolution) + 1e-9).floor() as usize
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("simulation integrity violated: {0}")]
    Integrity(String),
    #[error("planning contract violated: {0}")]
    PlanningContract(String),
}

/// Result of one cast: traversed non-blocking cells in order, then the
/// blocking cell if the ray stopped on one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RayResult {
    pub cells: Vec<Cell>,
    pub hit: Option<Cell>,
}

/// Exact grid traversal (Amanatides-Woo) from `origin` along `angle` up to
/// `max_range` meters. Only occupied cells block. Corner crossings step
/// diagonally, so cells touched only at a corner are not reported.
pub fn raycast(grid: &OccupancyGrid, origin: [f64; 2], angle: f64, max_range: f64) -> Result<RayResult, SimError> {
    let mut out = RayResult::default();
    raycast_into(grid, origin, angle, max_range, &mut out)?;
    Ok(out)
}

/// As [`raycast`], reusing `out`'s buffers.
pub fn raycast_into(
    grid: &OccupancyGrid,
    origin: [f64; 2],
    angle: f64,
    max_range: f64,
    out: &mut RayResult,
) -> Result<(), SimError> {
    out.cells.clear();
    out.hit = None;
    let res = grid.resolution();
    let o = grid.origin();
    let px = (origin[0] - o[0]) / res;
    let py = (origin[1] - o[1]) / res;
    let mut cell = Cell::new(px.floor() as i32, py.floor() as i32);
    if !grid.contains(cell) || !px.is_finite() || !py.is_finite() {
        return Err(SimError::Argument(format!(
            "ray origin ({:.3}, {:.3}) outside the grid",
            origin[0], origin[1]
        )));
    }
    if grid.get(cell) == Some(VoxelState::Occupied) {
        out.hit = Some(cell);
        return Ok(());
    }
    let max_t = max_range / res;
    let (dy, dx) = angle.sin_cos();
    let step_x = if dx > 0.0 { 1 } else { -1 };
    let step_y = if dy > 0.0 { 1 } else { -1 };
    let t_delta_x = if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY };
    let t_delta_y = if dy != 0.0 { 1.0 / dy.abs() } else { f64::INFINITY };
    let mut t_max_x = if dx > 0.0 {
        (cell.x as f64 + 1.0 - px) / dx
    } else if dx < 0.0 {
        (px - cell.x as f64) / -dx
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dy > 0.0 {
        (cell.y as f64 + 1.0 - py) / dy
    } else if dy < 0.0 {
        (py - cell.y as f64) / -dy
    } else {
        f64::INFINITY
    };
    loop {
        out.cells.push(cell);
        let t_next = t_max_x.min(t_max_y);
        if t_next >= max_t {
            return Ok(());
        }
        if t_max_x < t_max_y {
            cell.x += step_x;
            t_max_x += t_delta_x;
        } else if t_max_y < t_max_x {
            cell.y += step_y;
            t_max_y += t_delta_y;
        } else {
            cell.x += step_x;
            cell.y += step_y;
            t_max_x += t_delta_x;
            t_max_y += t_delta_y;
        }
        match grid.get(cell) {
            None => return Ok(()),
            Some(VoxelState::Occupied) => {
                out.hit = Some(cell);
                return Ok(());
            }
            Some(_) => {}
        }
    }
}

/// Travel time for a motion, ignoring the planner's cost floor.
pub fn traversal_time(path_length: f64, delta_yaw: f64, robot: &RobotModel) -> Result<f64, SimError> {
    if !(path_length >= 0.0) {
        return Err(SimError::Argument(format!("negative path length {path_length}")));
    }
    let translate = path_length / robot.v_max;
    let rotate = delta_yaw.abs() / robot.omega_max;
    Ok(match robot.motion {
        MotionModel::Simultaneous => translate.max(rotate),
        MotionModel::Sequential => translate + rotate,
    })
}

/// Length in meters of an 8-connected cell path.
pub fn path_length(path: &[Cell], resolution: f64) -> f64 {
    path.windows(2)
        .map(|w| {
            let dx = (w[1].x - w[0].x).abs();
            let dy = (w[1].y - w[0].y).abs();
            if dx + dy == 2 {
                std::f64::consts::SQRT_2 * resolution
            } else {
                (dx + dy) as f64 * resolution
            }
        })
        .sum()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub robot: RobotModel,
    pub sensor: SensorModel,
    /// Sense at every intermediate path cell, not only at the target.
    pub sense_along_path: bool,
}

/// Outcome of executing one motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub newly_observed: usize,
    pub duration: f64,
    pub path_length: f64,
}

/// One episode's world, robot belief and accounting.
#[derive(Debug, Clone)]
pub struct SimState {
    pub ground_truth: Arc<OccupancyGrid>,
    pub belief: OccupancyGrid,
    pub robot: Pose,
    pub elapsed_time: f64,
    pub distance_traveled: f64,
    pub config: SimConfig,
    known_cells: usize,
    ray_buf: RayResult,
}

impl SimState {
    pub fn new(ground_truth: Arc<OccupancyGrid>, start: Pose, config: SimConfig) -> Result<Self, SimError> {
        config.sensor.validate()?;
        let belief = ground_truth.blank_like(VoxelState::Unknown);
        let state = Self {
            ground_truth,
            belief,
            robot: start,
            elapsed_time: 0.0,
            distance_traveled: 0.0,
            config,
            known_cells: 0,
            ray_buf: RayResult::default(),
        };
        state.check_robot_free()?;
        Ok(state)
    }

    pub fn robot_cell(&self) -> Cell {
        self.belief.world_to_cell(self.robot.x, self.robot.y)
    }

    /// Number of non-unknown belief cells.
    pub fn known_cells(&self) -> usize {
        self.known_cells
    }

    fn check_robot_free(&self) -> Result<(), SimError> {
        let c = self.robot_cell();
        match self.ground_truth.get(c) {
            Some(VoxelState::Free) => Ok(()),
            Some(_) => Err(SimError::Integrity(format!("robot in occupied cell {c:?}"))),
            None => Err(SimError::Integrity(format!("robot outside the world at {c:?}"))),
        }
    }

    /// Casts the sensor fan at the current pose and returns the cells whose
    /// belief changed from unknown.
    pub fn sense(&mut self) -> Result<Vec<Cell>, SimError> {
        self.check_robot_free()?;
        let sensor = self.config.sensor;
        let origin = [self.robot.x, self.robot.y];
        let n = sensor.rays_per_scan;
        let mut newly = Vec::new();
        let mut buf = std::mem::take(&mut self.ray_buf);
        for i in 0..n {
            let angle = self.robot.yaw - sensor.fov / 2.0 + sensor.fov * i as f64 / (n - 1) as f64;
            raycast_into(&self.ground_truth, origin, angle, sensor.range, &mut buf)?;
            for &c in &buf.cells {
                if self.belief.get(c) == Some(VoxelState::Unknown) {
                    self.belief.set(c, VoxelState::Free);
                    newly.push(c);
                }
            }
            if let Some(h) = buf.hit {
                if self.belief.get(h) == Some(VoxelState::Unknown) {
                    self.belief.set(h, VoxelState::Occupied);
                    newly.push(h);
                }
            }
        }
        self.ray_buf = buf;
        self.known_cells += newly.len();
        Ok(newly)
    }

    /// Senses while turning through a full circle in four quarter turns.
    pub fn scan_in_place(&mut self) -> Result<usize, SimError> {
        let mut observed = self.sense()?.len();
        for _ in 0..3 {
            let dt = traversal_time(0.0, FRAC_PI_2, &self.config.robot)?;
            self.robot = self.robot.with_yaw(self.robot.yaw + FRAC_PI_2);
            self.elapsed_time += dt;
            observed += self.sense()?.len();
        }
        Ok(observed)
    }

    /// Moves along `path` (global cells from the robot cell to the target
    /// cell), accounts time and distance, then senses at the target.
    pub fn step(&mut self, target: &Pose, path: &[Cell]) -> Result<StepOutcome, SimError> {
        let res = self.belief.resolution();
        let target_cell = self.belief.world_to_cell(target.x, target.y);
        if let (Some(first), Some(last)) = (path.first(), path.last()) {
            if *first != self.robot_cell() {
                return Err(SimError::PlanningContract(format!(
                    "path starts at {first:?}, robot is at {:?}",
                    self.robot_cell()
                )));
            }
            if *last != target_cell {
                return Err(SimError::PlanningContract(format!(
                    "path ends at {last:?}, target is in {target_cell:?}"
                )));
            }
        } else if target_cell != self.robot_cell() {
            return Err(SimError::PlanningContract("empty path to a different cell".into()));
        }
        for w in path.windows(2) {
            if (w[1].x - w[0].x).abs() > 1 || (w[1].y - w[0].y).abs() > 1 {
                return Err(SimError::PlanningContract(format!(
                    "path jumps from {:?} to {:?}",
                    w[0], w[1]
                )));
            }
        }
        for &c in path {
            if self.belief.get(c) != Some(VoxelState::Free) && c != path[0] {
                return Err(SimError::PlanningContract(format!(
                    "path crosses non-free belief cell {c:?} ({:?})",
                    self.belief.get(c)
                )));
            }
        }
        let length = path_length(path, res);
        let dyaw = angle_diff(target.yaw, self.robot.yaw);
        let duration = traversal_time(length, dyaw, &self.config.robot)?;
        let mut newly_observed = 0;
        if self.config.sense_along_path && path.len() > 2 {
            for &c in &path[1..path.len() - 1] {
                let [x, y] = self.belief.cell_center(c);
                self.robot = Pose::new(x, y, target.yaw);
                newly_observed += self.sense()?.len();
            }
        }
        self.robot = *target;
        self.elapsed_time += duration;
        self.distance_traveled += length;
        newly_observed += self.sense()?.len();
        Ok(StepOutcome {
            newly_observed,
            duration,
            path_length: length,
        })
    }
}

/// Square window of the belief around the robot, aligned with the world axes.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMap {
    size: usize,
    resolution: f64,
    /// Global cell of local cell (0, 0).
    offset: Cell,
    /// World coordinates of global cell (0, 0).
    anchor: [f64; 2],
    cells: Vec<VoxelState>,
    pub robot_yaw: f64,
}

impl LocalMap {
    /// Builds a local map from raw cells. `offset` is the global cell of the
    /// window corner; the robot sits at local cell (size/2, size/2).
    pub fn from_cells(size: usize, resolution: f64, offset: Cell, cells: Vec<VoxelState>, robot_yaw: f64) -> Self {
        assert_eq!(cells.len(), size * size, "local map cell count");
        Self {
            size,
            resolution,
            offset,
            anchor: [0.0, 0.0],
            cells,
            robot_yaw: normalize_angle(robot_yaw),
        }
    }

    /// Sets the world coordinates of the global grid's cell (0, 0).
    pub fn with_anchor(mut self, anchor: [f64; 2]) -> Self {
        self.anchor = anchor;
        self
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn cells(&self) -> &[VoxelState] {
        &self.cells
    }

    pub fn offset(&self) -> Cell {
        self.offset
    }

    /// Local cell of the robot.
    pub fn robot_cell(&self) -> Cell {
        let h = (self.size / 2) as i32;
        Cell::new(h, h)
    }

    pub fn robot_position(&self) -> [f64; 2] {
        self.cell_center(self.robot_cell())
    }

    pub fn to_global(&self, local: Cell) -> Cell {
        Cell::new(local.x + self.offset.x, local.y + self.offset.y)
    }

    pub fn to_local(&self, global: Cell) -> Cell {
        Cell::new(global.x - self.offset.x, global.y - self.offset.y)
    }

    /// Side length in meters.
    pub fn extent(&self) -> f64 {
        self.size as f64 * self.resolution
    }

    pub fn set(&mut self, cell: Cell, state: VoxelState) {
        if self.contains(cell) {
            self.cells[cell.y as usize * self.size + cell.x as usize] = state;
        }
    }
}

impl GridView for LocalMap {
    fn resolution(&self) -> f64 {
        self.resolution
    }

    fn origin(&self) -> [f64; 2] {
        [
            self.anchor[0] + self.offset.x as f64 * self.resolution,
            self.anchor[1] + self.offset.y as f64 * self.resolution,
        ]
    }

    fn dims(&self) -> (i32, i32) {
        (self.size as i32, self.size as i32)
    }

    fn state(&self, cell: Cell) -> Option<VoxelState> {
        if self.contains(cell) {
            Some(self.cells[cell.y as usize * self.size + cell.x as usize])
        } else {
            None
        }
    }
}

/// Window of the belief centred on the robot cell; cells beyond the world
/// are reported occupied.
pub fn extract_local_map(state: &SimState) -> LocalMap {
    let size = state.config.sensor.local_map_cells(state.belief.resolution());
    local_map_around(&state.belief, state.robot_cell(), state.robot.yaw, size)
}

pub fn local_map_around(belief: &OccupancyGrid, center: Cell, yaw: f64, size: usize) -> LocalMap {
    let half = (size / 2) as i32;
    let offset = Cell::new(center.x - half, center.y - half);
    let mut cells = Vec::with_capacity(size * size);
    for y in 0..size as i32 {
        for x in 0..size as i32 {
            let g = Cell::new(offset.x + x, offset.y + y);
            cells.push(belief.get(g).unwrap_or(VoxelState::Occupied));
        }
    }
    LocalMap::from_cells(size, belief.resolution(), offset, cells, yaw).with_anchor(belief.origin())
}

/// Cells observable by the sensor from any footprint-reachable position of
/// the ground truth, sensing in all directions with the configured angular
/// ray spacing.
pub fn observable_cells(ground_truth: &OccupancyGrid, start: &Pose, config: &SimConfig) -> Vec<bool> {
    let res = ground_truth.resolution();
    let kernel = InflationKernel::new(config.robot.footprint_radius, res);
    let trav = TraversabilityMap::new(ground_truth, &kernel);
    let start_cell = ground_truth.world_to_cell(start.x, start.y);
    let field = DistanceField::compute(ground_truth, &trav, start_cell);
    let sensor = config.sensor;
    let spacing = sensor.fov / (sensor.rays_per_scan - 1) as f64;
    let n_rays = (2.0 * PI / spacing).ceil() as usize;
    let mut seen = vec![false; ground_truth.width() * ground_truth.height()];
    let mut buf = RayResult::default();
    for &c in field.reached() {
        let origin = ground_truth.cell_center(c);
        for k in 0..n_rays {
            let angle = -PI + 2.0 * PI * k as f64 / n_rays as f64;
            if raycast_into(ground_truth, origin, angle, sensor.range, &mut buf).is_err() {
                continue;
            }
            for &v in buf.cells.iter().chain(buf.hit.iter()) {
                if let Some(i) = ground_truth.index(v) {
                    seen[i] = true;
                }
            }
        }
    }
    seen
}

/// Fraction of observable cells that are known in the belief.
pub fn coverage(belief: &OccupancyGrid, observable: &[bool]) -> f64 {
    let total = observable.iter().filter(|&&o| o).count();
    if total == 0 {
        return 1.0;
    }
    let known = belief
        .cells()
        .iter()
        .zip(observable)
        .filter(|(s, &o)| o && **s != VoxelState::Unknown)
        .count();
    known as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_world(n: usize) -> Arc<OccupancyGrid> {
        let mut g = OccupancyGrid::filled(n, n, 0.2, [0.0, 0.0], VoxelState::Free);
        for i in 0..n as i32 {
            for c in [
                Cell::new(i, 0),
                Cell::new(i, n as i32 - 1),
                Cell::new(0, i),
                Cell::new(n as i32 - 1, i),
            ] {
                g.set(c, VoxelState::Occupied);
            }
        }
        Arc::new(g)
    }

    #[test]
    fn normalize_angle_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(normalize_angle(0.0), 0.0);
    }

    #[test]
    fn traversal_time_examples() {
        let r = RobotModel::default();
        assert_eq!(traversal_time(2.0, 0.0, &r).unwrap(), 2.0);
        assert_eq!(traversal_time(0.0, PI, &r).unwrap(), PI);
        assert_eq!(traversal_time(1.0, 3.0, &r).unwrap(), 3.0);
        let seq = RobotModel {
            motion: MotionModel::Sequential,
            ..r
        };
        assert_eq!(traversal_time(1.0, 3.0, &seq).unwrap(), 4.0);
        assert!(matches!(traversal_time(-1.0, 0.0, &r), Err(SimError::Argument(_))));
    }

    #[test]
    fn unobstructed_ray_reaches_max_range() {
        let g = OccupancyGrid::filled(100, 100, 0.2, [0.0, 0.0], VoxelState::Free);
        for k in 0..16 {
            let angle = k as f64 * 0.39;
            let r = raycast(&g, [10.05, 9.93], angle, 5.0).unwrap();
            assert!(r.hit.is_none());
            let last = g.cell_center(*r.cells.last().unwrap());
            let d = (last[0] - 10.05).hypot(last[1] - 9.93);
            assert!((d - 5.0).abs() <= 0.2 * std::f64::consts::SQRT_2, "angle {angle}: {d}");
        }
    }

    #[test]
    fn wall_ahead_is_hit() {
        let mut g = OccupancyGrid::filled(100, 100, 0.2, [0.0, 0.0], VoxelState::Free);
        // Robot at x = 5.1; wall starting 2.0 m ahead.
        for y in 0..100 {
            g.set(Cell::new(35, y), VoxelState::Occupied);
        }
        let r = raycast(&g, [5.1, 10.1], 0.0, 5.0).unwrap();
        let hit = r.hit.expect("wall hit");
        let d = g.cell_center(hit)[0] - 5.1;
        assert!((d - 2.0).abs() <= 0.2, "hit at {d}");
    }

    #[test]
    fn ray_origin_outside_is_an_error() {
        let g = OccupancyGrid::filled(10, 10, 0.2, [0.0, 0.0], VoxelState::Free);
        assert!(matches!(raycast(&g, [-0.1, 0.5], 0.0, 1.0), Err(SimError::Argument(_))));
    }

    #[test]
    fn sensing_is_idempotent() {
        let world = open_world(60);
        let mut s = SimState::new(world, Pose::new(6.1, 6.1, 0.3), SimConfig::default()).unwrap();
        let first = s.sense().unwrap();
        assert!(!first.is_empty());
        assert!(s.sense().unwrap().is_empty());
        assert_eq!(s.known_cells(), first.len());
    }

    #[test]
    fn sensing_in_obstacle_is_rejected() {
        let world = open_world(20);
        let mut s = SimState::new(world.clone(), Pose::new(2.1, 2.1, 0.0), SimConfig::default()).unwrap();
        s.robot = Pose::new(0.1, 0.1, 0.0);
        assert!(matches!(s.sense(), Err(SimError::Integrity(_))));
        assert!(SimState::new(world, Pose::new(0.1, 0.1, 0.0), SimConfig::default()).is_err());
    }

    #[test]
    fn local_map_at_start_is_unknown_and_edges_are_occupied() {
        let world = open_world(100);
        let s = SimState::new(world.clone(), Pose::new(10.1, 10.1, 0.0), SimConfig::default()).unwrap();
        let lm = extract_local_map(&s);
        assert_eq!(lm.size(), 50);
        assert!(lm.cells().iter().all(|&c| c == VoxelState::Unknown));

        let s = SimState::new(world, Pose::new(0.3, 10.1, 1.0), SimConfig::default()).unwrap();
        let lm = extract_local_map(&s);
        // Robot in global column 1: local columns 0..24 map to x < 0.
        for y in 0..50 {
            for x in 0..24 {
                assert_eq!(lm.state(Cell::new(x, y)), Some(VoxelState::Occupied));
            }
        }
        let mut rotated = s.clone();
        rotated.robot = rotated.robot.with_yaw(2.5);
        let lm2 = extract_local_map(&rotated);
        assert_eq!(lm.cells(), lm2.cells());
        assert_ne!(lm.robot_yaw, lm2.robot_yaw);
    }

    #[test]
    fn step_accounts_distance_and_time() {
        let world = open_world(60);
        let mut s = SimState::new(world, Pose::new(3.1, 3.1, 0.0), SimConfig::default()).unwrap();
        s.scan_in_place().unwrap();
        let a = s.robot;
        let t0 = s.elapsed_time;
        let ca = s.robot_cell();
        let path: Vec<Cell> = (0..=5).map(|i| ca.offset(i, 0)).collect();
        let b_center = s.belief.cell_center(*path.last().unwrap());
        let b = Pose::new(b_center[0], b_center[1], a.yaw);
        let out = s.step(&b, &path).unwrap();
        assert!((out.path_length - 1.0).abs() < 1e-12);
        let back: Vec<Cell> = path.iter().rev().copied().collect();
        s.step(&a, &back).unwrap();
        assert!((s.distance_traveled - 2.0).abs() < 1e-12);
        assert!((s.elapsed_time - t0 - 2.0).abs() < 1e-12);

        // Null motion leaves the accounting unchanged.
        let (t, d) = (s.elapsed_time, s.distance_traveled);
        let here = s.robot;
        let cell = s.robot_cell();
        s.step(&here, &[cell]).unwrap();
        assert_eq!((s.elapsed_time, s.distance_traveled), (t, d));
    }

    #[test]
    fn step_through_obstacle_is_rejected() {
        let mut g = (*open_world(40)).clone();
        g.set(Cell::new(12, 10), VoxelState::Occupied);
        let mut s = SimState::new(Arc::new(g), Pose::new(2.1, 2.1, 0.0), SimConfig::default()).unwrap();
        s.scan_in_place().unwrap();
        s.robot = Pose::new(2.3, 2.1, 0.0);
        let path: Vec<Cell> = (11..=13).map(|x| Cell::new(x, 10)).collect();
        let err = s.step(&Pose::new(2.7, 2.1, 0.0), &path).unwrap_err();
        assert!(matches!(err, SimError::PlanningContract(_)));
    }
}
