//! Footprint inflation, distance fields and A* over 8-connected cell grids.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;

use crate::grid_world::{Cell, GridView, VoxelState};
use crate::sim::{LocalMap, Pose, RobotModel};

/// Offsets of cells whose square comes closer than the footprint radius to
/// the center of the robot's cell.
#[derive(Debug, Clone, PartialEq)]
pub struct InflationKernel {
    offsets: Vec<Cell>,
}

impl InflationKernel {
    pub fn new(radius_m: f64, resolution: f64) -> Self {
        let r = radius_m / resolution;
        let reach = r.ceil() as i32 + 1;
        let mut offsets = Vec::new();
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                // Nearest point of the offset cell's square to (0, 0).
                let nx = (dx.abs() as f64 - 0.5).max(0.0);
                let ny = (dy.abs() as f64 - 0.5).max(0.0);
                if nx.hypot(ny) < r {
                    offsets.push(Cell::new(dx, dy));
                }
            }
        }
        Self { offsets }
    }

    pub fn offsets(&self) -> &[Cell] {
        &self.offsets
    }
}

/// Per-cell traversability: free, and no occupied, unknown or out-of-view
/// cell inside the footprint kernel.
#[derive(Debug, Clone)]
pub struct TraversabilityMap {
    width: i32,
    height: i32,
    traversable: Vec<bool>,
}

impl TraversabilityMap {
    pub fn new<V: GridView + ?Sized>(view: &V, kernel: &InflationKernel) -> Self {
        let (w, h) = view.dims();
        let n = (w * h) as usize;
        let mut blocked = vec![false; n];
        let mut traversable = vec![false; n];
        for y in 0..h {
            for x in 0..w {
                let c = Cell::new(x, y);
                if view.state(c) != Some(VoxelState::Free) {
                    blocked[(y * w + x) as usize] = true;
                }
            }
        }
        for y in 0..h {
            for x in 0..w {
                let i = (y * w + x) as usize;
                if blocked[i] {
                    continue;
                }
                traversable[i] = kernel.offsets().iter().all(|o| {
                    let (nx, ny) = (x + o.x, y + o.y);
                    nx >= 0 && ny >= 0 && nx < w && ny < h && !blocked[(ny * w + nx) as usize]
                });
            }
        }
        Self {
            width: w,
            height: h,
            traversable,
        }
    }

    pub fn is_traversable(&self, c: Cell) -> bool {
        c.x >= 0
            && c.y >= 0
            && c.x < self.width
            && c.y < self.height
            && self.traversable[(c.y * self.width + c.x) as usize]
    }

    pub fn dims(&self) -> (i32, i32) {
        (self.width, self.height)
    }
}

const NEIGHBOURS: [(i32, i32); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Whether a move from `c` by (dx, dy) is allowed: target traversable and,
/// for diagonal moves, both side cells traversable.
fn move_allowed(trav: &TraversabilityMap, c: Cell, dx: i32, dy: i32) -> bool {
    let n = c.offset(dx, dy);
    if !trav.is_traversable(n) {
        return false;
    }
    if dx != 0 && dy != 0 {
        trav.is_traversable(c.offset(dx, 0)) && trav.is_traversable(c.offset(0, dy))
    } else {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct QueueEntry {
    key: f64,
    cost: f64,
    index: usize,
}

impl Eq for QueueEntry {}

impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on key, then on index for determinism.
        other
            .key
            .total_cmp(&self.key)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest path lengths (meters) over traversable cells.
/// The source cell is always expanded, even if it is not traversable.
#[derive(Debug, Clone)]
pub struct DistanceField {
    width: i32,
    height: i32,
    resolution: f64,
    source: Cell,
    dist: Vec<f64>,
    parent: Vec<u32>,
    order: Vec<Cell>,
}

impl DistanceField {
    pub fn compute<V: GridView + ?Sized>(view: &V, trav: &TraversabilityMap, source: Cell) -> Self {
        let (w, h) = trav.dims();
        let n = (w * h) as usize;
        let res = view.resolution();
        let mut dist = vec![f64::INFINITY; n];
        let mut parent = vec![u32::MAX; n];
        let mut order = Vec::new();
        let mut done = vec![false; n];
        let in_bounds = |c: Cell| c.x >= 0 && c.y >= 0 && c.x < w && c.y < h;
        if in_bounds(source) {
            let si = (source.y * w + source.x) as usize;
            dist[si] = 0.0;
            let mut heap = BinaryHeap::from([QueueEntry {
                key: 0.0,
                cost: 0.0,
                index: si,
            }]);
            while let Some(QueueEntry { cost, index, .. }) = heap.pop() {
                if done[index] {
                    continue;
                }
                done[index] = true;
                let c = Cell::new(index as i32 % w, index as i32 / w);
                order.push(c);
                for (dx, dy) in NEIGHBOURS {
                    if !move_allowed(trav, c, dx, dy) {
                        continue;
                    }
                    let nc = c.offset(dx, dy);
                    let ni = (nc.y * w + nc.x) as usize;
                    let step = if dx != 0 && dy != 0 { SQRT_2 * res } else { res };
                    let nd = cost + step;
                    if nd < dist[ni] {
                        dist[ni] = nd;
                        parent[ni] = index as u32;
                        heap.push(QueueEntry {
                            key: nd,
                            cost: nd,
                            index: ni,
                        });
                    }
                }
            }
        }
        Self {
            width: w,
            height: h,
            resolution: res,
            source,
            dist,
            parent,
            order,
        }
    }

    pub fn source(&self) -> Cell {
        self.source
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    fn idx(&self, c: Cell) -> Option<usize> {
        (c.x >= 0 && c.y >= 0 && c.x < self.width && c.y < self.height).then(|| (c.y * self.width + c.x) as usize)
    }

    /// Path length in meters, `None` when unreachable.
    pub fn distance(&self, c: Cell) -> Option<f64> {
        self.idx(c).map(|i| self.dist[i]).filter(|d| d.is_finite())
    }

    pub fn is_reachable(&self, c: Cell) -> bool {
        self.distance(c).is_some()
    }

    /// Reached cells in settlement order (non-decreasing distance).
    pub fn reached(&self) -> &[Cell] {
        &self.order
    }

    /// Cell path from the source to `c`, inclusive.
    pub fn path_to(&self, c: Cell) -> Option<Vec<Cell>> {
        let mut i = self.idx(c)?;
        if !self.dist[i].is_finite() {
            return None;
        }
        let mut path = vec![c];
        while self.parent[i] != u32::MAX {
            i = self.parent[i] as usize;
            path.push(Cell::new(i as i32 % self.width, i as i32 / self.width));
        }
        path.reverse();
        Some(path)
    }
}

/// Distance field over a local map from its robot cell.
pub fn local_distance_field(local: &LocalMap, robot: &RobotModel) -> (TraversabilityMap, DistanceField) {
    let kernel = InflationKernel::new(robot.footprint_radius, local.resolution());
    let trav = TraversabilityMap::new(local, &kernel);
    let field = DistanceField::compute(local, &trav, local.robot_cell());
    (trav, field)
}

/// A* shortest path in local-map cells between the cells of two poses, with
/// footprint inflation; 8-connected, diagonal steps cost sqrt(2) cells.
pub fn reachable_path(local: &LocalMap, from: &Pose, to: &Pose, robot: &RobotModel) -> Option<Vec<Cell>> {
    let kernel = InflationKernel::new(robot.footprint_radius, local.resolution());
    let trav = TraversabilityMap::new(local, &kernel);
    let start = local.world_to_cell(from.x, from.y);
    let goal = local.world_to_cell(to.x, to.y);
    astar(local, &trav, start, goal)
}

pub fn astar<V: GridView + ?Sized>(view: &V, trav: &TraversabilityMap, start: Cell, goal: Cell) -> Option<Vec<Cell>> {
    let (w, h) = trav.dims();
    let in_bounds = |c: Cell| c.x >= 0 && c.y >= 0 && c.x < w && c.y < h;
    if !in_bounds(start) || !in_bounds(goal) {
        return None;
    }
    if start == goal {
        return Some(vec![start]);
    }
    if !trav.is_traversable(goal) {
        return None;
    }
    let res = view.resolution();
    let heuristic = |c: Cell| {
        let dx = (c.x - goal.x).abs() as f64;
        let dy = (c.y - goal.y).abs() as f64;
        (dx.max(dy) - dx.min(dy) + SQRT_2 * dx.min(dy)) * res
    };
    let n = (w * h) as usize;
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![u32::MAX; n];
    let mut closed = vec![false; n];
    let si = (start.y * w + start.x) as usize;
    let gi = (goal.y * w + goal.x) as usize;
    g[si] = 0.0;
    let mut heap = BinaryHeap::from([QueueEntry {
        key: heuristic(start),
        cost: 0.0,
        index: si,
    }]);
    while let Some(QueueEntry { cost, index, .. }) = heap.pop() {
        if closed[index] {
            continue;
        }
        if index == gi {
            let mut path = vec![goal];
            let mut i = gi;
            while parent[i] != u32::MAX {
                i = parent[i] as usize;
                path.push(Cell::new(i as i32 % w, i as i32 / w));
            }
            path.reverse();
            return Some(path);
        }
        closed[index] = true;
        let c = Cell::new(index as i32 % w, index as i32 / w);
        for (dx, dy) in NEIGHBOURS {
            if !move_allowed(trav, c, dx, dy) {
                continue;
            }
            let nc = c.offset(dx, dy);
            let ni = (nc.y * w + nc.x) as usize;
            let step = if dx != 0 && dy != 0 { SQRT_2 * res } else { res };
            let nd = cost + step;
            if nd < g[ni] {
                g[ni] = nd;
                parent[ni] = index as u32;
                heap.push(QueueEntry {
                    key: nd + heuristic(nc),
                    cost: nd,
                    index: ni,
                });
            }
        }
    }
    None
}
