//! Frontier-based global planner used to leave local minima.

use std::collections::{HashSet, VecDeque};

use crate::grid_world::{Cell, GridView, OccupancyGrid, VoxelState};
use crate::planning::gain::optimize_orientation;
use crate::planning::reach::{DistanceField, InflationKernel, TraversabilityMap};
use crate::sim::{Pose, RobotModel, SensorModel};

/// Chebyshev radius searched around a frontier cell for a reachable cell to
/// observe it from.
const ACCESS_RADIUS: i32 = 3;

/// Free cells with at least one 4-neighbour in the unknown state.
pub fn frontier_cells(belief: &OccupancyGrid) -> Vec<Cell> {
    let mut out = Vec::new();
    for (i, &s) in belief.cells().iter().enumerate() {
        if s != VoxelState::Free {
            continue;
        }
        let c = belief.cell_at(i);
        if [(1, 0), (-1, 0), (0, 1), (0, -1)]
            .iter()
            .any(|&(dx, dy)| belief.get(c.offset(dx, dy)) == Some(VoxelState::Unknown))
        {
            out.push(c);
        }
    }
    out
}

/// Groups frontier cells into 8-connected clusters, in first-cell order.
pub fn cluster_frontiers(cells: &[Cell]) -> Vec<Vec<Cell>> {
    let set: HashSet<Cell> = cells.iter().copied().collect();
    let mut seen = HashSet::new();
    let mut clusters = Vec::new();
    for &c in cells {
        if !seen.insert(c) {
            continue;
        }
        let mut cluster = vec![c];
        let mut queue = VecDeque::from([c]);
        while let Some(p) = queue.pop_front() {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let n = p.offset(dx, dy);
                    if set.contains(&n) && seen.insert(n) {
                        cluster.push(n);
                        queue.push_back(n);
                    }
                }
            }
        }
        cluster.sort();
        clusters.push(cluster);
    }
    clusters
}

/// Goal chosen by the global planner.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalPlan {
    pub goal: Pose,
    /// Global cells from the robot cell to the goal cell.
    pub path: Vec<Cell>,
    pub path_length: f64,
    /// Frontier cells of the targeted cluster.
    pub cluster: Vec<Cell>,
}

/// Plans to the nearest (by path length) frontier cluster. The goal is the
/// reachable cell closest to the cluster's frontier cell nearest its
/// centroid. Blacklisted frontier cells are ignored. `None` when no frontier
/// can be reached.
pub fn global_frontier_plan(
    belief: &OccupancyGrid,
    robot: &Pose,
    robot_model: &RobotModel,
    sensor: &SensorModel,
    yaw_bins: usize,
    blacklist: &HashSet<Cell>,
) -> Option<GlobalPlan> {
    let frontiers: Vec<Cell> = frontier_cells(belief)
        .into_iter()
        .filter(|c| !blacklist.contains(c))
        .collect();
    if frontiers.is_empty() {
        return None;
    }
    let kernel = InflationKernel::new(robot_model.footprint_radius, belief.resolution());
    let trav = TraversabilityMap::new(belief, &kernel);
    let start = belief.world_to_cell(robot.x, robot.y);
    let field = DistanceField::compute(belief, &trav, start);

    // Closest reachable cell near a frontier cell, by path length.
    let access = |f: Cell| -> Option<(f64, Cell)> {
        let mut best: Option<(f64, Cell)> = None;
        for dy in -ACCESS_RADIUS..=ACCESS_RADIUS {
            for dx in -ACCESS_RADIUS..=ACCESS_RADIUS {
                let a = f.offset(dx, dy);
                if let Some(d) = field.distance(a) {
                    if best.is_none_or(|(bd, bc)| d < bd || (d == bd && a < bc)) {
                        best = Some((d, a));
                    }
                }
            }
        }
        best
    };

    let mut best: Option<(f64, usize)> = None;
    let clusters = cluster_frontiers(&frontiers);
    for (k, cluster) in clusters.iter().enumerate() {
        let d = cluster
            .iter()
            .filter_map(|&f| access(f).map(|(d, _)| d))
            .fold(f64::INFINITY, f64::min);
        if d.is_finite() && best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, k));
        }
    }
    let (_, k) = best?;
    let cluster = &clusters[k];
    let n = cluster.len() as f64;
    let cx = cluster.iter().map(|c| c.x as f64).sum::<f64>() / n;
    let cy = cluster.iter().map(|c| c.y as f64).sum::<f64>() / n;
    let centroid_dist = |f: &Cell| (f.x as f64 - cx).powi(2) + (f.y as f64 - cy).powi(2);
    let frontier = *cluster
        .iter()
        .filter(|&&f| access(f).is_some())
        .min_by(|a, b| centroid_dist(a).total_cmp(&centroid_dist(b)).then(a.cmp(b)))?;
    let (_, goal) = access(frontier)?;
    let path = field.path_to(goal)?;
    let center = belief.cell_center(goal);
    let yaw = match optimize_orientation(belief, center, sensor, yaw_bins) {
        Ok((yaw, g)) if g > 0 => yaw,
        _ => {
            let f = belief.cell_center(frontier);
            (f[1] - center[1]).atan2(f[0] - center[0])
        }
    };
    Some(GlobalPlan {
        goal: Pose::new(center[0], center[1], yaw),
        path_length: field.distance(goal).unwrap_or(0.0),
        path,
        cluster: cluster.clone(),
    })
}
