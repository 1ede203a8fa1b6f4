//! Visible-unknown information gain.
//!
//! The sensor sits at the center of the pose's cell. A cell is visible when
//! its center lies within range and field of view and the open segment
//! between the two centers passes through the interior of free cells only.
//! Cells touched only at a corner do not block. Unknown cells are counted
//! when visible, and block whatever lies behind them.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use crate::grid_world::{Cell, GridView, VoxelState};
use crate::planning::PlanError;
use crate::sim::{normalize_angle, Pose, SensorModel};

/// Angular slack when testing whether a bearing lies inside the field of view.
pub const FOV_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
struct StencilEntry {
    dx: i16,
    dy: i16,
    bearing: f64,
    path_start: u32,
    path_len: u16,
}

/// Offsets within sensor range, sorted by bearing, each with the cells its
/// line of sight passes through.
#[derive(Debug)]
pub struct ViewStencil {
    entries: Vec<StencilEntry>,
    path_cells: Vec<(i16, i16)>,
}

impl ViewStencil {
    pub fn new(range_cells: f64) -> Self {
        let r = range_cells.floor() as i32;
        let r2 = range_cells * range_cells + 1e-6;
        let mut entries = Vec::new();
        let mut path_cells = Vec::new();
        let mut buf = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                if (dx == 0 && dy == 0) || ((dx * dx + dy * dy) as f64) > r2 {
                    continue;
                }
                line_of_sight_cells(dx, dy, &mut buf);
                entries.push(StencilEntry {
                    dx: dx as i16,
                    dy: dy as i16,
                    bearing: (dy as f64).atan2(dx as f64),
                    path_start: path_cells.len() as u32,
                    path_len: buf.len() as u16,
                });
                path_cells.extend(buf.iter().map(|&(x, y)| (x as i16, y as i16)));
            }
        }
        entries.sort_by(|a, b| a.bearing.total_cmp(&b.bearing).then((a.dx, a.dy).cmp(&(b.dx, b.dy))));
        Self { entries, path_cells }
    }

    /// Stencil shared per range (in cells).
    pub fn shared(range_cells: f64) -> Arc<ViewStencil> {
        static CACHE: OnceLock<Mutex<HashMap<u64, Arc<ViewStencil>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().unwrap_or_else(|p| p.into_inner());
        guard
            .entry(range_cells.to_bits())
            .or_insert_with(|| Arc::new(ViewStencil::new(range_cells)))
            .clone()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn visible<V: GridView + ?Sized>(&self, view: &V, origin: Cell, e: &StencilEntry) -> bool {
        let path = &self.path_cells[e.path_start as usize..e.path_start as usize + e.path_len as usize];
        path.iter()
            .all(|&(x, y)| view.state(origin.offset(x as i32, y as i32)) == Some(VoxelState::Free))
    }

    /// Index ranges of entries whose bearing lies within `half` of `yaw`.
    fn fov_ranges(&self, yaw: f64, half: f64) -> [(usize, usize); 2] {
        let n = self.entries.len();
        if half + FOV_EPS >= PI {
            return [(0, n), (0, 0)];
        }
        let lo = normalize_angle(yaw - half - FOV_EPS);
        let hi = lo + 2.0 * (half + FOV_EPS);
        let first = |a: f64| self.entries.partition_point(|e| e.bearing < a);
        let last = |a: f64| self.entries.partition_point(|e| e.bearing <= a);
        if hi <= PI {
            [(first(lo), last(hi)), (0, 0)]
        } else {
            [(first(lo), n), (0, last(hi - 2.0 * PI))]
        }
    }

    /// Bearings of all visible unknown cells around `origin`, full circle.
    pub fn visible_unknown_bearings<V: GridView + ?Sized>(&self, view: &V, origin: Cell, out: &mut Vec<f64>) {
        out.clear();
        for e in &self.entries {
            let c = origin.offset(e.dx as i32, e.dy as i32);
            if view.state(c) == Some(VoxelState::Unknown) && self.visible(view, origin, e) {
                out.push(e.bearing);
            }
        }
    }

    /// Number of visible unknown cells within the field of view.
    pub fn count_in_fov<V: GridView + ?Sized>(&self, view: &V, origin: Cell, yaw: f64, fov: f64) -> u32 {
        let mut count = 0;
        for (a, b) in self.fov_ranges(yaw, fov / 2.0) {
            for e in &self.entries[a..b] {
                let c = origin.offset(e.dx as i32, e.dy as i32);
                if view.state(c) == Some(VoxelState::Unknown) && self.visible(view, origin, e) {
                    count += 1;
                }
            }
        }
        count
    }
}

/// Cells strictly between (0, 0) and (dx, dy) whose interior the segment
/// between the two cell centers crosses, in traversal order. Exact integer
/// arithmetic: an x-boundary crossing happens at t = (2k+1) / (2|dx|).
pub fn line_of_sight_cells(dx: i32, dy: i32, out: &mut Vec<(i32, i32)>) {
    out.clear();
    let (ax, ay) = (dx.abs() as i64, dy.abs() as i64);
    let (sx, sy) = (dx.signum(), dy.signum());
    let (mut k, mut m) = (0i64, 0i64);
    let (mut x, mut y) = (0, 0);
    loop {
        let step_x = k < ax;
        let step_y = m < ay;
        if !step_x && !step_y {
            break;
        }
        match (step_x, step_y) {
            (true, false) => {
                k += 1;
                x += sx;
            }
            (false, true) => {
                m += 1;
                y += sy;
            }
            _ => match ((2 * k + 1) * ay).cmp(&((2 * m + 1) * ax)) {
                std::cmp::Ordering::Less => {
                    k += 1;
                    x += sx;
                }
                std::cmp::Ordering::Greater => {
                    m += 1;
                    y += sy;
                }
                std::cmp::Ordering::Equal => {
                    k += 1;
                    m += 1;
                    x += sx;
                    y += sy;
                }
            },
        }
        if (x, y) != (dx, dy) {
            out.push((x, y));
        }
    }
}

fn pose_cell<V: GridView + ?Sized>(view: &V, pose: &Pose) -> Result<Cell, PlanError> {
    let c = view.world_to_cell(pose.x, pose.y);
    match view.state(c) {
        Some(VoxelState::Free) => Ok(c),
        other => Err(PlanError::InfeasiblePose(format!(
            "pose ({:.2}, {:.2}) lies in {:?} cell",
            pose.x,
            pose.y,
            other.map_or("out-of-map".to_string(), |s| format!("{s:?}"))
        ))),
    }
}

/// Number of unknown cells visible from `pose` under `sensor`.
pub fn compute_gain<V: GridView + ?Sized>(view: &V, pose: &Pose, sensor: &SensorModel) -> Result<u32, PlanError> {
    let origin = pose_cell(view, pose)?;
    let stencil = ViewStencil::shared(sensor.range_cells(view.resolution()));
    Ok(stencil.count_in_fov(view, origin, pose.yaw, sensor.fov))
}

/// Yaw of bin `k` out of `bins` evenly spaced headings starting at 0.
pub fn yaw_bin(k: usize, bins: usize) -> f64 {
    normalize_angle(2.0 * PI * k as f64 / bins as f64)
}

/// Counts visible unknown bearings per yaw bin.
pub fn gains_per_bin(bearings: &[f64], bins: usize, fov: f64) -> Vec<u32> {
    let half = fov / 2.0 + FOV_EPS;
    (0..bins)
        .map(|k| {
            let yaw = yaw_bin(k, bins);
            bearings
                .iter()
                .filter(|&&b| normalize_angle(b - yaw).abs() <= half)
                .count() as u32
        })
        .collect()
}

/// Best of `yaw_bins` evenly spaced headings at `position`; ties go to the
/// lowest bin.
pub fn optimize_orientation<V: GridView + ?Sized>(
    view: &V,
    position: [f64; 2],
    sensor: &SensorModel,
    yaw_bins: usize,
) -> Result<(f64, u32), PlanError> {
    let mut scratch = Vec::new();
    optimize_orientation_with(view, position, sensor, yaw_bins, &mut scratch)
}

pub fn optimize_orientation_with<V: GridView + ?Sized>(
    view: &V,
    position: [f64; 2],
    sensor: &SensorModel,
    yaw_bins: usize,
    scratch: &mut Vec<f64>,
) -> Result<(f64, u32), PlanError> {
    if yaw_bins == 0 {
        return Err(PlanError::Config("yaw_bins must be positive".into()));
    }
    let origin = pose_cell(view, &Pose::new(position[0], position[1], 0.0))?;
    let stencil = ViewStencil::shared(sensor.range_cells(view.resolution()));
    stencil.visible_unknown_bearings(view, origin, scratch);
    let gains = gains_per_bin(scratch, yaw_bins, sensor.fov);
    let mut best = 0;
    for (k, &g) in gains.iter().enumerate() {
        if g > gains[best] {
            best = k;
        }
    }
    Ok((yaw_bin(best, yaw_bins), gains[best]))
}

/// Whether some yaw bin at `cell` sees at least one unknown cell.
pub fn has_positive_gain<V: GridView + ?Sized>(
    view: &V,
    cell: Cell,
    sensor: &SensorModel,
    yaw_bins: usize,
    scratch: &mut Vec<f64>,
) -> bool {
    if view.state(cell) != Some(VoxelState::Free) {
        return false;
    }
    let stencil = ViewStencil::shared(sensor.range_cells(view.resolution()));
    stencil.visible_unknown_bearings(view, cell, scratch);
    if scratch.is_empty() {
        return false;
    }
    let half = sensor.fov / 2.0 + FOV_EPS;
    scratch
        .iter()
        .any(|&b| (0..yaw_bins).any(|k| normalize_angle(b - yaw_bin(k, yaw_bins)).abs() <= half))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::LocalMap;

    fn map(size: usize, f: impl Fn(Cell) -> VoxelState) -> LocalMap {
        let mut cells = Vec::new();
        for y in 0..size as i32 {
            for x in 0..size as i32 {
                cells.push(f(Cell::new(x, y)));
            }
        }
        LocalMap::from_cells(size, 0.2, Cell::new(0, 0), cells, 0.0)
    }

    #[test]
    fn los_cells_axis_and_diagonal() {
        let mut buf = Vec::new();
        line_of_sight_cells(3, 0, &mut buf);
        assert_eq!(buf, vec![(1, 0), (2, 0)]);
        line_of_sight_cells(-2, -2, &mut buf);
        assert_eq!(buf, vec![(-1, -1)]);
        line_of_sight_cells(1, 1, &mut buf);
        assert!(buf.is_empty());
        line_of_sight_cells(2, 1, &mut buf);
        // Crosses y = 0.5 at x = 1.0, an edge midpoint of both cells.
        assert_eq!(buf, vec![(1, 0), (1, 1)]);
    }

    #[test]
    fn fully_known_map_has_zero_gain() {
        let lm = map(50, |_| VoxelState::Free);
        let c = lm.cell_center(Cell::new(25, 25));
        for k in 0..8 {
            let g = compute_gain(&lm, &Pose::new(c[0], c[1], k as f64), &SensorModel::default()).unwrap();
            assert_eq!(g, 0);
        }
    }

    #[test]
    fn pose_in_unknown_is_infeasible() {
        let lm = map(20, |_| VoxelState::Unknown);
        let c = lm.cell_center(Cell::new(5, 5));
        assert!(matches!(
            compute_gain(&lm, &Pose::new(c[0], c[1], 0.0), &SensorModel::default()),
            Err(PlanError::InfeasiblePose(_))
        ));
    }

    #[test]
    fn single_bin_returns_its_yaw() {
        let lm = map(50, |c| {
            if c.y > 30 {
                VoxelState::Unknown
            } else {
                VoxelState::Free
            }
        });
        let c = lm.cell_center(Cell::new(25, 25));
        let (yaw, g) = optimize_orientation(&lm, c, &SensorModel::default(), 1).unwrap();
        assert_eq!(yaw, 0.0);
        assert_eq!(
            g,
            compute_gain(&lm, &Pose::new(c[0], c[1], 0.0), &SensorModel::default()).unwrap()
        );
    }

    #[test]
    fn symmetric_ring_ties_to_bin_zero() {
        let lm = map(60, |c| {
            let d2 = (c.x - 30).pow(2) + (c.y - 30).pow(2);
            if d2 > 100 {
                VoxelState::Unknown
            } else {
                VoxelState::Free
            }
        });
        let c = lm.cell_center(Cell::new(30, 30));
        let bearings = {
            let mut b = Vec::new();
            ViewStencil::shared(25.0).visible_unknown_bearings(&lm, Cell::new(30, 30), &mut b);
            b
        };
        let gains = gains_per_bin(&bearings, 4, std::f64::consts::FRAC_PI_2);
        assert!(gains.iter().all(|&g| g == gains[0]), "{gains:?}");
        let (yaw, _) = optimize_orientation(&lm, c, &SensorModel::default(), 4).unwrap();
        assert_eq!(yaw, 0.0);
    }
}
