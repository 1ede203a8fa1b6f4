//! Brute-force geometric oracles, independent of the traversal and stencil
//! code they check. Everything reduces to one question: for which parameters
//! `t` does the point `p + t d` lie strictly inside an axis-aligned open box?
#![allow(dead_code)]

use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;

use nbv_core::planning::TraversabilityMap;
use nbv_core::sim::normalize_angle;
use nbv_core::{Cell, GridView, OccupancyGrid, Pose, SensorModel, VoxelState};

/// Open interval of `t` with `lo < p + t d < hi`; `None` when empty.
fn slab(p: f64, d: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
    if d == 0.0 {
        return (lo < p && p < hi).then_some((f64::NEG_INFINITY, f64::INFINITY));
    }
    let (a, b) = ((lo - p) / d, (hi - p) / d);
    Some((a.min(b), a.max(b)))
}

/// Open `t`-interval where the ray `p + t d` is inside the open box
/// `(x0, x1) x (y0, y1)`, clipped to `[t0, t1)`.
fn box_interval(p: [f64; 2], d: [f64; 2], x0: f64, x1: f64, y0: f64, y1: f64, t0: f64, t1: f64) -> Option<(f64, f64)> {
    let (ax, bx) = slab(p[0], d[0], x0, x1)?;
    let (ay, by) = slab(p[1], d[1], y0, y1)?;
    let lo = ax.max(ay).max(t0);
    let hi = bx.min(by).min(t1);
    (lo < hi).then_some((lo, hi))
}

/// Cells whose open interior the ray from world point `origin` along `angle`
/// meets before `max_range`, ordered by entry, up to and including the first
/// occupied one (returned separately as the hit).
pub fn ray_cells(grid: &OccupancyGrid, origin: [f64; 2], angle: f64, max_range: f64) -> (Vec<Cell>, Option<Cell>) {
    let res = grid.resolution();
    let o = grid.origin();
    let p = [(origin[0] - o[0]) / res, (origin[1] - o[1]) / res];
    let d = [angle.cos(), angle.sin()];
    let max_t = max_range / res;
    let end = [p[0] + max_t * d[0], p[1] + max_t * d[1]];
    let (w, h) = grid.dims();
    let x_lo = (p[0].min(end[0]).floor() as i32 - 1).max(0);
    let x_hi = (p[0].max(end[0]).ceil() as i32 + 1).min(w - 1);
    let y_lo = (p[1].min(end[1]).floor() as i32 - 1).max(0);
    let y_hi = (p[1].max(end[1]).ceil() as i32 + 1).min(h - 1);
    let mut crossed = Vec::new();
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let (xf, yf) = (x as f64, y as f64);
            if let Some((t, _)) = box_interval(p, d, xf, xf + 1.0, yf, yf + 1.0, 0.0, max_t) {
                crossed.push((t, Cell::new(x, y)));
            }
        }
    }
    crossed.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cells = Vec::new();
    for (_, c) in crossed {
        if grid.get(c) == Some(VoxelState::Occupied) {
            return (cells, Some(c));
        }
        cells.push(c);
    }
    (cells, None)
}

/// Whether the open segment between the centers of cells `a` and `b`
/// passes through the interior of cell `c`.
pub fn segment_crosses(a: Cell, b: Cell, c: Cell) -> bool {
    let p = [a.x as f64, a.y as f64];
    let d = [(b.x - a.x) as f64, (b.y - a.y) as f64];
    let (cx, cy) = (c.x as f64, c.y as f64);
    box_interval(p, d, cx - 0.5, cx + 0.5, cy - 0.5, cy + 0.5, 0.0, 1.0).is_some()
}

/// Whether `target` is visible from `origin`: every cell strictly between
/// them whose interior the center-to-center segment crosses is free.
pub fn line_of_sight<V: GridView>(view: &V, origin: Cell, target: Cell) -> bool {
    for y in origin.y.min(target.y)..=origin.y.max(target.y) {
        for x in origin.x.min(target.x)..=origin.x.max(target.x) {
            let c = Cell::new(x, y);
            if c == origin || c == target {
                continue;
            }
            if segment_crosses(origin, target, c) && view.state(c) != Some(VoxelState::Free) {
                return false;
            }
        }
    }
    true
}

/// Unknown cells within range of `origin` that are in line of sight, with
/// their bearings.
pub fn visible_unknowns<V: GridView>(view: &V, origin: Cell, range_cells: f64) -> Vec<(Cell, f64)> {
    let r = range_cells.floor() as i32;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if (dx == 0 && dy == 0) || f64::from(dx * dx + dy * dy) > range_cells * range_cells + 1e-6 {
                continue;
            }
            let c = origin.offset(dx, dy);
            if view.state(c) == Some(VoxelState::Unknown) && line_of_sight(view, origin, c) {
                out.push((c, f64::from(dy).atan2(f64::from(dx))));
            }
        }
    }
    out
}

pub fn in_fov(bearing: f64, yaw: f64, fov: f64) -> bool {
    normalize_angle(bearing - yaw).abs() <= fov / 2.0 + 1e-9
}

/// Exhaustive per-cell count of visible unknown cells for a pose.
pub fn gain<V: GridView>(view: &V, pose: &Pose, sensor: &SensorModel) -> u32 {
    let origin = view.world_to_cell(pose.x, pose.y);
    visible_unknowns(view, origin, sensor.range / view.resolution())
        .iter()
        .filter(|(_, b)| in_fov(*b, pose.yaw, sensor.fov))
        .count() as u32
}

/// Best yaw bin by exhaustive counting; lowest bin wins ties.
pub fn best_orientation<V: GridView>(view: &V, cell: Cell, sensor: &SensorModel, bins: usize) -> (f64, u32) {
    let vis = visible_unknowns(view, cell, sensor.range / view.resolution());
    let mut best = (normalize_angle(0.0), 0);
    for k in 0..bins {
        let yaw = normalize_angle(2.0 * std::f64::consts::PI * k as f64 / bins as f64);
        let g = vis.iter().filter(|(_, b)| in_fov(*b, yaw, sensor.fov)).count() as u32;
        if k == 0 || g > best.1 {
            best = (yaw, g);
        }
    }
    best
}

/// Dijkstra distances (meters) over traversable cells, 8-connected with no
/// corner cutting.
pub fn dijkstra(trav: &TraversabilityMap, resolution: f64, source: Cell) -> Vec<f64> {
    #[derive(PartialEq)]
    struct Entry(f64, usize);
    impl Eq for Entry {}
    impl Ord for Entry {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
        }
    }
    impl PartialOrd for Entry {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    let (w, h) = trav.dims();
    let mut dist = vec![f64::INFINITY; (w * h) as usize];
    if !trav.is_traversable(source) {
        return dist;
    }
    let idx = |c: Cell| (c.y * w + c.x) as usize;
    dist[idx(source)] = 0.0;
    let mut heap = BinaryHeap::from([Entry(0.0, idx(source))]);
    while let Some(Entry(d, i)) = heap.pop() {
        if d > dist[i] {
            continue;
        }
        let c = Cell::new(i as i32 % w, i as i32 / w);
        for dy in -1..=1 {
            for dx in -1..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let n = c.offset(dx, dy);
                let diagonal = dx != 0 && dy != 0;
                if !trav.is_traversable(n)
                    || (diagonal && !(trav.is_traversable(c.offset(dx, 0)) && trav.is_traversable(c.offset(0, dy))))
                {
                    continue;
                }
                let nd = d + if diagonal { SQRT_2 } else { 1.0 } * resolution;
                if nd < dist[idx(n)] {
                    dist[idx(n)] = nd;
                    heap.push(Entry(nd, idx(n)));
                }
            }
        }
    }
    dist
}

/// 4-connected flood fill over cells satisfying `pass`.
pub fn flood<V: GridView>(view: &V, start: Cell, pass: impl Fn(VoxelState) -> bool) -> Vec<bool> {
    let (w, h) = view.dims();
    let mut seen = vec![false; (w * h) as usize];
    let mut stack = vec![start];
    while let Some(c) = stack.pop() {
        match view.state(c) {
            Some(s) if pass(s) && !seen[(c.y * w + c.x) as usize] => {
                seen[(c.y * w + c.x) as usize] = true;
                stack.extend([c.offset(1, 0), c.offset(-1, 0), c.offset(0, 1), c.offset(0, -1)]);
            }
            _ => {}
        }
    }
    seen
}
