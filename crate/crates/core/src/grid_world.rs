//! Occupancy grids and procedural generation of ground-truth worlds.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::Pose;

/// State of a single grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum VoxelState {
    Free = 0,
    Occupied = 1,
    Unknown = 2,
}

impl VoxelState {
    /// Rank used when pooling: occupied > unknown > free.
    pub fn priority(self) -> u8 {
        match self {
            VoxelState::Free => 0,
            VoxelState::Unknown => 1,
            VoxelState::Occupied => 2,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(VoxelState::Free),
            1 => Some(VoxelState::Occupied),
            2 => Some(VoxelState::Unknown),
            _ => None,
        }
    }
}

/// Integer cell coordinate: `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn offset(self, dx: i32, dy: i32) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }
}

/// Read access to a grid of cell states with a world embedding.
///
/// `state` returns `None` for cells outside the view.
pub trait GridView {
    fn resolution(&self) -> f64;
    /// World coordinates of the corner of cell (0, 0).
    fn origin(&self) -> [f64; 2];
    fn dims(&self) -> (i32, i32);
    fn state(&self, cell: Cell) -> Option<VoxelState>;

    fn contains(&self, cell: Cell) -> bool {
        let (w, h) = self.dims();
        cell.x >= 0 && cell.y >= 0 && cell.x < w && cell.y < h
    }

    /// Cell containing a world point; may lie outside the view.
    fn world_to_cell(&self, x: f64, y: f64) -> Cell {
        let o = self.origin();
        let r = self.resolution();
        Cell::new(((x - o[0]) / r).floor() as i32, ((y - o[1]) / r).floor() as i32)
    }

    fn cell_center(&self, cell: Cell) -> [f64; 2] {
        let o = self.origin();
        let r = self.resolution();
        [o[0] + (cell.x as f64 + 0.5) * r, o[1] + (cell.y as f64 + 0.5) * r]
    }
}

/// Row-major occupancy grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    resolution: f64,
    origin: [f64; 2],
    cells: Vec<VoxelState>,
}

impl OccupancyGrid {
    pub fn filled(width: usize, height: usize, resolution: f64, origin: [f64; 2], state: VoxelState) -> Self {
        assert!(width > 0 && height > 0, "grid dimensions must be positive");
        assert!(resolution > 0.0, "resolution must be positive");
        Self {
            width,
            height,
            resolution,
            origin,
            cells: vec![state; width * height],
        }
    }

    pub fn from_cells(
        width: usize,
        height: usize,
        resolution: f64,
        origin: [f64; 2],
        cells: Vec<VoxelState>,
    ) -> Result<Self, WorldError> {
        if width == 0 || height == 0 || !(resolution > 0.0) {
            return Err(WorldError::InvalidParams(format!(
                "grid {width}x{height} with resolution {resolution}"
            )));
        }
        if cells.len() != width * height {
            return Err(WorldError::InvalidParams(format!(
                "expected {} cells, got {}",
                width * height,
                cells.len()
            )));
        }
        Ok(Self {
            width,
            height,
            resolution,
            origin,
            cells,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &[VoxelState] {
        &self.cells
    }

    pub fn index(&self, cell: Cell) -> Option<usize> {
        if self.contains(cell) {
            Some(cell.y as usize * self.width + cell.x as usize)
        } else {
            None
        }
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new((index % self.width) as i32, (index / self.width) as i32)
    }

    pub fn get(&self, cell: Cell) -> Option<VoxelState> {
        self.index(cell).map(|i| self.cells[i])
    }

    pub fn set(&mut self, cell: Cell, state: VoxelState) {
        if let Some(i) = self.index(cell) {
            self.cells[i] = state;
        }
    }

    pub fn count(&self, state: VoxelState) -> usize {
        self.cells.iter().filter(|&&s| s == state).count()
    }

    pub fn is_border(&self, cell: Cell) -> bool {
        cell.x == 0 || cell.y == 0 || cell.x as usize == self.width - 1 || cell.y as usize == self.height - 1
    }

    /// Grid of the same geometry with every cell set to `state`.
    pub fn blank_like(&self, state: VoxelState) -> Self {
        Self::filled(self.width, self.height, self.resolution, self.origin, state)
    }
}

impl GridView for OccupancyGrid {
    fn resolution(&self) -> f64 {
        self.resolution
    }

    fn origin(&self) -> [f64; 2] {
        self.origin
    }

    fn dims(&self) -> (i32, i32) {
        (self.width as i32, self.height as i32)
    }

    fn state(&self, cell: Cell) -> Option<VoxelState> {
        self.get(cell)
    }
}

/// 4-connected flood fill over cells satisfying `passable`.
pub fn flood_fill<F>(grid: &OccupancyGrid, start: Cell, passable: F) -> Vec<bool>
where
    F: Fn(VoxelState) -> bool,
{
    let mut seen = vec![false; grid.width * grid.height];
    let Some(si) = grid.index(start) else {
        return seen;
    };
    if !passable(grid.cells[si]) {
        return seen;
    }
    seen[si] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(c) = queue.pop_front() {
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let n = c.offset(dx, dy);
            if let Some(ni) = grid.index(n) {
                if !seen[ni] && passable(grid.cells[ni]) {
                    seen[ni] = true;
                    queue.push_back(n);
                }
            }
        }
    }
    seen
}

/// True when all free cells form a single 4-connected component.
pub fn free_space_connected(grid: &OccupancyGrid) -> bool {
    let Some(first) = grid.cells.iter().position(|&s| s == VoxelState::Free) else {
        return true;
    };
    let reached = flood_fill(grid, grid.cell_at(first), |s| s == VoxelState::Free);
    let reached_count = reached.iter().filter(|&&r| r).count();
    reached_count == grid.count(VoxelState::Free)
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid world parameters: {0}")]
    InvalidParams(String),
    #[error("world generation failed: {0}")]
    Generation(String),
    #[error("world file format error: {0}")]
    Format(String),
    #[error("world file version mismatch: expected {expected}, found {found}")]
    Version { expected: u8, found: u8 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorldKind {
    Maze,
    Cluttered,
}

impl std::str::FromStr for WorldKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "maze" => Ok(WorldKind::Maze),
            "cluttered" => Ok(WorldKind::Cluttered),
            other => Err(format!("unknown world kind '{other}' (expected maze or cluttered)")),
        }
    }
}

/// Parameters for procedural world generation. Lengths are in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldGenParams {
    pub seed: u64,
    pub world_kind: WorldKind,
    pub side_length_m: f64,
    pub resolution: f64,
    pub corridor_width_m: f64,
    pub wall_thickness_m: f64,
    /// Probability of removing each remaining interior maze wall (adds loops).
    pub extra_openings: f64,
    pub obstacle_count: usize,
    pub obstacle_size_range_m: (f64, f64),
    /// Clear radius kept around the start pose in cluttered worlds.
    pub start_clearance_m: f64,
    /// When unset the generator picks a start pose.
    pub start_pose: Option<Pose>,
}

impl Default for WorldGenParams {
    fn default() -> Self {
        Self {
            seed: 0,
            world_kind: WorldKind::Maze,
            side_length_m: 20.0,
            resolution: 0.2,
            corridor_width_m: 2.0,
            wall_thickness_m: 0.2,
            extra_openings: 0.1,
            obstacle_count: 10,
            obstacle_size_range_m: (0.6, 3.0),
            start_clearance_m: 1.0,
            start_pose: None,
        }
    }
}

impl WorldGenParams {
    pub fn maze(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn cluttered(seed: u64) -> Self {
        Self {
            seed,
            world_kind: WorldKind::Cluttered,
            ..Self::default()
        }
    }

    fn side_cells(&self) -> Result<usize, WorldError> {
        to_cells(self.side_length_m, self.resolution, "side_length_m")
    }
}

fn to_cells(length: f64, resolution: f64, name: &str) -> Result<usize, WorldError> {
    if !(resolution > 0.0) || !resolution.is_finite() {
        return Err(WorldError::InvalidParams(format!(
            "resolution must be positive, got {resolution}"
        )));
    }
    let cells = length / resolution;
    let rounded = cells.round();
    if !(length > 0.0) || (cells - rounded).abs() > 1e-6 {
        return Err(WorldError::InvalidParams(format!(
            "{name}={length} is not a positive integer multiple of resolution {resolution}"
        )));
    }
    Ok(rounded as usize)
}

/// A generated world: ground truth and a free start pose.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub grid: OccupancyGrid,
    pub start: Pose,
}

/// Generates the world described by `params`, resolving the start pose.
pub fn generate_world(params: &WorldGenParams) -> Result<World, WorldError> {
    let (grid, start) = match params.world_kind {
        WorldKind::Maze => {
            let layout = MazeLayout::new(params)?;
            let grid = layout.carve(params);
            let start = match params.start_pose {
                Some(p) => p,
                None => layout.default_start(params),
            };
            (grid, start)
        }
        WorldKind::Cluttered => {
            let grid = generate_cluttered(params)?;
            (grid, params.start_pose.unwrap_or_else(|| cluttered_start(params)))
        }
    };
    let start_cell = grid.world_to_cell(start.x, start.y);
    if grid.get(start_cell) != Some(VoxelState::Free) {
        return Err(WorldError::InvalidParams(format!(
            "start pose ({:.2}, {:.2}) is not in free space",
            start.x, start.y
        )));
    }
    Ok(World { grid, start })
}

/// Maze generated with a recursive backtracker on a coarse lattice of
/// corridor-sized rooms separated by walls.
pub fn generate_maze(params: &WorldGenParams) -> Result<OccupancyGrid, WorldError> {
    if params.world_kind != WorldKind::Maze {
        return Err(WorldError::InvalidParams(
            "generate_maze called with a non-maze world kind".into(),
        ));
    }
    Ok(MazeLayout::new(params)?.carve(params))
}

struct MazeLayout {
    side: usize,
    corridor: usize,
    wall: usize,
    rooms: usize,
}

impl MazeLayout {
    fn new(params: &WorldGenParams) -> Result<Self, WorldError> {
        let side = params.side_cells()?;
        let corridor = to_cells(params.corridor_width_m, params.resolution, "corridor_width_m")?;
        let wall = to_cells(params.wall_thickness_m, params.resolution, "wall_thickness_m")?;
        let pitch = corridor + wall;
        if side < pitch + wall {
            return Err(WorldError::InvalidParams(format!(
                "world of {side} cells cannot hold a corridor of {corridor} cells"
            )));
        }
        let rooms = (side - wall) / pitch;
        Ok(Self {
            side,
            corridor,
            wall,
            rooms,
        })
    }

    fn room_origin(&self, i: usize) -> usize {
        self.wall + i * (self.corridor + self.wall)
    }

    fn default_start(&self, params: &WorldGenParams) -> Pose {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5EED_57A7);
        let i = rng.random_range(0..self.rooms);
        let j = rng.random_range(0..self.rooms);
        let half = self.corridor as f64 / 2.0;
        // Snap to a cell center near the room center.
        let cx = (self.room_origin(i) as f64 + half).floor() + 0.5;
        let cy = (self.room_origin(j) as f64 + half).floor() + 0.5;
        Pose::new(cx * params.resolution, cy * params.resolution, 0.0)
    }

    fn carve(&self, params: &WorldGenParams) -> OccupancyGrid {
        let mut grid = OccupancyGrid::filled(
            self.side,
            self.side,
            params.resolution,
            [0.0, 0.0],
            VoxelState::Occupied,
        );
        let n = self.rooms;
        let fill = |grid: &mut OccupancyGrid, x0: usize, y0: usize, w: usize, h: usize| {
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    grid.set(Cell::new(x as i32, y as i32), VoxelState::Free);
                }
            }
        };
        for j in 0..n {
            for i in 0..n {
                fill(
                    &mut grid,
                    self.room_origin(i),
                    self.room_origin(j),
                    self.corridor,
                    self.corridor,
                );
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut visited = vec![false; n * n];
        // Walls between room (i, j) and its +x / +y neighbour.
        let mut open_east = vec![false; n * n];
        let mut open_north = vec![false; n * n];
        let start = (rng.random_range(0..n), rng.random_range(0..n));
        visited[start.1 * n + start.0] = true;
        let mut stack = vec![start];
        while let Some(&(i, j)) = stack.last() {
            let mut neighbours: Vec<(usize, usize)> = Vec::with_capacity(4);
            if i > 0 && !visited[j * n + i - 1] {
                neighbours.push((i - 1, j));
            }
            if i + 1 < n && !visited[j * n + i + 1] {
                neighbours.push((i + 1, j));
            }
            if j > 0 && !visited[(j - 1) * n + i] {
                neighbours.push((i, j - 1));
            }
            if j + 1 < n && !visited[(j + 1) * n + i] {
                neighbours.push((i, j + 1));
            }
            let Some(&(ni, nj)) = neighbours.choose(&mut rng) else {
                stack.pop();
                continue;
            };
            if ni != i {
                open_east[j * n + i.min(ni)] = true;
            } else {
                open_north[j.min(nj) * n + i] = true;
            }
            visited[nj * n + ni] = true;
            stack.push((ni, nj));
        }

        for j in 0..n {
            for i in 0..n {
                let k = j * n + i;
                if i + 1 < n && (open_east[k] || rng.random::<f64>() < params.extra_openings) {
                    fill(
                        &mut grid,
                        self.room_origin(i) + self.corridor,
                        self.room_origin(j),
                        self.wall,
                        self.corridor,
                    );
                }
                if j + 1 < n && (open_north[k] || rng.random::<f64>() < params.extra_openings) {
                    fill(
                        &mut grid,
                        self.room_origin(i),
                        self.room_origin(j) + self.corridor,
                        self.corridor,
                        self.wall,
                    );
                }
            }
        }
        grid
    }
}

const CLUTTER_MAX_RETRIES: usize = 64;

fn cluttered_start(params: &WorldGenParams) -> Pose {
    let side = params.side_length_m;
    let r = params.resolution;
    let c = ((side / r / 2.0).floor() + 0.5) * r;
    Pose::new(c, c, 0.0)
}

/// Open world with randomly placed, rotated rectangles and ellipses with
/// jittered outlines. Obstacles that would disconnect free space are
/// re-sampled.
pub fn generate_cluttered(params: &WorldGenParams) -> Result<OccupancyGrid, WorldError> {
    if params.world_kind != WorldKind::Cluttered {
        return Err(WorldError::InvalidParams(
            "generate_cluttered called with a non-cluttered world kind".into(),
        ));
    }
    let side = params.side_cells()?;
    if side < 3 {
        return Err(WorldError::InvalidParams(
            "cluttered world needs at least 3 cells per side".into(),
        ));
    }
    let (min_size, max_size) = params.obstacle_size_range_m;
    if !(min_size > 0.0) || max_size < min_size {
        return Err(WorldError::InvalidParams(format!(
            "invalid obstacle size range ({min_size}, {max_size})"
        )));
    }
    let res = params.resolution;
    let mut grid = OccupancyGrid::filled(side, side, res, [0.0, 0.0], VoxelState::Free);
    for y in 0..side as i32 {
        for x in 0..side as i32 {
            let c = Cell::new(x, y);
            if grid.is_border(c) {
                grid.set(c, VoxelState::Occupied);
            }
        }
    }
    let start = params.start_pose.unwrap_or_else(|| cluttered_start(params));
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let extent = side as f64 * res;

    for k in 0..params.obstacle_count {
        let mut placed = false;
        for _ in 0..CLUTTER_MAX_RETRIES {
            let cx = rng.random_range(0.0..extent);
            let cy = rng.random_range(0.0..extent);
            let a = rng.random_range(min_size..=max_size) / 2.0;
            let b = rng.random_range(min_size..=max_size) / 2.0;
            let rot = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let ellipse = rng.random_bool(0.5);
            let (sin, cos) = rot.sin_cos();
            let reach = a.max(b) * 1.2 + res;
            let mut cells = Vec::new();
            let lo_x = (((cx - reach) / res).floor().max(1.0)) as i32;
            let hi_x = (((cx + reach) / res).ceil().min(side as f64 - 2.0)) as i32;
            let lo_y = (((cy - reach) / res).floor().max(1.0)) as i32;
            let hi_y = (((cy + reach) / res).ceil().min(side as f64 - 2.0)) as i32;
            for y in lo_y..=hi_y {
                for x in lo_x..=hi_x {
                    let c = Cell::new(x, y);
                    let [px, py] = grid.cell_center(c);
                    let (dx, dy) = (px - cx, py - cy);
                    let u = (cos * dx + sin * dy) / a;
                    let v = (-sin * dx + cos * dy) / b;
                    let norm = if ellipse {
                        (u * u + v * v).sqrt()
                    } else {
                        u.abs().max(v.abs())
                    };
                    let jitter = rng.random_range(-0.15..0.15);
                    if norm <= 1.0 + jitter {
                        cells.push(c);
                    }
                }
            }
            let clear = params.start_clearance_m;
            let blocks_start = cells.iter().any(|&c| {
                let [px, py] = grid.cell_center(c);
                (px - start.x).hypot(py - start.y) <= clear
            });
            if cells.is_empty() || blocks_start {
                continue;
            }
            let mut candidate = grid.clone();
            for &c in &cells {
                candidate.set(c, VoxelState::Occupied);
            }
            if free_space_connected(&candidate) {
                grid = candidate;
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(WorldError::Generation(format!(
                "could not place obstacle {k} without disconnecting free space after {CLUTTER_MAX_RETRIES} attempts"
            )));
        }
    }
    Ok(grid)
}

const WORLD_MAGIC: &[u8; 4] = b"NBVW";
pub const WORLD_FORMAT_VERSION: u8 = 1;
const WORLD_HEADER_LEN: usize = 4 + 1 + 4 + 4 + 8 + 8 + 8;

/// Binary world layout (little-endian):
/// magic `NBVW`, version u8, width u32, height u32, resolution f64,
/// origin x f64, origin y f64, then one byte per cell in row-major order.
pub fn write_world<W: Write>(grid: &OccupancyGrid, mut out: W) -> Result<(), WorldError> {
    let mut header = Vec::with_capacity(WORLD_HEADER_LEN);
    header.extend_from_slice(WORLD_MAGIC);
    header.push(WORLD_FORMAT_VERSION);
    header.extend_from_slice(&(grid.width as u32).to_le_bytes());
    header.extend_from_slice(&(grid.height as u32).to_le_bytes());
    header.extend_from_slice(&grid.resolution.to_le_bytes());
    header.extend_from_slice(&grid.origin[0].to_le_bytes());
    header.extend_from_slice(&grid.origin[1].to_le_bytes());
    out.write_all(&header)?;
    let body: Vec<u8> = grid.cells.iter().map(|&s| s as u8).collect();
    out.write_all(&body)?;
    out.flush()?;
    Ok(())
}

pub fn read_world<R: Read>(mut input: R) -> Result<OccupancyGrid, WorldError> {
    let mut header = [0u8; WORLD_HEADER_LEN];
    read_exact_or_format(&mut input, &mut header, "header")?;
    if &header[0..4] != WORLD_MAGIC {
        return Err(WorldError::Format("bad magic".into()));
    }
    if header[4] != WORLD_FORMAT_VERSION {
        return Err(WorldError::Version {
            expected: WORLD_FORMAT_VERSION,
            found: header[4],
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(header[o..o + 8].try_into().unwrap());
    let width = u32_at(5);
    let height = u32_at(9);
    let resolution = f64_at(13);
    let origin = [f64_at(21), f64_at(29)];
    if width == 0 || height == 0 || !(resolution > 0.0) {
        return Err(WorldError::Format(format!(
            "invalid dimensions {width}x{height} / resolution {resolution}"
        )));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| WorldError::Format("dimensions overflow".into()))?;
    let mut body = vec![0u8; n];
    read_exact_or_format(&mut input, &mut body, "cell block")?;
    let cells = body
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            VoxelState::from_u8(b).ok_or_else(|| WorldError::Format(format!("invalid cell byte {b} at {i}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(WorldError::Format("trailing bytes after cell block".into()));
    }
    OccupancyGrid::from_cells(width, height, resolution, origin, cells)
}

fn read_exact_or_format<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<(), WorldError> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => WorldError::Format(format!("truncated {what}")),
        _ => WorldError::Io(e),
    })
}

pub fn save_world(path: impl AsRef<Path>, grid: &OccupancyGrid) -> Result<(), WorldError> {
    write_world(grid, BufWriter::new(File::create(path)?))
}

pub fn load_world(path: impl AsRef<Path>) -> Result<OccupancyGrid, WorldError> {
    read_world(BufReader::new(File::open(path)?))
}
