//! Grid worlds, robot and sensor simulation, sampling-based next-best-view
//! planning and teacher datasets for 2D exploration.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod grid_world;
pub mod planning;
pub mod sim;

pub use grid_world::{Cell, GridView, OccupancyGrid, VoxelState, World, WorldGenParams, WorldKind};
pub use sim::{LocalMap, Pose, RobotModel, SensorModel, SimConfig, SimState};
