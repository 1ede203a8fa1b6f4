use nbv_core::dataset::PoseTarget;
use nbv_core::{GridView, LocalMap, Pose, VoxelState};
use nbv_nn::Real;

use crate::ModelError;

/// Local-map side in cells expected by every model.
pub const MAP_CELLS: usize = 50;
/// Pooled grid side (10 x 10 pooled cells).
pub const POOLED: usize = 10;
pub const POOL_WINDOW: usize = MAP_CELLS / POOLED;
/// 100 one-hot pooled cells plus the robot yaw as (sin, cos).
pub const COND_DIM: usize = POOLED * POOLED * 3 + 2;
/// Normalised pose: position in [-1, 1]^2 and yaw as (sin, cos).
pub const POSE_DIM: usize = 4;

fn check_map(local: &LocalMap) -> Result<(), ModelError> {
    if local.size() != MAP_CELLS {
        return Err(ModelError::Shape(format!(
            "local map is {0}x{0}, models expect {MAP_CELLS}x{MAP_CELLS}",
            local.size()
        )));
    }
    Ok(())
}

/// Max-pools the map under occupied > unknown > free, one-hot encodes the
/// pooled cells (free, occupied, unknown) and appends the robot yaw.
pub fn encode_map<T: Real>(local: &LocalMap) -> Result<Vec<T>, ModelError> {
    check_map(local)?;
    let mut out = vec![T::ZERO; COND_DIM];
    let cells = local.cells();
    for py in 0..POOLED {
        for px in 0..POOLED {
            let mut pooled = VoxelState::Free;
            for y in py * POOL_WINDOW..(py + 1) * POOL_WINDOW {
                for x in px * POOL_WINDOW..(px + 1) * POOL_WINDOW {
                    let s = cells[y * MAP_CELLS + x];
                    if s.priority() > pooled.priority() {
                        pooled = s;
                    }
                }
            }
            out[(py * POOLED + px) * 3 + pooled as usize] = T::ONE;
        }
    }
    out[COND_DIM - 2] = T::from_f64(local.robot_yaw.sin());
    out[COND_DIM - 1] = T::from_f64(local.robot_yaw.cos());
    Ok(out)
}

/// Full-resolution one-hot image, channel-major (3 x 50 x 50), for the CNN.
pub fn one_hot_image<T: Real>(local: &LocalMap) -> Result<Vec<T>, ModelError> {
    check_map(local)?;
    let n = MAP_CELLS * MAP_CELLS;
    let mut out = vec![T::ZERO; 3 * n];
    for (i, &s) in local.cells().iter().enumerate() {
        out[s as usize * n + i] = T::ONE;
    }
    Ok(out)
}

/// Maps poses between the local-map frame (window corner at the origin,
/// meters) and the network's normalised pose vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseCodec {
    /// Local-map side length in meters.
    pub extent: f64,
}

impl PoseCodec {
    pub fn new(extent: f64) -> Self {
        Self { extent }
    }

    pub fn encode<T: Real>(&self, x: f64, y: f64, yaw: f64) -> [T; POSE_DIM] {
        [
            T::from_f64(2.0 * x / self.extent - 1.0),
            T::from_f64(2.0 * y / self.extent - 1.0),
            T::from_f64(yaw.sin()),
            T::from_f64(yaw.cos()),
        ]
    }

    /// Position in meters from a normalised coordinate.
    pub fn meters(&self, u: f64) -> f64 {
        (u + 1.0) * 0.5 * self.extent
    }

    /// Decodes a network output, clamping the position into the map and
    /// normalising the yaw.
    pub fn decode(&self, out: &[f64]) -> (f64, f64, f64) {
        let hi = self.extent * (1.0 - 1e-9);
        let x = self.meters(out[0]).clamp(0.0, hi);
        let y = self.meters(out[1]).clamp(0.0, hi);
        let yaw = nbv_core::sim::normalize_angle(out[2].atan2(out[3]));
        (x, y, yaw)
    }
}

/// World pose of a local-frame target on `local`.
pub fn target_to_world(local: &LocalMap, t: &PoseTarget) -> Pose {
    let o = local.origin();
    Pose::new(o[0] + t.x, o[1] + t.y, t.yaw)
}

/// Local-frame target of a world pose on `local`.
pub fn world_to_target(local: &LocalMap, p: &Pose, gain: Option<f64>) -> PoseTarget {
    let o = local.origin();
    PoseTarget {
        x: p.x - o[0],
        y: p.y - o[1],
        yaw: p.yaw,
        gain,
    }
}

/// Largest possible visible-cell count: a quarter disc of the sensor range
/// (for the default 90 degree field of view), used to scale gain labels.
pub fn gain_normalizer(range: f64, resolution: f64) -> f64 {
    0.25 * std::f64::consts::PI * (range / resolution).powi(2)
}
