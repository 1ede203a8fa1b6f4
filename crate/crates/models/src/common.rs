//! Pieces shared by the trainers: configuration, logs, pose loss and
//! batching over dataset records.

use nbv_core::dataset::{DatasetRecord, PoseTarget};
use nbv_core::sim::normalize_angle;
use nbv_nn::Real;
use serde::{Deserialize, Serialize};

use crate::encode::{encode_map, PoseCodec, COND_DIM, MAP_CELLS};
use crate::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout: f64,
    /// KL weight of the CVAE objective.
    pub lambda_reg: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    /// Caps the optimiser steps per epoch; `None` runs full epochs.
    pub max_batches_per_epoch: Option<usize>,
    /// Validation items evaluated per epoch (evenly strided subset).
    pub val_limit: usize,
    /// Distinct maps per gain-network batch.
    pub maps_per_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            lr: 1e-3,
            dropout: 0.2,
            lambda_reg: 1.0,
            seed: 0,
            hidden: vec![512; 4],
            latent_dim: 3,
            max_batches_per_epoch: None,
            val_limit: 4096,
            maps_per_batch: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.batch_size == 0 || self.hidden.is_empty() || self.hidden.contains(&0) || self.latent_dim == 0 {
            return Err(ModelError::Config(
                "batch size, hidden widths and latent dim must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(self.lr > 0.0) || !(self.lambda_reg >= 0.0) {
            return Err(ModelError::Config(
                "dropout in [0, 1), positive lr, non-negative lambda".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch; `None` for the initial evaluation.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were returned (0 = initialisation).
    pub best_epoch: usize,
}

impl TrainLog {
    pub fn best_val_loss(&self) -> f64 {
        self.epochs[self.best_epoch].val_loss
    }
}

/// Squared position error in meters plus squared shortest-arc yaw error for
/// one decoded row `(u, v, sin, cos, ..)`, with the gradient with respect to
/// the first four outputs.
pub fn pose_loss<T: Real>(out: &[T], target: &PoseTarget, codec: &PoseCodec) -> (f64, f64, [f64; 4]) {
    let half_extent = 0.5 * codec.extent;
    let dx = codec.meters(out[0].to_f64()) - target.x;
    let dy = codec.meters(out[1].to_f64()) - target.y;
    let pos = dx * dx + dy * dy;
    let (s, c) = (out[2].to_f64(), out[3].to_f64());
    let r2 = s * s + c * c;
    let arc = normalize_angle(s.atan2(c) - target.yaw);
    let (gs, gc) = if r2 > 1e-12 {
        (2.0 * arc * c / r2, -2.0 * arc * s / r2)
    } else {
        (0.0, 0.0)
    };
    (pos, arc * arc, [2.0 * dx * half_extent, 2.0 * dy * half_extent, gs, gc])
}

/// Conditioning vectors of every record, flattened.
pub fn encode_records<T: Real>(records: &[DatasetRecord]) -> Result<Vec<T>, ModelError> {
    let mut out = Vec::with_capacity(records.len() * COND_DIM);
    for r in records {
        out.extend(encode_map::<T>(&r.local_map())?);
    }
    Ok(out)
}

/// Local-map extent shared by all records.
pub fn records_extent(records: &[DatasetRecord]) -> Result<f64, ModelError> {
    let first = records
        .first()
        .ok_or_else(|| ModelError::Data("empty record set".into()))?;
    for r in records {
        if r.map_size != MAP_CELLS || r.resolution != first.resolution {
            return Err(ModelError::Data(format!(
                "record (world {}, step {}) has a {}-cell map at {} m; expected {MAP_CELLS} cells at {} m",
                r.world_id, r.step, r.map_size, r.resolution, first.resolution
            )));
        }
    }
    Ok(MAP_CELLS as f64 * first.resolution)
}

/// `(record, target)` index pairs over positive targets.
pub fn positive_pairs(records: &[DatasetRecord]) -> Vec<(usize, usize)> {
    records
        .iter()
        .enumerate()
        .flat_map(|(i, r)| {
            r.targets
                .iter()
                .enumerate()
                .filter(|(_, t)| !t.negative)
                .map(move |(j, _)| (i, j))
        })
        .collect()
}

/// Evenly strided subset of at most `limit` items.
pub fn strided<T: Clone>(items: &[T], limit: usize) -> Vec<T> {
    if items.len() <= limit || limit == 0 {
        return items.to_vec();
    }
    (0..limit).map(|k| items[k * items.len() / limit].clone()).collect()
}

pub fn check_finite(loss: f64, batch: usize) -> Result<(), ModelError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(ModelError::Numerical { batch, value: loss })
    }
}
