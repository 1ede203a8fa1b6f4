//! Learned visible-unknown estimators: a pose-conditioned head over either
//! the pooled conditioning vector or a jointly trained CNN map encoding.

use nbv_core::dataset::{DatasetRecord, PoseTarget};
use nbv_core::planning::GainPredictor;
use nbv_core::{LocalMap, Pose};
use nbv_nn::{Activation, Adam, LayerSpec, Network, Real, TensorBuf};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::common::{check_finite, records_extent, EpochLog, TrainConfig, TrainLog};
use crate::encode::{encode_map, one_hot_image, world_to_target, PoseCodec, COND_DIM, MAP_CELLS, POSE_DIM};
use crate::ModelError;

/// Width of the CNN map encoding.
pub const CNN_FEATURES: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Pooling,
    Cnn,
}

/// Three valid 5x5 convolutions (3 -> 8 -> 16 -> 32 channels), 2x2 max
/// pooling and a dense projection to `CNN_FEATURES`.
pub fn cnn_specs() -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut side = MAP_CELLS;
    for (i, o) in [(3, 8), (8, 16), (16, 32)] {
        specs.push(LayerSpec::Conv2d {
            in_channels: i,
            out_channels: o,
            kernel: 5,
            stride: 1,
            height: side,
            width: side,
        });
        specs.push(LayerSpec::Activation(Activation::Relu));
        side -= 4;
    }
    specs.push(LayerSpec::MaxPool2d {
        channels: 32,
        height: side,
        width: side,
        window: 2,
    });
    side /= 2;
    specs.push(LayerSpec::Dense {
        input: 32 * side * side,
        output: CNN_FEATURES,
    });
    specs.push(LayerSpec::Activation(Activation::Relu));
    specs
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainNet<T: Real = f32> {
    pub kind: EncoderKind,
    pub cnn: Option<Network<T>>,
    pub head: Network<T>,
    pub codec: PoseCodec,
    pub gain_scale: f64,
}

/// A map-level input: the conditioning vector or the one-hot image.
fn map_input<T: Real>(kind: EncoderKind, local: &LocalMap) -> Result<Vec<T>, ModelError> {
    match kind {
        EncoderKind::Pooling => encode_map(local),
        EncoderKind::Cnn => one_hot_image(local),
    }
}

impl<T: Real> GainNet<T> {
    pub fn new(
        cfg: &TrainConfig,
        kind: EncoderKind,
        extent: f64,
        gain_scale: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        let (cnn, enc_dim) = match kind {
            EncoderKind::Pooling => (None, COND_DIM),
            EncoderKind::Cnn => {
                let mut net = Network::new(3 * MAP_CELLS * MAP_CELLS, cnn_specs())?;
                net.init_params(rng);
                (Some(net), CNN_FEATURES)
            }
        };
        let mut head = Network::mlp(
            POSE_DIM + enc_dim,
            &cfg.hidden,
            1,
            Activation::Relu,
            Activation::Softplus,
            cfg.dropout,
        )?;
        head.init_params(rng);
        Ok(Self {
            kind,
            cnn,
            head,
            codec: PoseCodec::new(extent),
            gain_scale,
        })
    }

    pub fn cast<U: Real>(&self) -> GainNet<U> {
        GainNet {
            kind: self.kind,
            cnn: self.cnn.as_ref().map(|n| n.cast()),
            head: self.head.cast(),
            codec: self.codec,
            gain_scale: self.gain_scale,
        }
    }

    /// Eval-mode map encodings for a batch of map inputs.
    fn encode_inputs(&self, inputs: &[T], n_maps: usize) -> Result<Vec<T>, ModelError> {
        match &self.cnn {
            None => Ok(inputs.to_vec()),
            Some(cnn) => {
                let x = TensorBuf::matrix(n_maps, cnn.input_dim(), inputs.to_vec());
                Ok(cnn.forward(&x)?.data)
            }
        }
    }

    fn enc_dim(&self) -> usize {
        self.head.input_dim() - POSE_DIM
    }

    fn head_rows(&self, encodings: &[T], items: &[(usize, PoseTarget)]) -> TensorBuf<T> {
        let ed = self.enc_dim();
        let mut rows = Vec::with_capacity(items.len() * (POSE_DIM + ed));
        for (m, t) in items {
            rows.extend(self.codec.encode::<T>(t.x, t.y, t.yaw));
            rows.extend_from_slice(&encodings[m * ed..(m + 1) * ed]);
        }
        TensorBuf::matrix(items.len(), POSE_DIM + ed, rows)
    }

    /// Predicted visible-unknown counts for local-frame poses on one map.
    pub fn predict(&self, local: &LocalMap, poses: &[PoseTarget]) -> Result<Vec<f64>, ModelError> {
        if poses.is_empty() {
            return Ok(Vec::new());
        }
        let enc = self.encode_inputs(&map_input(self.kind, local)?, 1)?;
        let items: Vec<(usize, PoseTarget)> = poses.iter().map(|p| (0, *p)).collect();
        let out = self.head.forward(&self.head_rows(&enc, &items))?;
        Ok(out.data.iter().map(|v| v.to_f64() * self.gain_scale).collect())
    }

    /// Mean squared error of normalised gains over `items`, each naming a
    /// row of `inputs` (one map input per row). Gradients are accumulated
    /// into `(cnn, head)` when given.
    pub fn loss(
        &self,
        inputs: &[T],
        n_maps: usize,
        items: &[(usize, PoseTarget)],
        train: bool,
        rng: &mut dyn RngCore,
        grads: Option<(&mut [T], &mut [T])>,
    ) -> Result<f64, ModelError> {
        if items.is_empty() {
            return Err(ModelError::Data("empty gain batch".into()));
        }
        let cnn_cache = match &self.cnn {
            Some(cnn) => Some(cnn.forward_train(
                &TensorBuf::matrix(n_maps, cnn.input_dim(), inputs.to_vec()),
                train,
                Some(&mut *rng),
            )?),
            None => None,
        };
        let enc = cnn_cache.as_ref().map_or(inputs, |c| &c.output().data[..]);
        let head_cache = self
            .head
            .forward_train(&self.head_rows(enc, items), train, Some(&mut *rng))?;
        let out = head_cache.output();
        let inv_b = 1.0 / items.len() as f64;
        let mut loss = 0.0;
        let mut d_out = Vec::with_capacity(items.len());
        for (i, (_, t)) in items.iter().enumerate() {
            let label = t
                .gain
                .ok_or_else(|| ModelError::Data("gain training needs a gain label on every target".into()))?;
            let e = out.data[i].to_f64() - label / self.gain_scale;
            loss += e * e;
            d_out.push(T::from_f64(2.0 * e * inv_b));
        }
        if let Some((g_cnn, g_head)) = grads {
            let dx = self
                .head
                .backward(&head_cache, &TensorBuf::matrix(items.len(), 1, d_out), g_head)?;
            if let (Some(cnn), Some(cache)) = (&self.cnn, &cnn_cache) {
                let ed = self.enc_dim();
                let mut d_enc = TensorBuf::zeros(&[n_maps, ed]);
                for (i, (m, _)) in items.iter().enumerate() {
                    let row = &dx.row(i)[POSE_DIM..];
                    for (d, &v) in d_enc.row_mut(*m).iter_mut().zip(row) {
                        *d += v;
                    }
                }
                cnn.backward(cache, &d_enc, g_cnn)?;
            }
        }
        Ok(loss * inv_b)
    }

    pub fn cnn_param_count(&self) -> usize {
        self.cnn.as_ref().map_or(0, |n| n.num_params())
    }
}

impl GainPredictor for GainNet<f32> {
    fn predict(&self, local: &LocalMap, poses: &[Pose]) -> Vec<f64> {
        let targets: Vec<PoseTarget> = poses.iter().map(|p| world_to_target(local, p, None)).collect();
        match GainNet::predict(self, local, &targets) {
            Ok(g) => g,
            Err(e) => {
                log::warn!("gain prediction failed: {e}");
                vec![0.0; poses.len()]
            }
        }
    }
}

/// Prediction error on labelled targets.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GainEval {
    pub count: usize,
    pub mean_abs_error: f64,
    pub mean_true_gain: f64,
    pub mse_normalized: f64,
}

/// Evaluates every labelled target of `records` (eval mode).
pub fn evaluate_gain(model: &GainNet<f32>, records: &[DatasetRecord]) -> Result<GainEval, ModelError> {
    let mut ev = GainEval::default();
    for r in records {
        let targets: Vec<PoseTarget> = r
            .targets
            .iter()
            .filter(|t| t.pose.gain.is_some())
            .map(|t| t.pose)
            .collect();
        let pred = model.predict(&r.local_map(), &targets)?;
        for (p, t) in pred.iter().zip(&targets) {
            let g = t.gain.unwrap();
            ev.count += 1;
            ev.mean_abs_error += (p - g).abs();
            ev.mean_true_gain += g;
            ev.mse_normalized += ((p - g) / model.gain_scale).powi(2);
        }
    }
    if ev.count > 0 {
        let n = ev.count as f64;
        ev.mean_abs_error /= n;
        ev.mean_true_gain /= n;
        ev.mse_normalized /= n;
    }
    Ok(ev)
}

fn batch_inputs(kind: EncoderKind, records: &[DatasetRecord], ids: &[usize]) -> Result<Vec<f32>, ModelError> {
    let mut out = Vec::new();
    for &i in ids {
        out.extend(map_input::<f32>(kind, &records[i].local_map())?);
    }
    Ok(out)
}

fn val_loss(model: &GainNet<f32>, records: &[DatasetRecord], ids: &[usize], seed: u64) -> Result<f64, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut n = 0;
    for chunk in ids.chunks(16) {
        let inputs = batch_inputs(model.kind, records, chunk)?;
        let items: Vec<(usize, PoseTarget)> = chunk
            .iter()
            .enumerate()
            .flat_map(|(m, &r)| records[r].targets.iter().map(move |t| (m, t.pose)))
            .collect();
        if items.is_empty() {
            continue;
        }
        sum += model.loss(&inputs, chunk.len(), &items, false, &mut rng, None)? * items.len() as f64;
        n += items.len();
    }
    Ok(sum / n.max(1) as f64)
}

/// Supervised regression of normalised gains over every target (teacher
/// winners and negatives). Batches hold `maps_per_batch` maps with
/// `batch_size / maps_per_batch` targets each so the CNN runs once per map.
pub fn train_gain(
    train: &[DatasetRecord],
    val: &[DatasetRecord],
    cfg: &TrainConfig,
    kind: EncoderKind,
    gain_scale: f64,
) -> Result<(GainNet<f32>, TrainLog), ModelError> {
    let extent = records_extent(train)?;
    records_extent(val)?;
    for r in train.iter().chain(val) {
        if r.targets.iter().any(|t| t.pose.gain.is_none()) {
            return Err(ModelError::Data(format!(
                "record (world {}, step {}) has targets without gain labels",
                r.world_id, r.step
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = GainNet::<f32>::new(cfg, kind, extent, gain_scale, &mut rng)?;
    let val_seed = cfg.seed ^ 0x0A11_DA7E;
    let per_map = (cfg.batch_size / cfg.maps_per_batch.max(1)).max(1);
    let val_ids: Vec<usize> = crate::common::strided(&(0..val.len()).collect::<Vec<_>>(), (cfg.val_limit / 8).max(1));

    let mut log = TrainLog::default();
    log.epochs.push(EpochLog {
        epoch: 0,
        train_loss: None,
        val_loss: val_loss(&model, val, &val_ids, val_seed)?,
    });
    let mut best = model.clone();
    let mut cnn_adam = Adam::new(model.cnn_param_count(), cfg.lr);
    let mut head_adam = Adam::new(model.head.num_params(), cfg.lr);
    let mut g_cnn = vec![0.0f32; model.cnn_param_count()];
    let mut g_head = vec![0.0f32; model.head.num_params()];
    let mut order: Vec<usize> = (0..train.len()).filter(|&i| !train[i].targets.is_empty()).collect();
    let mut batch_index = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut seen = 0;
        for chunk in order
            .chunks(cfg.maps_per_batch.max(1))
            .take(cfg.max_batches_per_epoch.unwrap_or(usize::MAX))
        {
            let inputs = batch_inputs(kind, train, chunk)?;
            let mut items = Vec::with_capacity(chunk.len() * per_map);
            for (m, &r) in chunk.iter().enumerate() {
                let mut idx: Vec<usize> = (0..train[r].targets.len()).collect();
                idx.shuffle(&mut rng);
                items.extend(idx.into_iter().take(per_map).map(|j| (m, train[r].targets[j].pose)));
            }
            g_cnn.fill(0.0);
            g_head.fill(0.0);
            let l = model.loss(
                &inputs,
                chunk.len(),
                &items,
                true,
                &mut rng,
                Some((&mut g_cnn, &mut g_head)),
            )?;
            check_finite(l, batch_index)?;
            if let Some(cnn) = model.cnn.as_mut() {
                cnn_adam.update(cnn.params_mut(), &g_cnn)?;
            }
            head_adam.update(model.head.params_mut(), &g_head)?;
            sum += l * items.len() as f64;
            seen += items.len();
            batch_index += 1;
        }
        let v = val_loss(&model, val, &val_ids, val_seed)?;
        log::info!(
            "gain {kind:?} epoch {epoch}: train {:.5} val {v:.5}",
            sum / seen.max(1) as f64
        );
        log.epochs.push(EpochLog {
            epoch,
            train_loss: Some(sum / seen.max(1) as f64),
            val_loss: v,
        });
        if v < log.best_val_loss() {
            log.best_epoch = epoch;
            best = model.clone();
        }
    }
    Ok((best, log))
}
