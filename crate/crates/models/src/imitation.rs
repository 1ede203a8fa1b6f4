//! Behaviour-cloning baseline: one deterministic pose per map.

use nbv_core::dataset::{DatasetRecord, PoseTarget};
use nbv_core::planning::{PlannerRng, PoseProposer, Proposal};
use nbv_core::LocalMap;
use nbv_nn::{Activation, Adam, Network, Real, TensorBuf};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::{
    check_finite, encode_records, pose_loss, positive_pairs, records_extent, strided, EpochLog, TrainConfig, TrainLog,
};
use crate::encode::{encode_map, target_to_world, PoseCodec, COND_DIM, POSE_DIM};
use crate::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct Imitation<T: Real = f32> {
    pub net: Network<T>,
    pub codec: PoseCodec,
}

impl<T: Real> Imitation<T> {
    pub fn new(cfg: &TrainConfig, extent: f64, rng: &mut dyn RngCore) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut net = Network::mlp(
            COND_DIM,
            &cfg.hidden,
            POSE_DIM,
            Activation::Relu,
            Activation::Identity,
            cfg.dropout,
        )?;
        net.init_params(rng);
        Ok(Self {
            net,
            codec: PoseCodec::new(extent),
        })
    }

    /// Mean squared position error (meters) plus squared shortest-arc error.
    pub fn loss(
        &self,
        conds: &[T],
        targets: &[PoseTarget],
        train: bool,
        rng: &mut dyn RngCore,
        grads: Option<&mut [T]>,
    ) -> Result<f64, ModelError> {
        let b = targets.len();
        if b == 0 || conds.len() != b * COND_DIM {
            return Err(ModelError::Shape(format!(
                "{} targets with {} conditioning values",
                b,
                conds.len()
            )));
        }
        let cache = self
            .net
            .forward_train(&TensorBuf::matrix(b, COND_DIM, conds.to_vec()), train, Some(rng))?;
        let out = cache.output();
        let inv_b = 1.0 / b as f64;
        let mut loss = 0.0;
        let mut d_out = Vec::with_capacity(b * POSE_DIM);
        for (i, t) in targets.iter().enumerate() {
            let (pos, arc, g) = pose_loss(out.row(i), t, &self.codec);
            loss += pos + arc;
            d_out.extend(g.iter().map(|v| T::from_f64(v * inv_b)));
        }
        if let Some(g) = grads {
            self.net.backward(&cache, &TensorBuf::matrix(b, POSE_DIM, d_out), g)?;
        }
        Ok(loss * inv_b)
    }

    pub fn predict_with_cond(&self, cond: &[T]) -> Result<PoseTarget, ModelError> {
        let out = self.net.forward(&TensorBuf::matrix(1, COND_DIM, cond.to_vec()))?;
        let row: Vec<f64> = out.data.iter().map(|v| v.to_f64()).collect();
        let (x, y, yaw) = self.codec.decode(&row);
        Ok(PoseTarget { x, y, yaw, gain: None })
    }

    pub fn predict(&self, local: &LocalMap) -> Result<PoseTarget, ModelError> {
        self.predict_with_cond(&encode_map::<T>(local)?)
    }
}

impl PoseProposer for Imitation<f32> {
    /// The single prediction, repeated `n` times.
    fn propose(&self, local: &LocalMap, n: usize, _rng: &mut PlannerRng) -> Vec<Proposal> {
        match self.predict(local) {
            Ok(t) => vec![
                Proposal {
                    pose: target_to_world(local, &t),
                    gain: None,
                };
                n
            ],
            Err(e) => {
                log::warn!("imitation prediction failed: {e}");
                Vec::new()
            }
        }
    }

    fn is_stochastic(&self) -> bool {
        false
    }
}

fn gather(conds: &[f32], records: &[DatasetRecord], pairs: &[(usize, usize)]) -> (Vec<f32>, Vec<PoseTarget>) {
    let mut c = Vec::with_capacity(pairs.len() * COND_DIM);
    let mut t = Vec::with_capacity(pairs.len());
    for &(r, j) in pairs {
        c.extend_from_slice(&conds[r * COND_DIM..(r + 1) * COND_DIM]);
        t.push(records[r].targets[j].pose);
    }
    (c, t)
}

fn eval_loss(
    model: &Imitation<f32>,
    conds: &[f32],
    records: &[DatasetRecord],
    pairs: &[(usize, usize)],
) -> Result<f64, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut sum = 0.0;
    for chunk in pairs.chunks(256) {
        let (c, t) = gather(conds, records, chunk);
        sum += model.loss(&c, &t, false, &mut rng, None)? * chunk.len() as f64;
    }
    Ok(sum / pairs.len() as f64)
}

/// Square-loss regression onto every stored teacher winner.
pub fn train_imitation(
    train: &[DatasetRecord],
    val: &[DatasetRecord],
    cfg: &TrainConfig,
) -> Result<(Imitation<f32>, TrainLog), ModelError> {
    let extent = records_extent(train)?;
    records_extent(val)?;
    let pairs = positive_pairs(train);
    let val_pairs = strided(&positive_pairs(val), cfg.val_limit);
    if pairs.is_empty() || val_pairs.is_empty() {
        return Err(ModelError::Data(
            "train and validation splits need positive targets".into(),
        ));
    }
    let conds = encode_records::<f32>(train)?;
    let val_conds = encode_records::<f32>(val)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Imitation::<f32>::new(cfg, extent, &mut rng)?;
    let mut log = TrainLog::default();
    log.epochs.push(EpochLog {
        epoch: 0,
        train_loss: None,
        val_loss: eval_loss(&model, &val_conds, val, &val_pairs)?,
    });
    let mut best = model.clone();
    let mut adam = Adam::new(model.net.num_params(), cfg.lr);
    let mut grads = vec![0.0f32; model.net.num_params()];
    let mut order = pairs;
    let mut batch_index = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut seen = 0;
        for chunk in order
            .chunks(cfg.batch_size)
            .take(cfg.max_batches_per_epoch.unwrap_or(usize::MAX))
        {
            let (c, t) = gather(&conds, train, chunk);
            grads.fill(0.0);
            let l = model.loss(&c, &t, true, &mut rng, Some(&mut grads))?;
            check_finite(l, batch_index)?;
            adam.update(model.net.params_mut(), &grads)?;
            sum += l * chunk.len() as f64;
            seen += chunk.len();
            batch_index += 1;
        }
        let v = eval_loss(&model, &val_conds, val, &val_pairs)?;
        log::info!("imitation epoch {epoch}: train {:.4} val {v:.4}", sum / seen as f64);
        log.epochs.push(EpochLog {
            epoch,
            train_loss: Some(sum / seen as f64),
            val_loss: v,
        });
        if v < log.best_val_loss() {
            log.best_epoch = epoch;
            best = model.clone();
        }
    }
    Ok((best, log))
}
