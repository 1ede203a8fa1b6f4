//! Conditional VAE over next-best-view poses, optionally with a coupled
//! gain output.

use nbv_core::dataset::{DatasetRecord, PoseTarget};
use nbv_core::planning::{PlannerRng, PoseProposer, Proposal};
use nbv_core::LocalMap;
use nbv_nn::{
    kl_backward, kl_standard_normal, logvar_passes, reparam_backward, reparam_with, standard_normal, Activation, Adam,
    GaussianHead, Network, Real, TensorBuf,
};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::{
    check_finite, encode_records, pose_loss, positive_pairs, records_extent, strided, EpochLog, TrainConfig, TrainLog,
};
use crate::encode::{encode_map, target_to_world, PoseCodec, COND_DIM, POSE_DIM};
use crate::ModelError;

/// Batch-mean loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CvaeLoss {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cvae<T: Real = f32> {
    /// Q: (pose[, gain], conditioning) -> [mu | logvar].
    pub encoder: Network<T>,
    /// P: (z, conditioning) -> pose[, gain].
    pub decoder: Network<T>,
    pub joint: bool,
    pub latent_dim: usize,
    pub codec: PoseCodec,
    pub gain_scale: f64,
    pub lambda_reg: f64,
}

impl<T: Real> Cvae<T> {
    pub fn new(
        cfg: &TrainConfig,
        joint: bool,
        extent: f64,
        gain_scale: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        let x_dim = POSE_DIM + usize::from(joint);
        let mut encoder = Network::mlp(
            x_dim + COND_DIM,
            &cfg.hidden,
            2 * cfg.latent_dim,
            Activation::Relu,
            Activation::Identity,
            cfg.dropout,
        )?;
        let mut decoder = Network::mlp(
            cfg.latent_dim + COND_DIM,
            &cfg.hidden,
            x_dim,
            Activation::Relu,
            Activation::Identity,
            cfg.dropout,
        )?;
        encoder.init_params(rng);
        decoder.init_params(rng);
        Ok(Self {
            encoder,
            decoder,
            joint,
            latent_dim: cfg.latent_dim,
            codec: PoseCodec::new(extent),
            gain_scale,
            lambda_reg: cfg.lambda_reg,
        })
    }

    pub fn x_dim(&self) -> usize {
        POSE_DIM + usize::from(self.joint)
    }

    pub fn cast<U: Real>(&self) -> Cvae<U> {
        Cvae {
            encoder: self.encoder.cast(),
            decoder: self.decoder.cast(),
            joint: self.joint,
            latent_dim: self.latent_dim,
            codec: self.codec,
            gain_scale: self.gain_scale,
            lambda_reg: self.lambda_reg,
        }
    }

    fn target_row(&self, t: &PoseTarget) -> Result<Vec<T>, ModelError> {
        let mut row = self.codec.encode::<T>(t.x, t.y, t.yaw).to_vec();
        if self.joint {
            let g = t
                .gain
                .ok_or_else(|| ModelError::Data("joint model needs gain labels on every target".into()))?;
            row.push(T::from_f64(g / self.gain_scale));
        }
        Ok(row)
    }

    /// Loss on a batch with one Monte-Carlo latent per item. `conds` holds
    /// one conditioning row per target. Gradients are accumulated when
    /// buffers are given. Dropout is active when `train` is set. Randomness
    /// is drawn in a fixed order: encoder dropout, latent noise, decoder
    /// dropout.
    pub fn loss(
        &self,
        conds: &[T],
        targets: &[PoseTarget],
        train: bool,
        rng: &mut dyn RngCore,
        grads: Option<(&mut [T], &mut [T])>,
    ) -> Result<CvaeLoss, ModelError> {
        let b = targets.len();
        if b == 0 || conds.len() != b * COND_DIM {
            return Err(ModelError::Shape(format!(
                "{} targets with {} conditioning values",
                b,
                conds.len()
            )));
        }
        let xd = self.x_dim();
        let ld = self.latent_dim;
        let mut enc_in = Vec::with_capacity(b * (xd + COND_DIM));
        for (t, cond) in targets.iter().zip(conds.chunks(COND_DIM)) {
            enc_in.extend(self.target_row(t)?);
            enc_in.extend_from_slice(cond);
        }
        let enc_cache =
            self.encoder
                .forward_train(&TensorBuf::matrix(b, xd + COND_DIM, enc_in), train, Some(&mut *rng))?;
        let enc_out = enc_cache.output();
        let heads: Vec<GaussianHead<T>> = (0..b).map(|i| GaussianHead::from_row(enc_out.row(i))).collect();
        let eps: Vec<Vec<T>> = (0..b).map(|_| standard_normal(ld, rng)).collect();
        let mut dec_in = Vec::with_capacity(b * (ld + COND_DIM));
        for i in 0..b {
            dec_in.extend(reparam_with(&heads[i], &eps[i]));
            dec_in.extend_from_slice(&conds[i * COND_DIM..(i + 1) * COND_DIM]);
        }
        let dec_cache =
            self.decoder
                .forward_train(&TensorBuf::matrix(b, ld + COND_DIM, dec_in), train, Some(&mut *rng))?;
        let out = dec_cache.output();

        let inv_b = 1.0 / b as f64;
        let mut rec = 0.0;
        let mut kl = 0.0;
        let mut d_out = vec![T::ZERO; b * xd];
        for (i, t) in targets.iter().enumerate() {
            let row = out.row(i);
            let (pos, arc, g) = pose_loss(row, t, &self.codec);
            rec += pos + arc;
            for k in 0..4 {
                d_out[i * xd + k] = T::from_f64(g[k] * inv_b);
            }
            if self.joint {
                let e = row[4].to_f64() - t.gain.unwrap_or(0.0) / self.gain_scale;
                rec += e * e;
                d_out[i * xd + 4] = T::from_f64(2.0 * e * inv_b);
            }
            kl += kl_standard_normal(&heads[i]).to_f64();
        }
        let loss = CvaeLoss {
            total: (rec + self.lambda_reg * kl) * inv_b,
            reconstruction: rec * inv_b,
            kl: kl * inv_b,
        };

        if let Some((g_enc, g_dec)) = grads {
            let d_dec_in = self
                .decoder
                .backward(&dec_cache, &TensorBuf::matrix(b, xd, d_out), g_dec)?;
            let lam = T::from_f64(self.lambda_reg * inv_b);
            let mut d_enc_out = vec![T::ZERO; b * 2 * ld];
            for i in 0..b {
                let dz = &d_dec_in.row(i)[..ld];
                let (dmu_r, dlv_r) = reparam_backward(&heads[i], &eps[i], dz);
                let (dmu_k, dlv_k) = kl_backward(&heads[i]);
                let raw = enc_out.row(i);
                for k in 0..ld {
                    d_enc_out[i * 2 * ld + k] = dmu_r[k] + lam * dmu_k[k];
                    if logvar_passes(raw[ld + k]) {
                        d_enc_out[i * 2 * ld + ld + k] = dlv_r[k] + lam * dlv_k[k];
                    }
                }
            }
            self.encoder
                .backward(&enc_cache, &TensorBuf::matrix(b, 2 * ld, d_enc_out), g_enc)?;
        }
        Ok(loss)
    }

    /// Decodes latent rows for one conditioning vector.
    pub fn decode(&self, cond: &[T], z: &[T]) -> Result<Vec<PoseTarget>, ModelError> {
        let ld = self.latent_dim;
        let n = z.len() / ld;
        let mut input = Vec::with_capacity(n * (ld + COND_DIM));
        for zi in z.chunks(ld) {
            input.extend_from_slice(zi);
            input.extend_from_slice(cond);
        }
        let out = self.decoder.forward(&TensorBuf::matrix(n, ld + COND_DIM, input))?;
        Ok((0..n)
            .map(|i| {
                let row: Vec<f64> = out.row(i).iter().map(|v| v.to_f64()).collect();
                let (x, y, yaw) = self.codec.decode(&row);
                PoseTarget {
                    x,
                    y,
                    yaw,
                    gain: self.joint.then(|| row[4].max(0.0) * self.gain_scale),
                }
            })
            .collect())
    }

    /// `n` poses in the local-map frame, each from an independent latent
    /// draw `z ~ N(0, I)`.
    pub fn sample_poses(
        &self,
        local: &LocalMap,
        n: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<PoseTarget>, ModelError> {
        let cond = encode_map::<T>(local)?;
        self.sample_with_cond(&cond, n, rng)
    }

    pub fn sample_with_cond(&self, cond: &[T], n: usize, rng: &mut dyn RngCore) -> Result<Vec<PoseTarget>, ModelError> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let z = standard_normal::<T>(n * self.latent_dim, rng);
        self.decode(cond, &z)
    }
}

impl PoseProposer for Cvae<f32> {
    fn propose(&self, local: &LocalMap, n: usize, rng: &mut PlannerRng) -> Vec<Proposal> {
        match self.sample_poses(local, n, rng) {
            Ok(ts) => ts
                .iter()
                .map(|t| Proposal {
                    pose: target_to_world(local, t),
                    gain: t.gain,
                })
                .collect(),
            Err(e) => {
                log::warn!("cvae sampling failed: {e}");
                Vec::new()
            }
        }
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

/// Validation loss in eval mode with a fixed noise stream.
fn eval_loss(
    model: &Cvae<f32>,
    conds: &[f32],
    records: &[DatasetRecord],
    pairs: &[(usize, usize)],
    seed: u64,
) -> Result<f64, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    for chunk in pairs.chunks(256) {
        let (c, t) = gather(conds, records, chunk);
        sum += model.loss(&c, &t, false, &mut rng, None)?.total * chunk.len() as f64;
    }
    Ok(sum / pairs.len() as f64)
}

/// Trains on all positive targets of `train`; returns the parameters with
/// the lowest validation loss (including the initialisation).
pub fn train_cvae(
    train: &[DatasetRecord],
    val: &[DatasetRecord],
    cfg: &TrainConfig,
    joint: bool,
    gain_scale: f64,
) -> Result<(Cvae<f32>, TrainLog), ModelError> {
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
    let init = Cvae::<f32>::new(cfg, joint, extent, gain_scale, &mut rng)?;
    let val_seed = cfg.seed ^ 0x0A11_DA7E;

    let mut log = TrainLog::default();
    let v0 = eval_loss(&init, &val_conds, val, &val_pairs, val_seed)?;
    log.epochs.push(EpochLog {
        epoch: 0,
        train_loss: None,
        val_loss: v0,
    });
    let mut best = init.clone();
    let mut model = init;
    let mut enc_adam = Adam::new(model.encoder.num_params(), cfg.lr);
    let mut dec_adam = Adam::new(model.decoder.num_params(), cfg.lr);
    let mut g_enc = vec![0.0f32; model.encoder.num_params()];
    let mut g_dec = vec![0.0f32; model.decoder.num_params()];
    let mut order = pairs.clone();
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
            g_enc.fill(0.0);
            g_dec.fill(0.0);
            let l = model.loss(&c, &t, true, &mut rng, Some((&mut g_enc, &mut g_dec)))?;
            check_finite(l.total, batch_index)?;
            enc_adam.update(model.encoder.params_mut(), &g_enc)?;
            dec_adam.update(model.decoder.params_mut(), &g_dec)?;
            sum += l.total * chunk.len() as f64;
            seen += chunk.len();
            batch_index += 1;
        }
        let v = eval_loss(&model, &val_conds, val, &val_pairs, val_seed)?;
        log::info!("cvae epoch {epoch}: train {:.4} val {v:.4}", sum / seen as f64);
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
