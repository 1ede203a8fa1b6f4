//! Learned components of the planner: the CVAE viewpoint sampler (optionally
//! predicting gain jointly), the map-conditioned gain estimators and the
//! imitation-learning baseline, together with their weight files.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod common;
pub mod cvae;
pub mod encode;
pub mod gain;
pub mod imitation;

use std::path::Path;

use nbv_nn::{load_weights, save_weights, NnError, WeightFile};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use common::{pose_loss, EpochLog, TrainConfig, TrainLog};
pub use cvae::{train_cvae, Cvae, CvaeLoss};
pub use encode::{encode_map, gain_normalizer, one_hot_image, PoseCodec, COND_DIM, MAP_CELLS, POSE_DIM};
pub use gain::{evaluate_gain, train_gain, EncoderKind, GainEval, GainNet};
pub use imitation::{train_imitation, Imitation};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss {value} at batch {batch}")]
    Numerical { batch: usize, value: f64 },
    #[error("model kind mismatch: expected {expected}, found {found}")]
    KindMismatch { expected: String, found: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("model metadata: {0}")]
    Meta(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Cvae,
    CvaeJoint,
    GainMlp,
    GainCnn,
    Imitation,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Cvae,
        ModelKind::CvaeJoint,
        ModelKind::GainMlp,
        ModelKind::GainCnn,
        ModelKind::Imitation,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Cvae => "cvae",
            ModelKind::CvaeJoint => "cvae_joint",
            ModelKind::GainMlp => "gain_mlp",
            ModelKind::GainCnn => "gain_cnn",
            ModelKind::Imitation => "imitation",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }
}

/// Scalars needed to rebuild a model around its stored networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    /// Local-map side in meters.
    pub extent: f64,
    #[serde(default)]
    pub gain_scale: f64,
    #[serde(default)]
    pub latent_dim: usize,
    #[serde(default)]
    pub lambda_reg: f64,
    /// Free-form training summary (epochs, losses, dataset).
    #[serde(default)]
    pub info: serde_json::Value,
}

/// Any loadable model.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Cvae(Cvae<f32>),
    Gain(GainNet<f32>),
    Imitation(Imitation<f32>),
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Cvae(m) if m.joint => ModelKind::CvaeJoint,
            AnyModel::Cvae(_) => ModelKind::Cvae,
            AnyModel::Gain(m) => match m.kind {
                EncoderKind::Pooling => ModelKind::GainMlp,
                EncoderKind::Cnn => ModelKind::GainCnn,
            },
            AnyModel::Imitation(_) => ModelKind::Imitation,
        }
    }

    fn into_file(self, info: serde_json::Value) -> Result<WeightFile, ModelError> {
        let kind = self.kind();
        let (meta, networks) = match self {
            AnyModel::Cvae(m) => (
                ModelMeta {
                    extent: m.codec.extent,
                    gain_scale: m.gain_scale,
                    latent_dim: m.latent_dim,
                    lambda_reg: m.lambda_reg,
                    info,
                },
                vec![m.encoder, m.decoder],
            ),
            AnyModel::Gain(m) => {
                let mut nets = vec![m.head];
                nets.extend(m.cnn);
                (
                    ModelMeta {
                        extent: m.codec.extent,
                        gain_scale: m.gain_scale,
                        latent_dim: 0,
                        lambda_reg: 0.0,
                        info,
                    },
                    nets,
                )
            }
            AnyModel::Imitation(m) => (
                ModelMeta {
                    extent: m.codec.extent,
                    gain_scale: 0.0,
                    latent_dim: 0,
                    lambda_reg: 0.0,
                    info,
                },
                vec![m.net],
            ),
        };
        Ok(WeightFile {
            kind: kind.tag().to_string(),
            metadata: serde_json::to_vec(&meta)?,
            networks,
        })
    }

    fn from_file(file: WeightFile) -> Result<(Self, ModelMeta), ModelError> {
        let kind = ModelKind::from_tag(&file.kind).ok_or_else(|| ModelError::KindMismatch {
            expected: "a known model kind".into(),
            found: file.kind.clone(),
        })?;
        let meta: ModelMeta = serde_json::from_slice(&file.metadata)?;
        let codec = PoseCodec::new(meta.extent);
        let count = file.networks.len();
        let wrong = |n: usize| ModelError::Shape(format!("{} file holds {count} networks, expected {n}", kind.tag()));
        let mut nets = file.networks.into_iter();
        let model = match kind {
            ModelKind::Cvae | ModelKind::CvaeJoint => {
                if count != 2 {
                    return Err(wrong(2));
                }
                AnyModel::Cvae(Cvae {
                    encoder: nets.next().unwrap(),
                    decoder: nets.next().unwrap(),
                    joint: kind == ModelKind::CvaeJoint,
                    latent_dim: meta.latent_dim,
                    codec,
                    gain_scale: meta.gain_scale,
                    lambda_reg: meta.lambda_reg,
                })
            }
            ModelKind::GainMlp | ModelKind::GainCnn => {
                let cnn_kind = kind == ModelKind::GainCnn;
                let expected = if cnn_kind { 2 } else { 1 };
                if count != expected {
                    return Err(wrong(expected));
                }
                AnyModel::Gain(GainNet {
                    kind: if cnn_kind {
                        EncoderKind::Cnn
                    } else {
                        EncoderKind::Pooling
                    },
                    head: nets.next().unwrap(),
                    cnn: nets.next(),
                    codec,
                    gain_scale: meta.gain_scale,
                })
            }
            ModelKind::Imitation => {
                if count != 1 {
                    return Err(wrong(1));
                }
                AnyModel::Imitation(Imitation {
                    net: nets.next().unwrap(),
                    codec,
                })
            }
        };
        Ok((model, meta))
    }

    pub fn save(&self, path: impl AsRef<Path>, info: serde_json::Value) -> Result<(), ModelError> {
        Ok(save_weights(path, &self.clone().into_file(info)?)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, ModelMeta), ModelError> {
        Self::from_file(load_weights(path)?)
    }

    /// Loads a file that must hold one of `accepted` kinds.
    pub fn load_expecting(path: impl AsRef<Path>, accepted: &[ModelKind]) -> Result<(Self, ModelMeta), ModelError> {
        let file = load_weights(path)?;
        if !accepted.iter().any(|k| k.tag() == file.kind) {
            return Err(ModelError::KindMismatch {
                expected: accepted.iter().map(|k| k.tag()).collect::<Vec<_>>().join(" or "),
                found: file.kind,
            });
        }
        Self::from_file(file)
    }

    pub fn num_params(&self) -> usize {
        match self {
            AnyModel::Cvae(m) => m.encoder.num_params() + m.decoder.num_params(),
            AnyModel::Gain(m) => m.head.num_params() + m.cnn_param_count(),
            AnyModel::Imitation(m) => m.net.num_params(),
        }
    }
}

pub fn load_cvae(path: impl AsRef<Path>) -> Result<Cvae<f32>, ModelError> {
    match AnyModel::load_expecting(path, &[ModelKind::Cvae, ModelKind::CvaeJoint])?.0 {
        AnyModel::Cvae(m) => Ok(m),
        _ => unreachable!(),
    }
}

pub fn load_gain(path: impl AsRef<Path>) -> Result<GainNet<f32>, ModelError> {
    match AnyModel::load_expecting(path, &[ModelKind::GainMlp, ModelKind::GainCnn])?.0 {
        AnyModel::Gain(m) => Ok(m),
        _ => unreachable!(),
    }
}

pub fn load_imitation(path: impl AsRef<Path>) -> Result<Imitation<f32>, ModelError> {
    match AnyModel::load_expecting(path, &[ModelKind::Imitation])?.0 {
        AnyModel::Imitation(m) => Ok(m),
        _ => unreachable!(),
    }
}
