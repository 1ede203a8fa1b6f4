//! A small CPU neural-network stack: dense and convolutional layers,
//! dropout, activations, Adam, Gaussian reparametrisation and closed-form
//! KL, with hand-written backward passes.

mod gaussian;
mod io;
mod network;
mod optim;
mod real;

use thiserror::Error;

pub use gaussian::{
    kl_backward, kl_standard_normal, logvar_passes, reparam_backward, reparam_sample, reparam_with, standard_normal,
    GaussianHead, LOGVAR_MAX, LOGVAR_MIN,
};
pub use io::{
    decode_weights, encode_weights, load_weights, read_weights, save_weights, write_weights, WeightFile,
    WEIGHTS_FORMAT_VERSION, WEIGHTS_MAGIC,
};
pub use network::{Activation, Cache, LayerSpec, Network, TensorBuf};
pub use optim::Adam;
pub use real::Real;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error{}: {msg}", layer.map(|l| format!(" at layer {l}")).unwrap_or_default())]
    Shape { layer: Option<usize>, msg: String },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("weight file format error: {0}")]
    Format(String),
    #[error("unsupported weight file version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
