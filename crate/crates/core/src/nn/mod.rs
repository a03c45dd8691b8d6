//! Minimal dense networks with hand-written reverse-mode gradients.

mod adam;
mod checkpoint;
mod mlp;

pub use adam::{polyak, Adam, AdamConfig};
pub use checkpoint::{read_networks, write_networks, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use mlp::{Activation, Gradients, Mlp, Tape};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("backward pass needs a tape from a non-empty forward pass")]
    EmptyTape,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite {0}; update skipped")]
    NonFinite(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-softmax of a logit slice, shifted by the max for stability.
pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| (v - m) - log_sum).collect()
}
