//! Residual stencil forecaster with exact reverse-mode gradients.
//!
//! For every cell the network reads a `k x k` periodic neighbourhood of all
//! channels over the last `t_in` frames (feature vector of length
//! `N_VARS * t_in * k * k`) and predicts the next PM frame as
//!
//! ```text
//! y = x_last_pm + W_lin f + b_lin + W_out tanh(W_hid f + b_hid)
//! ```
//!
//! All arithmetic is f64 in normalized (z-scored) units. The same weights are
//! applied at every cell, so the map is translation-equivariant on the torus.

mod adam;
mod checkpoint;
mod norm;
mod stencil;

pub use adam::OptimizerState;
pub use checkpoint::{checkpoint_bytes, decode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, MODEL_MAGIC, MODEL_VERSION};
pub use norm::Normalizer;
pub use stencil::{InitMode, ModelParameters, Tape, TensorSpec};

/// A normalized full-state frame, `[var][y][x]` with `N_VARS` channels.
pub type Frame = Vec<f64>;
