//! Minimal dense-matrix autodiff used by the encoders and the training loop.

mod layers;
mod matrix;
mod optim;
mod params;
mod tape;

pub use layers::{LayerNormParams, Linear, TransformerBlock};
pub use matrix::{dot, l2_norm, Matrix};
pub use optim::{clip_global_norm, AdamW, AdamWConfig};
pub use params::{Grads, ParamId, ParamStore};
pub use tape::{Tape, Var};

pub(crate) use params::normal_matrix;
