//! Dense `f64` tensors with reverse-mode differentiation, parameter storage
//! and the AdamW optimizer.

pub mod gradcheck;
mod nn;
mod optim;
mod params;
mod tape;
mod tensor;

pub use nn::{mlp_forward, Activation, LayerNorm, Linear, Mlp};
pub use optim::{clip_grad_norm, AdamW, AdamWConfig};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

pub(crate) use tape::{encode_position_into, pe_frequencies};
