//! Minimal feed-forward network substrate: parameters, forward evaluation,
//! reverse-mode gradients, Adam and target-network blending.

mod adam;
mod mlp;
mod scalar;
pub mod serial;

pub use adam::{adam_step, soft_update, AdamState};
pub use mlp::{compute_gradients, Activation, ForwardCache, Gradients, Layer, LayerGrad, Mlp};
pub use scalar::Scalar;
