//! Tensor algebra, reverse-mode autodiff and the Adam optimizer.

mod adam;
pub mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{global_norm, AdamConfig, AdamState};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var, MASK_NEG};
pub use tensor::Tensor;
