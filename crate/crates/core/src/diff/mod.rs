//! Minimal dense-tensor engine with reverse-mode gradients.

mod adam;
mod params;
mod real;
mod tape;
mod tensor;

pub use adam::{adam_step, Adam, AdamConfig, Moments};
pub use params::{ParamId, ParamStore, Parameter};
pub use real::{gemm, Real};
pub use tape::{Activation, Gradients, Tape, Var};
pub use tensor::Tensor;
