//! Minimal dense transformer machinery with hand-written backward passes.

pub mod layers;
pub mod params;
pub mod scalar;
pub mod stack;
pub mod tensor;

pub use params::{Init, ParamId, ParamSet};
pub use scalar::Scalar;
pub use stack::{Pass, Stack, StackCache};
pub use tensor::Tensor;
