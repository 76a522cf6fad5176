//! Minimal neural-network substrate: tensors, a reverse-mode tape, dense and
//! residual layers, Adam, and checkpoint files.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use layers::{Linear, Mlp, ResidualBlock, DEFAULT_LEAKY_SLOPE};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{Tape, Var, VjpFn};
pub use tensor::Tensor;
