//! Dense tensors and the reverse-mode layer set the track and pixel
//! transformers are built from, with losses and the optimizer stack.

pub mod encoder;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod ops;
pub mod optim;
mod param;
pub mod spec;
mod tensor;

pub use encoder::EncoderLayer;
pub use layers::{Conv1d, Dropout, LayerNorm, Linear, MaxPoolTime, MeanPool, Mhsa, Mode, Relu};
pub use loss::{cross_entropy, mse};
pub use optim::{adamw_step, clip_grad_norm, grad_norm, AdamW, PlateauConfig, PlateauScheduler};
pub use param::Parameter;
pub use spec::{AnyLayer, Extent, LayerSpec};
pub use tensor::{Real, Tensor};
