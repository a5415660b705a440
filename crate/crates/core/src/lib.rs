//! Long-term motion representations learned from point tracks.
//!
//! The crate covers the track data model and file formats ([`trackio`]), a
//! small reverse-mode layer library ([`nn`]), the track transformer and its
//! pixel counterpart ([`model`]), the training protocol ([`train`]),
//! metrics ([`eval`]), late logit fusion ([`fusion`]), gradient saliency
//! ([`saliency`]) and a synthetic motion dataset ([`synthgen`]).

pub mod error;
pub mod eval;
pub mod fusion;
pub mod model;
pub mod nn;
pub mod saliency;
pub mod seed;
pub mod synthgen;
pub mod trackio;
pub mod train;

pub use error::{Error, Result};
pub use model::{HeadKind, Model, ModelConfig, MovTConfig, MovTModel, PixTConfig, PixTModel};
pub use nn::{Real, Tensor};
pub use trackio::{Label, PointTrackSet, Split, VelocityTensor};
