//! Early-exit convolutional networks on a small self-contained CPU backend.
//!
//! A network built here carries several classifier heads along its depth.
//! Training minimises a weighted sum of the per-head losses, where the
//! weights come from an anticipated budget distribution (or one of the
//! named weighting schemes). At inference time the network can answer
//! under a hard budget, when interrupted at an arbitrary time, or via a
//! confidence cascade that stops as soon as a head is sure enough.
//!
//! Everything is generic over the scalar type through [`Scalar`]; `f32`
//! is the working precision for training and the CLI, `f64` exists so
//! tests can check gradients against finite differences with headroom.
//! Concrete aliases for the common instantiations live at the crate root.

pub mod budget;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evaluator;
pub mod inference;
pub mod layers;
pub mod net;
pub mod tensor;
pub mod trainer;

mod scalar;

pub use error::{Error, Result};
pub use net::{EarlyExitNet, HeadKind, HeadSpec, JointLoss};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Working-precision tensor used by the trainer and CLI.
pub type Tensor32 = Tensor<f32>;
/// Double-precision tensor, mainly for gradient-check oracles.
pub type Tensor64 = Tensor<f64>;
/// Working-precision network.
pub type Net32 = EarlyExitNet<f32>;
/// Double-precision network for oracle-grade checks.
pub type Net64 = EarlyExitNet<f64>;
