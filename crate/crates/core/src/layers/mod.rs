//! The layer zoo: plain structs with explicit forward/backward math.
//!
//! Every layer offers two forward entry points:
//!
//! * [`Layer::forward`] is the train-mode pass. It caches whatever the
//!   backward pass needs and, for [`BatchNorm`], uses batch statistics and
//!   updates the running ones.
//! * [`Layer::infer`] is the eval-mode pass. It takes `&self`, mutates
//!   nothing, and for [`BatchNorm`] reads the running statistics, so
//!   results are independent of how examples are batched. Many inferences
//!   may run concurrently against a shared network.
//!
//! [`Layer::backward`] consumes the most recent train-mode cache and
//! *accumulates* into the gradient buffers; calling it twice after two
//! forwards adds the two gradients. [`Layer::zero_grad`] resets them.
//! Backward without a prior train-mode forward is an error.
//!
//! Shape bookkeeping ([`Layer::out_shape`], [`Layer::macs_per_example`])
//! works on per-example shapes, `[C, H, W]` or `[F]`, without the batch
//! axis. Multiply-accumulate counts are the analytic cost model used for
//! budgets: convolutions and fully-connected layers dominate, batch norm
//! and average pooling count one fused op per element, ReLU and max
//! pooling count zero (comparisons only).

mod batchnorm;
mod conv;
mod dense;
mod loss;
mod pool;
mod relu;

pub use batchnorm::BatchNorm;
pub use conv::Conv2d;
pub use dense::Dense;
pub use loss::{log_softmax_rows, softmax_cross_entropy, softmax_rows, LossOutput};
pub use pool::{GlobalAvgPool, GridAvgPool, MaxPool2d};
pub use relu::Relu;

use crate::error::Result;
use crate::tensor::Tensor;
use crate::Scalar;

#[derive(Debug, Clone)]
pub enum Layer<S> {
    Conv2d(Conv2d<S>),
    Dense(Dense<S>),
    Relu(Relu<S>),
    MaxPool2d(MaxPool2d<S>),
    GlobalAvgPool(GlobalAvgPool<S>),
    GridAvgPool(GridAvgPool<S>),
    BatchNorm(BatchNorm<S>),
}

macro_rules! each {
    ($self:expr, $l:ident => $body:expr) => {
        match $self {
            Layer::Conv2d($l) => $body,
            Layer::Dense($l) => $body,
            Layer::Relu($l) => $body,
            Layer::MaxPool2d($l) => $body,
            Layer::GlobalAvgPool($l) => $body,
            Layer::GridAvgPool($l) => $body,
            Layer::BatchNorm($l) => $body,
        }
    };
}

impl<S: Scalar> Layer<S> {
    /// Train-mode forward; caches state for [`Layer::backward`].
    pub fn forward(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        each!(self, l => l.forward(x))
    }

    /// Eval-mode forward; no caching, no mutation.
    pub fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        each!(self, l => l.infer(x))
    }

    /// Propagate `upstream` through the cached forward pass, accumulating
    /// parameter gradients and returning the input gradient.
    pub fn backward(&mut self, upstream: &Tensor<S>) -> Result<Tensor<S>> {
        each!(self, l => l.backward(upstream))
    }

    pub fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        each!(self, l => l.out_shape(in_shape))
    }

    pub fn macs_per_example(&self, in_shape: &[usize]) -> Result<u64> {
        each!(self, l => l.macs_per_example(in_shape))
    }

    pub fn zero_grad(&mut self) {
        match self {
            Layer::Conv2d(l) => l.zero_grad(),
            Layer::Dense(l) => l.zero_grad(),
            Layer::BatchNorm(l) => l.zero_grad(),
            _ => {}
        }
    }

    /// Learnable parameters as `(name, value)` pairs, in a stable order.
    pub fn params(&self) -> Vec<(&'static str, &Tensor<S>)> {
        match self {
            Layer::Conv2d(l) => l.params(),
            Layer::Dense(l) => l.params(),
            Layer::BatchNorm(l) => l.params(),
            _ => Vec::new(),
        }
    }

    /// Learnable parameters as `(name, value, gradient)` triples.
    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<S>, &mut Tensor<S>)> {
        match self {
            Layer::Conv2d(l) => l.params_mut(),
            Layer::Dense(l) => l.params_mut(),
            Layer::BatchNorm(l) => l.params_mut(),
            _ => Vec::new(),
        }
    }

    /// Non-learnable persistent state (batch-norm running statistics).
    pub fn state(&self) -> Vec<(&'static str, &Tensor<S>)> {
        match self {
            Layer::BatchNorm(l) => l.state(),
            _ => Vec::new(),
        }
    }

    pub fn state_mut(&mut self) -> Vec<(&'static str, &mut Tensor<S>)> {
        match self {
            Layer::BatchNorm(l) => l.state_mut(),
            _ => Vec::new(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Dense(_) => "dense",
            Layer::Relu(_) => "relu",
            Layer::MaxPool2d(_) => "maxpool2d",
            Layer::GlobalAvgPool(_) => "global_avg_pool",
            Layer::GridAvgPool(_) => "grid_avg_pool",
            Layer::BatchNorm(_) => "batchnorm",
        }
    }
}
