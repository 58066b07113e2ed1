//! Element-wise rectifier. Backward gates the upstream gradient on the
//! cached input sign; the subgradient at exactly zero is taken as zero.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Scalar;

#[derive(Debug, Clone, Default)]
pub struct Relu<S> {
    cache: Option<Tensor<S>>,
}

impl<S: Scalar> Relu<S> {
    pub fn new() -> Self {
        Relu { cache: None }
    }

    fn run(x: &Tensor<S>) -> Tensor<S> {
        let mut out = x.clone();
        for v in out.data_mut() {
            if *v < S::zero() {
                *v = S::zero();
            }
        }
        out
    }

    pub fn forward(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let out = Self::run(x);
        self.cache = Some(x.clone());
        Ok(out)
    }

    pub fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(Self::run(x))
    }

    pub fn backward(&mut self, up: &Tensor<S>) -> Result<Tensor<S>> {
        let x = self.cache.as_ref().ok_or(Error::NoForwardCache { layer: "relu" })?;
        if up.shape() != x.shape() {
            return Err(Error::shape(
                "relu backward",
                format!("upstream {:?}, cached input {:?}", up.shape(), x.shape()),
            ));
        }
        let mut gx = up.clone();
        for (g, xv) in gx.data_mut().iter_mut().zip(x.data()) {
            if *xv <= S::zero() {
                *g = S::zero();
            }
        }
        Ok(gx)
    }

    pub fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        Ok(in_shape.to_vec())
    }

    pub fn macs_per_example(&self, _in_shape: &[usize]) -> Result<u64> {
        Ok(0)
    }
}
