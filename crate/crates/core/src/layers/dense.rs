//! Fully-connected layer, `y = W x + b`.
//!
//! Weight layout `[out, in]`, bias `[out]`. Accepts any input rank and
//! flattens everything after the batch axis; the backward pass hands the
//! input gradient back in the original shape, so a dense layer can sit
//! directly on top of a feature map.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Scalar;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct Dense<S> {
    w: Tensor<S>,
    b: Tensor<S>,
    gw: Tensor<S>,
    gb: Tensor<S>,
    in_features: usize,
    out_features: usize,
    /// Input from the last train-mode forward, plus its original shape.
    cache: Option<(Tensor<S>, Vec<usize>)>,
}

impl<S: Scalar> Dense<S> {
    /// He initialisation: weights ~ N(0, 2 / in_features), biases zero.
    pub fn new<R: Rng>(in_features: usize, out_features: usize, rng: &mut R) -> Result<Self> {
        if in_features == 0 || out_features == 0 {
            return Err(Error::invalid("Dense::new", "feature counts must be > 0"));
        }
        let std = (2.0 / in_features as f64).sqrt();
        let w = Tensor::randn(&[out_features, in_features], std, rng);
        Ok(Self::with_params(w, Tensor::zeros(&[out_features])).unwrap())
    }

    pub fn with_params(w: Tensor<S>, b: Tensor<S>) -> Result<Self> {
        let (out_features, in_features) = w.dims2("Dense::with_params")?;
        if b.shape() != [out_features] {
            return Err(Error::shape(
                "Dense::with_params",
                format!("bias {:?} does not match {} outputs", b.shape(), out_features),
            ));
        }
        let gw = Tensor::zeros(w.shape());
        let gb = Tensor::zeros(b.shape());
        Ok(Dense { w, b, gw, gb, in_features, out_features, cache: None })
    }

    fn check_flat(&self, x: &Tensor<S>, op: &'static str) -> Result<usize> {
        let n = x.batch();
        if x.shape().len() < 2 || x.per_example() != self.in_features {
            return Err(Error::shape(
                op,
                format!(
                    "input {:?} does not flatten to [{}, {}]",
                    x.shape(),
                    n,
                    self.in_features
                ),
            ));
        }
        Ok(n)
    }

    fn run(&self, x: &Tensor<S>, n: usize) -> Tensor<S> {
        let mut out = Tensor::zeros(&[n, self.out_features]);
        let xd = x.data();
        let wd = self.w.data();
        let bd = self.b.data();
        let od = out.data_mut();
        for i in 0..n {
            let xrow = &xd[i * self.in_features..(i + 1) * self.in_features];
            let orow = &mut od[i * self.out_features..(i + 1) * self.out_features];
            for (j, o) in orow.iter_mut().enumerate() {
                let wrow = &wd[j * self.in_features..(j + 1) * self.in_features];
                let mut acc = bd[j];
                for (wv, xv) in wrow.iter().zip(xrow) {
                    acc += *wv * *xv;
                }
                *o = acc;
            }
        }
        out
    }

    pub fn forward(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let n = self.check_flat(x, "dense forward")?;
        let out = self.run(x, n);
        self.cache = Some((x.clone(), x.shape().to_vec()));
        Ok(out)
    }

    pub fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let n = self.check_flat(x, "dense infer")?;
        Ok(self.run(x, n))
    }

    pub fn backward(&mut self, up: &Tensor<S>) -> Result<Tensor<S>> {
        let (x, orig_shape) =
            self.cache.as_ref().ok_or(Error::NoForwardCache { layer: "dense" })?;
        let n = x.batch();
        if up.shape() != [n, self.out_features] {
            return Err(Error::shape(
                "dense backward",
                format!("upstream {:?}, expected {:?}", up.shape(), [n, self.out_features]),
            ));
        }

        let mut gx = Tensor::zeros(&[n, self.in_features]);
        let xd = x.data();
        let ud = up.data();
        let wd = self.w.data();
        let gwd = self.gw.data_mut();
        let gbd = self.gb.data_mut();
        let gxd = gx.data_mut();

        for i in 0..n {
            let xrow = &xd[i * self.in_features..(i + 1) * self.in_features];
            let urow = &ud[i * self.out_features..(i + 1) * self.out_features];
            let gxrow = &mut gxd[i * self.in_features..(i + 1) * self.in_features];
            for (j, u) in urow.iter().enumerate() {
                gbd[j] += *u;
                let wrow = &wd[j * self.in_features..(j + 1) * self.in_features];
                let gwrow = &mut gwd[j * self.in_features..(j + 1) * self.in_features];
                for k in 0..self.in_features {
                    gwrow[k] += *u * xrow[k];
                    gxrow[k] += *u * wrow[k];
                }
            }
        }
        let shape = orig_shape.clone();
        gx.reshaped(&shape)
    }

    pub fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        let flat: usize = in_shape.iter().product();
        if in_shape.is_empty() || flat != self.in_features {
            return Err(Error::shape(
                "dense out_shape",
                format!("input {:?} does not flatten to {}", in_shape, self.in_features),
            ));
        }
        Ok(vec![self.out_features])
    }

    pub fn macs_per_example(&self, in_shape: &[usize]) -> Result<u64> {
        self.out_shape(in_shape)?;
        Ok((self.in_features * self.out_features) as u64)
    }

    pub fn zero_grad(&mut self) {
        self.gw.fill(S::zero());
        self.gb.fill(S::zero());
    }

    pub fn params(&self) -> Vec<(&'static str, &Tensor<S>)> {
        vec![("weight", &self.w), ("bias", &self.b)]
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<S>, &mut Tensor<S>)> {
        vec![("weight", &mut self.w, &mut self.gw), ("bias", &mut self.b, &mut self.gb)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_matrix_vector_product() {
        let w = Tensor::from_vec(&[2, 3], vec![1.0f64, 0.0, -1.0, 2.0, 1.0, 0.5]).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.5, -0.5]).unwrap();
        let mut fc = Dense::with_params(w, b).unwrap();
        let x = Tensor::from_vec(&[1, 3], vec![2.0, 3.0, 4.0]).unwrap();
        let y = fc.forward(&x).unwrap();
        // row0: 2 - 4 + 0.5 = -1.5, row1: 4 + 3 + 2 - 0.5 = 8.5
        assert_eq!(y.data(), &[-1.5, 8.5]);
    }

    #[test]
    fn flattens_feature_maps_and_restores_gradient_shape() {
        let w = Tensor::filled(&[2, 12], 0.1f64);
        let b = Tensor::zeros(&[2]);
        let mut fc = Dense::with_params(w, b).unwrap();
        let x = Tensor::filled(&[3, 3, 2, 2], 1.0);
        let y = fc.forward(&x).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        let gx = fc.backward(&Tensor::filled(&[3, 2], 1.0)).unwrap();
        assert_eq!(gx.shape(), &[3, 3, 2, 2]);
    }

    #[test]
    fn rejects_wrong_feature_count() {
        let w = Tensor::zeros(&[2, 5]);
        let b = Tensor::zeros(&[2]);
        let fc = Dense::<f32>::with_params(w, b).unwrap();
        assert!(fc.infer(&Tensor::zeros(&[1, 4])).is_err());
    }
}
