//! Dense row-major tensors over a generic float scalar.
//!
//! Data is a flat `Vec` with the last axis contiguous. Activations use the
//! layouts `[N, C, H, W]` (feature maps) and `[N, F]` (flat features);
//! parameters use whatever layout their layer documents.

use crate::error::{Error, Result};
use crate::Scalar;
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![S::zero(); n] }
    }

    pub fn filled(shape: &[usize], value: S) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("shape {:?} implies {} elements, got {}", shape, n, data.len()),
            ));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    /// Gaussian init: each element drawn as `std * N(0, 1)`.
    ///
    /// Samples are drawn in f64 and then converted, so f32 and f64 tensors
    /// built from the same RNG state see the same underlying stream.
    pub fn randn<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                S::from_f64(z * std)
            })
            .collect();
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshaped",
                format!("cannot view {:?} as {:?}", self.shape, shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Expect exactly `[N, C, H, W]`.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(op, format!("expected 4-d input, got {:?}", self.shape))),
        }
    }

    /// Expect exactly `[N, F]`.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [n, f] => Ok((n, f)),
            _ => Err(Error::shape(op, format!("expected 2-d input, got {:?}", self.shape))),
        }
    }

    /// Leading axis (batch size for activations).
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Elements per example, i.e. everything after the batch axis.
    pub fn per_example(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    /// Row `i` of a conceptually 2-d `[N, per_example]` view.
    pub fn row(&self, i: usize) -> &[S] {
        let stride = self.per_example();
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn fill(&mut self, value: S) {
        for v in &mut self.data {
            *v = value;
        }
    }

    /// Accumulate `other` element-wise. Shapes must match exactly.
    pub fn add_assign(&mut self, other: &Tensor<S>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "add_assign",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: S) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            let bad = self.data.iter().position(|v| !v.is_finite()).unwrap_or(0);
            Err(Error::NonFinite {
                op,
                detail: format!("element {} of tensor {:?}", bad, self.shape),
            })
        }
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax<S: Scalar>(values: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_element_count() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn argmax_breaks_ties_toward_lowest_index() {
        assert_eq!(argmax(&[1.0f32, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[5.0f32, 5.0, 5.0]), 0);
        assert_eq!(argmax(&[0.0f64]), 0);
    }

    #[test]
    fn add_assign_rejects_shape_mismatch() {
        let mut a = Tensor::<f64>::zeros(&[2, 2]);
        let b = Tensor::<f64>::zeros(&[4]);
        assert!(a.add_assign(&b).is_err());
    }

    #[test]
    fn randn_is_deterministic_for_a_fixed_seed() {
        use rand::SeedableRng;
        let mut r1 = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut r2 = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let a = Tensor::<f32>::randn(&[3, 3], 0.5, &mut r1);
        let b = Tensor::<f32>::randn(&[3, 3], 0.5, &mut r2);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn f32_and_f64_randn_share_the_underlying_stream() {
        use rand::SeedableRng;
        let mut r1 = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut r2 = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let a = Tensor::<f32>::randn(&[4], 1.0, &mut r1);
        let b = Tensor::<f64>::randn(&[4], 1.0, &mut r2);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((*x as f64 - y).abs() < 1e-6);
        }
    }

    #[test]
    fn check_finite_flags_nan() {
        let t = Tensor::<f32>::from_vec(&[2], vec![1.0, f32::NAN]).unwrap();
        assert!(t.check_finite("test").is_err());
        let t = Tensor::<f32>::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        assert!(t.check_finite("test").is_ok());
    }
}
