//! Softmax and the fused softmax + cross-entropy classification loss.
//!
//! The loss is averaged over the batch: `loss = mean_i(-log p_i[y_i])`,
//! and the returned gradient is `(softmax - one_hot) / N`, i.e. already
//! scaled for the mean. All exponentials go through the usual max-shift
//! so large logits do not overflow.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Scalar;

/// Row-wise softmax of `[N, C]` logits. Each output row is a probability
/// vector (non-negative, sums to one up to rounding).
pub fn softmax_rows<S: Scalar>(logits: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c) = logits.dims2("softmax")?;
    if c == 0 {
        return Err(Error::invalid("softmax", "zero classes"));
    }
    let mut out = Tensor::zeros(&[n, c]);
    let xd = logits.data();
    let od = out.data_mut();
    for i in 0..n {
        let row = &xd[i * c..(i + 1) * c];
        let orow = &mut od[i * c..(i + 1) * c];
        let max = row.iter().fold(S::neg_infinity(), |a, b| if *b > a { *b } else { a });
        let mut sum = S::zero();
        for (o, x) in orow.iter_mut().zip(row) {
            let e = (*x - max).exp();
            *o = e;
            sum += e;
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
    Ok(out)
}

/// Row-wise log-softmax of `[N, C]` logits.
pub fn log_softmax_rows<S: Scalar>(logits: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c) = logits.dims2("log_softmax")?;
    let mut out = Tensor::zeros(&[n, c]);
    let xd = logits.data();
    let od = out.data_mut();
    for i in 0..n {
        let row = &xd[i * c..(i + 1) * c];
        let orow = &mut od[i * c..(i + 1) * c];
        let max = row.iter().fold(S::neg_infinity(), |a, b| if *b > a { *b } else { a });
        let mut sum = S::zero();
        for x in row {
            sum += (*x - max).exp();
        }
        let log_z = max + sum.ln();
        for (o, x) in orow.iter_mut().zip(row) {
            *o = *x - log_z;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct LossOutput<S> {
    /// Mean negative log-likelihood over the batch.
    pub loss: S,
    /// `d loss / d logits`, shape `[N, C]`.
    pub grad: Tensor<S>,
    /// Per-example negative log-likelihoods.
    pub per_example: Vec<S>,
}

/// Fused softmax + cross-entropy against integer labels.
pub fn softmax_cross_entropy<S: Scalar>(
    logits: &Tensor<S>,
    labels: &[usize],
) -> Result<LossOutput<S>> {
    let (n, c) = logits.dims2("softmax_cross_entropy")?;
    if labels.len() != n {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{} labels for a batch of {}", labels.len(), n),
        ));
    }
    if n == 0 {
        return Err(Error::invalid("softmax_cross_entropy", "empty batch"));
    }
    if let Some(bad) = labels.iter().find(|l| **l >= c) {
        return Err(Error::invalid(
            "softmax_cross_entropy",
            format!("label {} out of range for {} classes", bad, c),
        ));
    }
    logits.check_finite("softmax_cross_entropy")?;

    let log_probs = log_softmax_rows(logits)?;
    let mut grad = Tensor::zeros(&[n, c]);
    let inv_n = S::one() / S::from_f64(n as f64);
    let lp = log_probs.data();
    let gd = grad.data_mut();
    let mut per_example = Vec::with_capacity(n);
    let mut total = S::zero();
    for i in 0..n {
        let row = &lp[i * c..(i + 1) * c];
        let nll = -row[labels[i]];
        per_example.push(nll);
        total += nll;
        let grow = &mut gd[i * c..(i + 1) * c];
        for (g, l) in grow.iter_mut().zip(row) {
            *g = l.exp() * inv_n;
        }
        grow[labels[i]] -= inv_n;
    }
    Ok(LossOutput { loss: total * inv_n, grad, per_example })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_cost_ln_c() {
        for c in [2usize, 5, 10] {
            let logits = Tensor::filled(&[1, c], 0.7f64);
            let out = softmax_cross_entropy(&logits, &[0]).unwrap();
            assert!((out.loss - (c as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_correct_logits_cost_almost_nothing() {
        // loss = -ln sigmoid(20) = ln(1 + e^-20) ~= 2.061e-9
        let logits = Tensor::from_vec(&[1, 2], vec![10.0f64, -10.0]).unwrap();
        let out = softmax_cross_entropy(&logits, &[0]).unwrap();
        let expected = (-20.0f64).exp().ln_1p();
        assert!((out.loss - expected).abs() < 1e-15);
        assert!(out.loss > 0.0 && out.loss < 1e-8);
    }

    #[test]
    fn gradient_is_softmax_minus_one_hot_over_n() {
        let logits = Tensor::from_vec(&[1, 3], vec![1.0f64, 2.0, 0.5]).unwrap();
        let out = softmax_cross_entropy(&logits, &[1]).unwrap();
        let p = softmax_rows(&logits).unwrap();
        for (j, g) in out.grad.data().iter().enumerate() {
            let expected = p.data()[j] - if j == 1 { 1.0 } else { 0.0 };
            assert!((g - expected).abs() < 1e-12);
        }
        // gradient over the batch sums to zero
        let s: f64 = out.grad.data().iter().sum();
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_live_on_the_simplex() {
        let logits =
            Tensor::from_vec(&[2, 3], vec![1000.0f32, 999.0, 998.0, -5.0, 0.0, 5.0]).unwrap();
        let p = softmax_rows(&logits).unwrap();
        for i in 0..2 {
            let row = &p.data()[i * 3..(i + 1) * 3];
            let sum: f32 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn rejects_out_of_range_labels_and_bad_shapes() {
        let logits = Tensor::zeros(&[2, 3]);
        assert!(softmax_cross_entropy::<f32>(&logits, &[0, 3]).is_err());
        assert!(softmax_cross_entropy::<f32>(&logits, &[0]).is_err());
        let bad = Tensor::from_vec(&[1, 2], vec![f32::NAN, 0.0]).unwrap();
        assert!(softmax_cross_entropy(&bad, &[0]).is_err());
    }
}
