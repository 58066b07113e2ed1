//! Batch normalisation with learnable scale and shift.
//!
//! Works per channel on `[N, C, H, W]` (statistics over N, H, W) and per
//! feature on `[N, F]` (statistics over N). Train-mode forwards use batch
//! statistics (population variance) and fold them into running estimates
//! with `running = 0.9 * running + 0.1 * batch`; eval-mode forwards use
//! the running estimates only, so nothing depends on batch composition.
//! Train mode requires at least two examples; eval mode works on any
//! batch size including one.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Scalar;

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone)]
pub struct BatchNorm<S> {
    features: usize,
    gamma: Tensor<S>,
    beta: Tensor<S>,
    g_gamma: Tensor<S>,
    g_beta: Tensor<S>,
    running_mean: Tensor<S>,
    running_var: Tensor<S>,
    cache: Option<BnCache<S>>,
}

#[derive(Debug, Clone)]
struct BnCache<S> {
    xhat: Tensor<S>,
    inv_std: Vec<S>,
}

/// How the feature axis maps onto the flat buffer.
struct Plan {
    groups: usize,     // N for 4-d, N for 2-d
    group_len: usize,  // H*W for 4-d, 1 for 2-d
    features: usize,
}

impl Plan {
    fn of(shape: &[usize], features: usize, op: &'static str) -> Result<Plan> {
        match *shape {
            [n, c, h, w] if c == features => Ok(Plan { groups: n, group_len: h * w, features }),
            [n, f] if f == features => Ok(Plan { groups: n, group_len: 1, features }),
            _ => Err(Error::shape(
                op,
                format!("input {:?} does not carry {} features on axis 1", shape, features),
            )),
        }
    }

    /// Number of values each feature's statistics are computed over.
    fn count(&self) -> usize {
        self.groups * self.group_len
    }

    /// Visit the flat ranges belonging to feature `c`, one per group.
    fn ranges(&self, c: usize) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        let stride = self.features * self.group_len;
        let offset = c * self.group_len;
        (0..self.groups).map(move |n| {
            let start = n * stride + offset;
            start..start + self.group_len
        })
    }
}

impl<S: Scalar> BatchNorm<S> {
    pub fn new(features: usize) -> Result<Self> {
        if features == 0 {
            return Err(Error::invalid("BatchNorm::new", "features must be > 0"));
        }
        Ok(BatchNorm {
            features,
            gamma: Tensor::filled(&[features], S::one()),
            beta: Tensor::zeros(&[features]),
            g_gamma: Tensor::zeros(&[features]),
            g_beta: Tensor::zeros(&[features]),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::filled(&[features], S::one()),
            cache: None,
        })
    }

    pub fn forward(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let plan = Plan::of(x.shape(), self.features, "batchnorm forward")?;
        if plan.groups < 2 {
            return Err(Error::invalid(
                "batchnorm forward",
                "train mode needs a batch of at least 2 examples",
            ));
        }
        let m = S::from_f64(plan.count() as f64);
        let eps = S::from_f64(EPS);
        let mom = S::from_f64(MOMENTUM);
        let one_minus = S::one() - mom;

        let xd = x.data();
        let mut xhat = Tensor::zeros(x.shape());
        let mut out = Tensor::zeros(x.shape());
        let mut inv_std = vec![S::zero(); self.features];

        for c in 0..self.features {
            let mut sum = S::zero();
            for r in plan.ranges(c) {
                for v in &xd[r] {
                    sum += *v;
                }
            }
            let mean = sum / m;

            let mut var_sum = S::zero();
            for r in plan.ranges(c) {
                for v in &xd[r] {
                    let d = *v - mean;
                    var_sum += d * d;
                }
            }
            let var = var_sum / m;
            let inv = S::one() / (var + eps).sqrt();
            inv_std[c] = inv;

            let g = self.gamma.data()[c];
            let b = self.beta.data()[c];
            {
                let xh = xhat.data_mut();
                let od = out.data_mut();
                for r in plan.ranges(c) {
                    for i in r {
                        let h = (xd[i] - mean) * inv;
                        xh[i] = h;
                        od[i] = g * h + b;
                    }
                }
            }

            let rm = &mut self.running_mean.data_mut()[c];
            *rm = mom * *rm + one_minus * mean;
            let rv = &mut self.running_var.data_mut()[c];
            *rv = mom * *rv + one_minus * var;
        }

        self.cache = Some(BnCache { xhat, inv_std });
        Ok(out)
    }

    pub fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let plan = Plan::of(x.shape(), self.features, "batchnorm infer")?;
        let eps = S::from_f64(EPS);
        let xd = x.data();
        let mut out = Tensor::zeros(x.shape());
        let od = out.data_mut();
        for c in 0..self.features {
            let mean = self.running_mean.data()[c];
            let inv = S::one() / (self.running_var.data()[c] + eps).sqrt();
            let g = self.gamma.data()[c];
            let b = self.beta.data()[c];
            for r in plan.ranges(c) {
                for i in r {
                    od[i] = g * (xd[i] - mean) * inv + b;
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, up: &Tensor<S>) -> Result<Tensor<S>> {
        let cache = self.cache.as_ref().ok_or(Error::NoForwardCache { layer: "batchnorm" })?;
        if up.shape() != cache.xhat.shape() {
            return Err(Error::shape(
                "batchnorm backward",
                format!("upstream {:?}, cached forward {:?}", up.shape(), cache.xhat.shape()),
            ));
        }
        let plan = Plan::of(up.shape(), self.features, "batchnorm backward")?;
        let m = S::from_f64(plan.count() as f64);

        let ud = up.data();
        let xh = cache.xhat.data();
        let mut gx = Tensor::zeros(up.shape());
        let gxd = gx.data_mut();

        for c in 0..self.features {
            let mut sum_dy = S::zero();
            let mut sum_dy_xhat = S::zero();
            for r in plan.ranges(c) {
                for i in r {
                    sum_dy += ud[i];
                    sum_dy_xhat += ud[i] * xh[i];
                }
            }
            self.g_beta.data_mut()[c] += sum_dy;
            self.g_gamma.data_mut()[c] += sum_dy_xhat;

            // dx = gamma * inv_std / m * (m*dy - sum(dy) - xhat * sum(dy*xhat))
            let scale = self.gamma.data()[c] * cache.inv_std[c] / m;
            for r in plan.ranges(c) {
                for i in r {
                    gxd[i] = scale * (m * ud[i] - sum_dy - xh[i] * sum_dy_xhat);
                }
            }
        }
        Ok(gx)
    }

    pub fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        let ok = match *in_shape {
            [c, _, _] => c == self.features,
            [f] => f == self.features,
            _ => false,
        };
        if ok {
            Ok(in_shape.to_vec())
        } else {
            Err(Error::shape(
                "batchnorm out_shape",
                format!("input {:?} does not carry {} features", in_shape, self.features),
            ))
        }
    }

    pub fn macs_per_example(&self, in_shape: &[usize]) -> Result<u64> {
        self.out_shape(in_shape)?;
        Ok(in_shape.iter().product::<usize>() as u64)
    }

    pub fn zero_grad(&mut self) {
        self.g_gamma.fill(S::zero());
        self.g_beta.fill(S::zero());
    }

    pub fn params(&self) -> Vec<(&'static str, &Tensor<S>)> {
        vec![("gamma", &self.gamma), ("beta", &self.beta)]
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<S>, &mut Tensor<S>)> {
        vec![
            ("gamma", &mut self.gamma, &mut self.g_gamma),
            ("beta", &mut self.beta, &mut self.g_beta),
        ]
    }

    pub fn state(&self) -> Vec<(&'static str, &Tensor<S>)> {
        vec![("running_mean", &self.running_mean), ("running_var", &self.running_var)]
    }

    pub fn state_mut(&mut self) -> Vec<(&'static str, &mut Tensor<S>)> {
        vec![("running_mean", &mut self.running_mean), ("running_var", &mut self.running_var)]
    }
}
