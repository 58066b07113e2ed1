//! 2-d convolution (cross-correlation) with square kernels, configurable
//! stride and zero padding.
//!
//! Weight layout `[C_out, C_in, KH, KW]`, bias `[C_out]`. Direct loops,
//! no im2col; the stride-1 inner loop runs over contiguous rows so the
//! compiler can vectorise it.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Scalar;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct Conv2d<S> {
    w: Tensor<S>,
    b: Tensor<S>,
    gw: Tensor<S>,
    gb: Tensor<S>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    cache: Option<Tensor<S>>,
}

impl<S: Scalar> Conv2d<S> {
    /// He initialisation: weights ~ N(0, 2 / fan_in) with fan_in =
    /// `in_channels * kernel^2`, biases zero.
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
            return Err(Error::invalid("Conv2d::new", "channels, kernel and stride must be > 0"));
        }
        let fan_in = (in_channels * kernel * kernel) as f64;
        let std = (2.0 / fan_in).sqrt();
        let w = Tensor::randn(&[out_channels, in_channels, kernel, kernel], std, rng);
        Ok(Self::with_params(w, Tensor::zeros(&[out_channels]), stride, pad).unwrap())
    }

    /// Build from explicit weights, e.g. an identity kernel in tests.
    pub fn with_params(w: Tensor<S>, b: Tensor<S>, stride: usize, pad: usize) -> Result<Self> {
        let (co, ci, kh, kw) = w.dims4("Conv2d::with_params")?;
        if kh != kw {
            return Err(Error::invalid("Conv2d::with_params", "kernel must be square"));
        }
        if b.shape() != [co] {
            return Err(Error::shape(
                "Conv2d::with_params",
                format!("bias {:?} does not match {} output channels", b.shape(), co),
            ));
        }
        if stride == 0 {
            return Err(Error::invalid("Conv2d::with_params", "stride must be > 0"));
        }
        let gw = Tensor::zeros(w.shape());
        let gb = Tensor::zeros(b.shape());
        Ok(Conv2d {
            w,
            b,
            gw,
            gb,
            in_channels: ci,
            out_channels: co,
            kernel: kh,
            stride,
            pad,
            cache: None,
        })
    }

    fn spatial_out(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel;
        let padded_h = h + 2 * self.pad;
        let padded_w = w + 2 * self.pad;
        if padded_h < k || padded_w < k {
            return Err(Error::shape(
                "conv2d",
                format!("input {}x{} (pad {}) smaller than kernel {}", h, w, self.pad, k),
            ));
        }
        Ok(((padded_h - k) / self.stride + 1, (padded_w - k) / self.stride + 1))
    }

    fn run(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (nb, ci, h, win) = x.dims4("conv2d forward")?;
        if ci != self.in_channels {
            return Err(Error::shape(
                "conv2d forward",
                format!("expected {} input channels, got {}", self.in_channels, ci),
            ));
        }
        let (oh, ow) = self.spatial_out(h, win)?;
        let (co, k, s, p) = (self.out_channels, self.kernel, self.stride, self.pad);

        let mut out = Tensor::zeros(&[nb, co, oh, ow]);
        let xd = x.data();
        let wd = self.w.data();
        let bd = self.b.data();
        let od = out.data_mut();

        for n in 0..nb {
            for o in 0..co {
                let obase = ((n * co + o) * oh) * ow;
                od[obase..obase + oh * ow].iter_mut().for_each(|v| *v = bd[o]);
                for c in 0..ci {
                    let xbase = (n * ci + c) * h * win;
                    for kr in 0..k {
                        for kc in 0..k {
                            let wv = wd[((o * ci + c) * k + kr) * k + kc];
                            for r in 0..oh {
                                let ir = (r * s + kr) as isize - p as isize;
                                if ir < 0 || ir >= h as isize {
                                    continue;
                                }
                                let irow = xbase + ir as usize * win;
                                let orow = obase + r * ow;
                                let (lo, hi) = col_range(ow, win, s, p, kc);
                                if lo >= hi {
                                    continue;
                                }
                                if s == 1 {
                                    let ioff = (lo + kc) as isize - p as isize;
                                    let src = &xd[(irow as isize + ioff) as usize..];
                                    for (dst, xv) in
                                        od[orow + lo..orow + hi].iter_mut().zip(src)
                                    {
                                        *dst += wv * *xv;
                                    }
                                } else {
                                    for col in lo..hi {
                                        let iw = (col * s + kc) - p;
                                        od[orow + col] += wv * xd[irow + iw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn forward(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let out = self.run(x)?;
        self.cache = Some(x.clone());
        Ok(out)
    }

    pub fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.run(x)
    }

    pub fn backward(&mut self, up: &Tensor<S>) -> Result<Tensor<S>> {
        let x = self.cache.as_ref().ok_or(Error::NoForwardCache { layer: "conv2d" })?;
        let (nb, ci, h, win) = x.dims4("conv2d backward")?;
        let (oh, ow) = self.spatial_out(h, win)?;
        let (co, k, s, p) = (self.out_channels, self.kernel, self.stride, self.pad);
        if up.shape() != [nb, co, oh, ow] {
            return Err(Error::shape(
                "conv2d backward",
                format!("upstream {:?}, expected {:?}", up.shape(), [nb, co, oh, ow]),
            ));
        }

        let mut gx = Tensor::zeros(x.shape());
        let xd = x.data();
        let ud = up.data();
        let wd = self.w.data();
        let gwd = self.gw.data_mut();
        let gbd = self.gb.data_mut();
        let gxd = gx.data_mut();

        for n in 0..nb {
            for o in 0..co {
                let ubase = ((n * co + o) * oh) * ow;
                let mut bias_acc = S::zero();
                for u in &ud[ubase..ubase + oh * ow] {
                    bias_acc += *u;
                }
                gbd[o] += bias_acc;

                for c in 0..ci {
                    let xbase = (n * ci + c) * h * win;
                    for kr in 0..k {
                        for kc in 0..k {
                            let widx = ((o * ci + c) * k + kr) * k + kc;
                            let wv = wd[widx];
                            let mut w_acc = S::zero();
                            for r in 0..oh {
                                let ir = (r * s + kr) as isize - p as isize;
                                if ir < 0 || ir >= h as isize {
                                    continue;
                                }
                                let irow = xbase + ir as usize * win;
                                let urow = ubase + r * ow;
                                let (lo, hi) = col_range(ow, win, s, p, kc);
                                if lo >= hi {
                                    continue;
                                }
                                if s == 1 {
                                    let ioff = irow + lo + kc - p;
                                    let us = &ud[urow + lo..urow + hi];
                                    for (i, u) in us.iter().enumerate() {
                                        w_acc += *u * xd[ioff + i];
                                        gxd[ioff + i] += wv * *u;
                                    }
                                } else {
                                    for col in lo..hi {
                                        let iw = irow + (col * s + kc) - p;
                                        let u = ud[urow + col];
                                        w_acc += u * xd[iw];
                                        gxd[iw] += wv * u;
                                    }
                                }
                            }
                            gwd[widx] += w_acc;
                        }
                    }
                }
            }
        }
        Ok(gx)
    }

    pub fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        match *in_shape {
            [c, h, w] if c == self.in_channels => {
                let (oh, ow) = self.spatial_out(h, w)?;
                Ok(vec![self.out_channels, oh, ow])
            }
            _ => Err(Error::shape(
                "conv2d out_shape",
                format!("expected [{}, h, w], got {:?}", self.in_channels, in_shape),
            )),
        }
    }

    pub fn macs_per_example(&self, in_shape: &[usize]) -> Result<u64> {
        let out = self.out_shape(in_shape)?;
        let per_output = self.in_channels * self.kernel * self.kernel;
        Ok((out.iter().product::<usize>() * per_output) as u64)
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

/// Output-column range `[lo, hi)` whose input column `col*s + kc - p`
/// stays inside `[0, win)`.
fn col_range(ow: usize, win: usize, s: usize, p: usize, kc: usize) -> (usize, usize) {
    let lo = if p > kc { (p - kc).div_ceil(s) } else { 0 };
    let hi = if win + p > kc { ((win + p - kc - 1) / s + 1).min(ow) } else { 0 };
    (lo.min(ow), hi)
}
