//! Spatial pooling: windowed max, whole-map average, and a fixed-grid
//! average that keeps coarse location information.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Scalar;

/// Non-overlapping-by-default max pooling. Ties inside a window resolve
/// to the first element in row-major scan order, so backward routes the
/// gradient deterministically.
#[derive(Debug, Clone)]
pub struct MaxPool2d<S> {
    kernel: usize,
    stride: usize,
    /// (input shape, winning flat input index per output element)
    cache: Option<(Vec<usize>, Vec<usize>)>,
    _marker: std::marker::PhantomData<S>,
}

impl<S: Scalar> MaxPool2d<S> {
    pub fn new(kernel: usize, stride: usize) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(Error::invalid("MaxPool2d::new", "kernel and stride must be > 0"));
        }
        Ok(MaxPool2d { kernel, stride, cache: None, _marker: std::marker::PhantomData })
    }

    fn spatial_out(&self, h: usize, w: usize, op: &'static str) -> Result<(usize, usize)> {
        if h < self.kernel || w < self.kernel {
            return Err(Error::shape(
                op,
                format!("input {}x{} smaller than pooling window {}", h, w, self.kernel),
            ));
        }
        Ok(((h - self.kernel) / self.stride + 1, (w - self.kernel) / self.stride + 1))
    }

    fn run(&self, x: &Tensor<S>, want_argmax: bool) -> Result<(Tensor<S>, Vec<usize>)> {
        let (n, c, h, w) = x.dims4("maxpool2d")?;
        let (oh, ow) = self.spatial_out(h, w, "maxpool2d")?;
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let mut arg = if want_argmax { vec![0usize; n * c * oh * ow] } else { Vec::new() };
        let xd = x.data();
        let od = out.data_mut();
        for map in 0..n * c {
            let xbase = map * h * w;
            let obase = map * oh * ow;
            for r in 0..oh {
                for col in 0..ow {
                    let r0 = r * self.stride;
                    let c0 = col * self.stride;
                    let mut best_idx = xbase + r0 * w + c0;
                    let mut best = xd[best_idx];
                    for kr in 0..self.kernel {
                        let row = xbase + (r0 + kr) * w + c0;
                        for kc in 0..self.kernel {
                            let v = xd[row + kc];
                            if v > best {
                                best = v;
                                best_idx = row + kc;
                            }
                        }
                    }
                    od[obase + r * ow + col] = best;
                    if want_argmax {
                        arg[obase + r * ow + col] = best_idx;
                    }
                }
            }
        }
        Ok((out, arg))
    }

    pub fn forward(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (out, arg) = self.run(x, true)?;
        self.cache = Some((x.shape().to_vec(), arg));
        Ok(out)
    }

    pub fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.run(x, false)?.0)
    }

    pub fn backward(&mut self, up: &Tensor<S>) -> Result<Tensor<S>> {
        let (in_shape, arg) =
            self.cache.as_ref().ok_or(Error::NoForwardCache { layer: "maxpool2d" })?;
        if up.numel() != arg.len() {
            return Err(Error::shape(
                "maxpool2d backward",
                format!("upstream {:?} does not match cached forward", up.shape()),
            ));
        }
        let mut gx = Tensor::zeros(in_shape);
        let gxd = gx.data_mut();
        for (u, idx) in up.data().iter().zip(arg) {
            gxd[*idx] += *u;
        }
        Ok(gx)
    }

    pub fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        match *in_shape {
            [c, h, w] => {
                let (oh, ow) = self.spatial_out(h, w, "maxpool2d out_shape")?;
                Ok(vec![c, oh, ow])
            }
            _ => Err(Error::shape(
                "maxpool2d out_shape",
                format!("expected [c, h, w], got {:?}", in_shape),
            )),
        }
    }

    pub fn macs_per_example(&self, _in_shape: &[usize]) -> Result<u64> {
        Ok(0)
    }
}

/// Average over the whole spatial extent: `[N, C, H, W] -> [N, C]`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool<S> {
    cache: Option<Vec<usize>>,
    _marker: std::marker::PhantomData<S>,
}

impl<S: Scalar> GlobalAvgPool<S> {
    pub fn new() -> Self {
        GlobalAvgPool { cache: None, _marker: std::marker::PhantomData }
    }

    fn run(x: &Tensor<S>) -> Result<Tensor<S>> {
        let (n, c, h, w) = x.dims4("global_avg_pool")?;
        let area = S::from_f64((h * w) as f64);
        let mut out = Tensor::zeros(&[n, c]);
        let xd = x.data();
        let od = out.data_mut();
        for map in 0..n * c {
            let mut acc = S::zero();
            for v in &xd[map * h * w..(map + 1) * h * w] {
                acc += *v;
            }
            od[map] = acc / area;
        }
        Ok(out)
    }

    pub fn forward(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let out = Self::run(x)?;
        self.cache = Some(x.shape().to_vec());
        Ok(out)
    }

    pub fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Self::run(x)
    }

    pub fn backward(&mut self, up: &Tensor<S>) -> Result<Tensor<S>> {
        let in_shape =
            self.cache.as_ref().ok_or(Error::NoForwardCache { layer: "global_avg_pool" })?;
        let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
        if up.shape() != [n, c] {
            return Err(Error::shape(
                "global_avg_pool backward",
                format!("upstream {:?}, expected {:?}", up.shape(), [n, c]),
            ));
        }
        let inv_area = S::one() / S::from_f64((h * w) as f64);
        let mut gx = Tensor::zeros(in_shape);
        let gxd = gx.data_mut();
        for (map, u) in up.data().iter().enumerate() {
            let g = *u * inv_area;
            for v in &mut gxd[map * h * w..(map + 1) * h * w] {
                *v += g;
            }
        }
        Ok(gx)
    }

    pub fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        match *in_shape {
            [c, _, _] => Ok(vec![c]),
            _ => Err(Error::shape(
                "global_avg_pool out_shape",
                format!("expected [c, h, w], got {:?}", in_shape),
            )),
        }
    }

    pub fn macs_per_example(&self, in_shape: &[usize]) -> Result<u64> {
        self.out_shape(in_shape)?;
        Ok(in_shape.iter().product::<usize>() as u64)
    }
}

/// Average pooling onto a fixed `g x g` grid of near-equal contiguous
/// regions: `[N, C, H, W] -> [N, C, g, g]`.
///
/// Region `i` along an axis of extent `e` covers `[floor(i*e/g),
/// floor((i+1)*e/g))`, so region sizes differ by at most one. Requires
/// `H >= g` and `W >= g`.
#[derive(Debug, Clone)]
pub struct GridAvgPool<S> {
    grid: usize,
    cache: Option<Vec<usize>>,
    _marker: std::marker::PhantomData<S>,
}

fn region(extent: usize, grid: usize, i: usize) -> std::ops::Range<usize> {
    (i * extent / grid)..((i + 1) * extent / grid)
}

impl<S: Scalar> GridAvgPool<S> {
    pub fn new(grid: usize) -> Result<Self> {
        if grid == 0 {
            return Err(Error::invalid("GridAvgPool::new", "grid must be > 0"));
        }
        Ok(GridAvgPool { grid, cache: None, _marker: std::marker::PhantomData })
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    fn check(&self, h: usize, w: usize, op: &'static str) -> Result<()> {
        if h < self.grid || w < self.grid {
            return Err(Error::shape(
                op,
                format!("spatial extent {}x{} smaller than {}x{} grid", h, w, self.grid, self.grid),
            ));
        }
        Ok(())
    }

    fn run(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (n, c, h, w) = x.dims4("grid_avg_pool")?;
        self.check(h, w, "grid_avg_pool")?;
        let g = self.grid;
        let mut out = Tensor::zeros(&[n, c, g, g]);
        let xd = x.data();
        let od = out.data_mut();
        for map in 0..n * c {
            let xbase = map * h * w;
            let obase = map * g * g;
            for gr in 0..g {
                let rows = region(h, g, gr);
                for gc in 0..g {
                    let cols = region(w, g, gc);
                    let mut acc = S::zero();
                    for r in rows.clone() {
                        for cc in cols.clone() {
                            acc += xd[xbase + r * w + cc];
                        }
                    }
                    let count = (rows.len() * cols.len()) as f64;
                    od[obase + gr * g + gc] = acc / S::from_f64(count);
                }
            }
        }
        Ok(out)
    }

    pub fn forward(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let out = self.run(x)?;
        self.cache = Some(x.shape().to_vec());
        Ok(out)
    }

    pub fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.run(x)
    }

    pub fn backward(&mut self, up: &Tensor<S>) -> Result<Tensor<S>> {
        let in_shape =
            self.cache.clone().ok_or(Error::NoForwardCache { layer: "grid_avg_pool" })?;
        let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
        let g = self.grid;
        if up.shape() != [n, c, g, g] {
            return Err(Error::shape(
                "grid_avg_pool backward",
                format!("upstream {:?}, expected {:?}", up.shape(), [n, c, g, g]),
            ));
        }
        let mut gx = Tensor::zeros(&in_shape);
        let gxd = gx.data_mut();
        let ud = up.data();
        for map in 0..n * c {
            let xbase = map * h * w;
            let obase = map * g * g;
            for gr in 0..g {
                let rows = region(h, g, gr);
                for gc in 0..g {
                    let cols = region(w, g, gc);
                    let inv = S::one() / S::from_f64((rows.len() * cols.len()) as f64);
                    let grad = ud[obase + gr * g + gc] * inv;
                    for r in rows.clone() {
                        for cc in cols.clone() {
                            gxd[xbase + r * w + cc] += grad;
                        }
                    }
                }
            }
        }
        Ok(gx)
    }

    pub fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        match *in_shape {
            [c, h, w] => {
                self.check(h, w, "grid_avg_pool out_shape")?;
                Ok(vec![c, self.grid, self.grid])
            }
            _ => Err(Error::shape(
                "grid_avg_pool out_shape",
                format!("expected [c, h, w], got {:?}", in_shape),
            )),
        }
    }

    pub fn macs_per_example(&self, in_shape: &[usize]) -> Result<u64> {
        self.out_shape(in_shape)?;
        Ok(in_shape.iter().product::<usize>() as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxpool_picks_window_maxima() {
        let mut pool = MaxPool2d::new(2, 2).unwrap();
        let x = Tensor::from_vec(
            &[1, 1, 4, 4],
            vec![
                1.0f32, 2.0, 5.0, 6.0, //
                3.0, 4.0, 7.0, 8.0, //
                -1.0, -2.0, 0.0, 0.0, //
                -3.0, -4.0, 0.0, 9.0,
            ],
        )
        .unwrap();
        let y = pool.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[4.0, 8.0, -1.0, 9.0]);
    }

    #[test]
    fn maxpool_backward_routes_to_the_argmax_only() {
        let mut pool = MaxPool2d::new(2, 2).unwrap();
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0f64, 3.0, 2.0, 0.0]).unwrap();
        pool.forward(&x).unwrap();
        let gx = pool.backward(&Tensor::filled(&[1, 1, 1, 1], 5.0)).unwrap();
        assert_eq!(gx.data(), &[0.0, 5.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_tie_goes_to_first_in_scan_order() {
        let mut pool = MaxPool2d::new(2, 2).unwrap();
        let x = Tensor::filled(&[1, 1, 2, 2], 7.0f32);
        pool.forward(&x).unwrap();
        let gx = pool.backward(&Tensor::filled(&[1, 1, 1, 1], 1.0)).unwrap();
        assert_eq!(gx.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn global_avg_of_constant_map_is_that_constant() {
        let pool = GlobalAvgPool::new();
        let x = Tensor::filled(&[2, 3, 5, 5], 0.25f32);
        let y = pool.infer(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert!(y.data().iter().all(|v| (*v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn global_avg_backward_spreads_evenly() {
        let mut pool = GlobalAvgPool::new();
        let x = Tensor::filled(&[1, 1, 2, 2], 1.0f64);
        pool.forward(&x).unwrap();
        let gx = pool.backward(&Tensor::filled(&[1, 1], 8.0)).unwrap();
        assert_eq!(gx.data(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn grid_regions_partition_with_near_equal_sizes() {
        // extent 7 over a 4-way grid splits 1/2/2/2.
        let sizes: Vec<usize> = (0..4).map(|i| region(7, 4, i).len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 7);
        assert!(sizes.iter().all(|s| *s == 1 || *s == 2));
        // exact division splits evenly.
        let sizes: Vec<usize> = (0..4).map(|i| region(8, 4, i).len()).collect();
        assert_eq!(sizes, vec![2, 2, 2, 2]);
    }

    #[test]
    fn grid_avg_on_exact_multiple_matches_block_means() {
        let mut pool = GridAvgPool::new(2).unwrap();
        let x = Tensor::from_vec(
            &[1, 1, 4, 4],
            vec![
                1.0f64, 1.0, 2.0, 2.0, //
                1.0, 1.0, 2.0, 2.0, //
                3.0, 3.0, 4.0, 4.0, //
                3.0, 3.0, 4.0, 4.0,
            ],
        )
        .unwrap();
        let y = pool.forward(&x).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn grid_avg_rejects_small_spatial_extent() {
        let pool = GridAvgPool::<f32>::new(4).unwrap();
        assert!(pool.infer(&Tensor::zeros(&[1, 2, 3, 8])).is_err());
        assert!(pool.out_shape(&[2, 8, 3]).is_err());
        assert!(pool.out_shape(&[2, 4, 4]).is_ok());
    }
}
