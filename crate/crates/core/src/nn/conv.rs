use super::gemm::{gemm_nn, gemm_nt, gemm_tn_store};
use super::{uniform_init, Layer, Mode, Param, Real, Tensor};
use crate::error::{Error, Result};

/// Stride-1 cross-correlation with "same" zero padding (`kernel / 2`).
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    kernel: usize,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut impl rand::Rng,
    ) -> Self {
        assert!(kernel % 2 == 1, "odd kernels only");
        let fan_in = (in_channels * kernel * kernel) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let w = uniform_init(rng, out_channels * in_channels * kernel * kernel, bound);
        let b = uniform_init(rng, out_channels, bound);
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                Tensor::from_vec(&[out_channels, in_channels, kernel, kernel], w).unwrap(),
            ),
            bias: Param::new(
                format!("{name}.bias"),
                Tensor::from_vec(&[out_channels], b).unwrap(),
            ),
            kernel,
            cache: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
        let dims = x.dims4()?;
        if dims.1 != self.in_channels() {
            return Err(Error::Shape(format!(
                "{}: expected {} input channels, got {}",
                self.weight.name,
                self.in_channels(),
                dims.1
            )));
        }
        Ok(dims)
    }
}

/// Valid output range for a horizontal tap offset `d` on rows of width `w`.
#[inline]
fn tap_range(d: isize, w: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (w as isize - d.max(0)).max(0) as usize;
    (lo, hi.max(lo))
}

/// Unfolds one `C x H x W` item into `(C * k * k) x (H * W)` rows, row
/// `(ci, ky, kx)` holding the input plane shifted by the tap offset with zero
/// fill. A 1x1 kernel needs no copy.
fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, k: usize, col: &mut [T]) {
    let pad = (k / 2) as isize;
    let plane = h * w;
    for ci in 0..c {
        let src = &x[ci * plane..(ci + 1) * plane];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let (lo, hi) = tap_range(dx, w);
                let row = &mut col[((ci * k + ky) * k + kx) * plane..][..plane];
                for t in 0..h {
                    let out = &mut row[t * w..(t + 1) * w];
                    let s = t as isize + dy;
                    if s < 0 || s >= h as isize || lo >= hi {
                        out.fill(T::zero());
                        continue;
                    }
                    let s = s as usize;
                    let from = (lo as isize + dx) as usize;
                    out[..lo].fill(T::zero());
                    out[lo..hi].copy_from_slice(&src[s * w + from..s * w + from + hi - lo]);
                    out[hi..].fill(T::zero());
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates column gradients back into the input.
fn col2im<T: Real>(col: &[T], c: usize, h: usize, w: usize, k: usize, dx_out: &mut [T]) {
    let pad = (k / 2) as isize;
    let plane = h * w;
    for ci in 0..c {
        let dst = &mut dx_out[ci * plane..(ci + 1) * plane];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let (lo, hi) = tap_range(dx, w);
                let row = &col[((ci * k + ky) * k + kx) * plane..][..plane];
                for t in 0..h {
                    let s = t as isize + dy;
                    if s < 0 || s >= h as isize || lo >= hi {
                        continue;
                    }
                    let s = s as usize;
                    let from = (lo as isize + dx) as usize;
                    for (d, &v) in dst[s * w + from..s * w + from + hi - lo]
                        .iter_mut()
                        .zip(&row[t * w + lo..t * w + hi])
                    {
                        *d += v;
                    }
                }
            }
        }
    }
}

impl<T: Real> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.cache = (mode == Mode::Train).then(|| x.clone());
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, ci_n, h, w) = self.check_input(x)?;
        let co_n = self.out_channels();
        let k = self.kernel;
        let plane = h * w;
        let rows = ci_n * k * k;
        let weights = self.weight.value.data();
        let bias = self.bias.value.data();
        let mut out = Tensor::zeros(&[n, co_n, h, w]);
        let od = out.data_mut();
        let mut col = if k == 1 {
            Vec::new()
        } else {
            vec![T::zero(); rows * plane]
        };

        for b in 0..n {
            let xb = &x.data()[b * ci_n * plane..(b + 1) * ci_n * plane];
            let cols: &[T] = if k == 1 {
                xb
            } else {
                im2col(xb, ci_n, h, w, k, &mut col);
                &col
            };
            let ob = &mut od[b * co_n * plane..(b + 1) * co_n * plane];
            for (co, out_plane) in ob.chunks_exact_mut(plane).enumerate() {
                out_plane.fill(bias[co]);
            }
            gemm_nn(co_n, rows, plane, weights, cols, ob);
        }
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Shape("conv2d backward without a training forward".into()))?;
        let (n, ci_n, h, w) = x.dims4()?;
        let co_n = self.out_channels();
        if grad_out.shape() != [n, co_n, h, w] {
            return Err(Error::Shape(format!(
                "conv2d upstream gradient {:?} does not match output [{n}, {co_n}, {h}, {w}]",
                grad_out.shape()
            )));
        }
        let k = self.kernel;
        let plane = h * w;
        let rows = ci_n * k * k;
        let weights = self.weight.value.data();
        let gd = grad_out.data();
        let mut grad_in = Tensor::zeros(&[n, ci_n, h, w]);
        let gid = grad_in.data_mut();
        let wgrad = self.weight.grad.data_mut();
        let bgrad = self.bias.grad.data_mut();
        let mut col = vec![T::zero(); if k == 1 { 0 } else { rows * plane }];
        let mut dcol = vec![T::zero(); if k == 1 { 0 } else { rows * plane }];

        for b in 0..n {
            let xb = &x.data()[b * ci_n * plane..(b + 1) * ci_n * plane];
            let cols: &[T] = if k == 1 {
                xb
            } else {
                im2col(xb, ci_n, h, w, k, &mut col);
                &col
            };
            let gb = &gd[b * co_n * plane..(b + 1) * co_n * plane];
            for (co, g_plane) in gb.chunks_exact(plane).enumerate() {
                bgrad[co] += g_plane.iter().copied().sum::<T>();
            }
            gemm_nt(co_n, rows, plane, gb, cols, wgrad);
            let gib = &mut gid[b * ci_n * plane..(b + 1) * ci_n * plane];
            if k == 1 {
                gemm_tn_store(rows, co_n, plane, weights, gb, gib);
            } else {
                gemm_tn_store(rows, co_n, plane, weights, gb, &mut dcol);
                col2im(&dcol, ci_n, h, w, k, gib);
            }
        }
        Ok(grad_in)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}
