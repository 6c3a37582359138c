use super::gemm::{gemm_nn, gemm_nt, gemm_tn};
use super::{uniform_init, Layer, Mode, Param, Real, Tensor};
use crate::error::{Error, Result};

/// 3x3 transposed convolution, stride 2, padding 1, output padding 1:
/// `(H, W)` becomes exactly `(2H, 2W)`.
///
/// Input `(i, j)` scatters into output `(2i + ky - 1, 2j + kx - 1)`.
/// Weight layout is `[in, out, 3, 3]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
}

const K: usize = 3;

impl<T: Real> ConvTranspose2d<T> {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let bound = 1.0 / ((out_channels * K * K) as f64).sqrt();
        let w = uniform_init(rng, in_channels * out_channels * K * K, bound);
        let b = uniform_init(rng, out_channels, bound);
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                Tensor::from_vec(&[in_channels, out_channels, K, K], w).unwrap(),
            ),
            bias: Param::new(
                format!("{name}.bias"),
                Tensor::from_vec(&[out_channels], b).unwrap(),
            ),
            cache: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }
}

/// First input index for tap `k`. Input `i` lands on `2 * i + k - 1`, which
/// is always below `2 * len`, so only tap 0 drops an index.
#[inline]
fn first_input(k: usize) -> usize {
    usize::from(k == 0)
}

/// Adds `cols[(co, ky, kx), (i, j)]` onto the strided output positions.
fn scatter<T: Real>(cols: &[T], co_n: usize, h: usize, w: usize, out: &mut [T]) {
    let (oh, ow) = (2 * h, 2 * w);
    for co in 0..co_n {
        let plane = &mut out[co * oh * ow..(co + 1) * oh * ow];
        for ky in 0..K {
            let i0 = first_input(ky);
            for kx in 0..K {
                let j0 = first_input(kx);
                let c = &cols[((co * K + ky) * K + kx) * h * w..][..h * w];
                for i in i0..h {
                    let ot = 2 * i + ky - 1;
                    let row = &mut plane[ot * ow..(ot + 1) * ow];
                    let src = &c[i * w..(i + 1) * w];
                    for j in j0..w {
                        row[2 * j + kx - 1] += src[j];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`scatter`]: reads the strided output positions into `cols`.
fn gather<T: Real>(g: &[T], co_n: usize, h: usize, w: usize, cols: &mut [T]) {
    let (oh, ow) = (2 * h, 2 * w);
    for co in 0..co_n {
        let plane = &g[co * oh * ow..(co + 1) * oh * ow];
        for ky in 0..K {
            let i0 = first_input(ky);
            for kx in 0..K {
                let j0 = first_input(kx);
                let c = &mut cols[((co * K + ky) * K + kx) * h * w..][..h * w];
                c[..i0 * w].fill(T::zero());
                for i in i0..h {
                    let ot = 2 * i + ky - 1;
                    let row = &plane[ot * ow..(ot + 1) * ow];
                    let dst = &mut c[i * w..(i + 1) * w];
                    dst[..j0].fill(T::zero());
                    for j in j0..w {
                        dst[j] = row[2 * j + kx - 1];
                    }
                }
            }
        }
    }
}

impl<T: Real> Layer<T> for ConvTranspose2d<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.cache = (mode == Mode::Train).then(|| x.clone());
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, ci_n, h, w) = x.dims4()?;
        if ci_n != self.in_channels() {
            return Err(Error::Shape(format!(
                "{}: expected {} input channels, got {ci_n}",
                self.weight.name,
                self.in_channels()
            )));
        }
        let co_n = self.out_channels();
        let (oh, ow) = (2 * h, 2 * w);
        let rows = co_n * K * K;
        let bias = self.bias.value.data();
        let mut out = Tensor::zeros(&[n, co_n, oh, ow]);
        let od = out.data_mut();
        let mut cols = vec![T::zero(); rows * h * w];

        for b in 0..n {
            let xb = &x.data()[b * ci_n * h * w..(b + 1) * ci_n * h * w];
            let ob = &mut od[b * co_n * oh * ow..(b + 1) * co_n * oh * ow];
            for (co, plane) in ob.chunks_mut(oh * ow).enumerate() {
                plane.fill(bias[co]);
            }
            cols.fill(T::zero());
            gemm_tn(rows, ci_n, h * w, self.weight.value.data(), xb, &mut cols);
            scatter(&cols, co_n, h, w, ob);
        }
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.as_ref().ok_or_else(|| {
            Error::Shape("conv-transpose backward without a training forward".into())
        })?;
        let (n, ci_n, h, w) = x.dims4()?;
        let co_n = self.out_channels();
        let (oh, ow) = (2 * h, 2 * w);
        if grad_out.shape() != [n, co_n, oh, ow] {
            return Err(Error::Shape(format!(
                "conv-transpose upstream gradient {:?} does not match output [{n}, {co_n}, {oh}, {ow}]",
                grad_out.shape()
            )));
        }
        let rows = co_n * K * K;
        let mut grad_in = Tensor::zeros(&[n, ci_n, h, w]);
        let gid = grad_in.data_mut();
        let mut dcols = vec![T::zero(); rows * h * w];

        for b in 0..n {
            let gb = &grad_out.data()[b * co_n * oh * ow..(b + 1) * co_n * oh * ow];
            let xb = &x.data()[b * ci_n * h * w..(b + 1) * ci_n * h * w];
            let bgrad = self.bias.grad.data_mut();
            for (co, plane) in gb.chunks(oh * ow).enumerate() {
                bgrad[co] += plane.iter().copied().sum::<T>();
            }
            gather(gb, co_n, h, w, &mut dcols);
            gemm_nt(ci_n, rows, h * w, xb, &dcols, self.weight.grad.data_mut());
            let gib = &mut gid[b * ci_n * h * w..(b + 1) * ci_n * h * w];
            gemm_nn(ci_n, rows, h * w, self.weight.value.data(), &dcols, gib);
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
