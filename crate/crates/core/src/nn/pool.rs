use super::{cast, Layer, Mode, Param, Real, Tensor};
use crate::error::{Error, Result};

/// Mean over disjoint 2x2 blocks. Odd spatial sizes are rejected.
#[derive(Debug, Clone, Default)]
pub struct AvgPool2x2 {
    input_shape: Option<Vec<usize>>,
}

impl AvgPool2x2 {
    pub fn new() -> Self {
        Self { input_shape: None }
    }
}

impl<T: Real> Layer<T> for AvgPool2x2 {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.input_shape = (mode == Mode::Train).then(|| x.shape().to_vec());
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, h, w) = x.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!(
                "2x2 average pooling needs even dimensions, got {h}x{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let quarter: T = cast(0.25);
        let xd = x.data();
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let od = out.data_mut();
        for p in 0..n * c {
            let src = &xd[p * h * w..(p + 1) * h * w];
            let dst = &mut od[p * oh * ow..(p + 1) * oh * ow];
            for i in 0..oh {
                let (r0, r1) = (
                    &src[2 * i * w..(2 * i + 1) * w],
                    &src[(2 * i + 1) * w..(2 * i + 2) * w],
                );
                for j in 0..ow {
                    dst[i * ow + j] =
                        (r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]) * quarter;
                }
            }
        }
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self
            .input_shape
            .clone()
            .ok_or_else(|| Error::Shape("pool backward without a training forward".into()))?;
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let (oh, ow) = (h / 2, w / 2);
        if grad_out.shape() != [n, c, oh, ow] {
            return Err(Error::Shape(format!(
                "pool upstream gradient {:?} does not match [{n}, {c}, {oh}, {ow}]",
                grad_out.shape()
            )));
        }
        let quarter: T = cast(0.25);
        let gd = grad_out.data();
        let mut grad_in = Tensor::zeros(&shape);
        let gid = grad_in.data_mut();
        for p in 0..n * c {
            for i in 0..oh {
                for j in 0..ow {
                    let g = gd[p * oh * ow + i * ow + j] * quarter;
                    let base = p * h * w;
                    gid[base + 2 * i * w + 2 * j] = g;
                    gid[base + 2 * i * w + 2 * j + 1] = g;
                    gid[base + (2 * i + 1) * w + 2 * j] = g;
                    gid[base + (2 * i + 1) * w + 2 * j + 1] = g;
                }
            }
        }
        Ok(grad_in)
    }

    fn params(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }
}
