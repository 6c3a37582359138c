use super::{axpy, dot, sigmoid, uniform_init, Layer, Mode, Param, Real, Tensor};
use crate::error::{Error, Result};

/// Fully connected layer followed by a logistic sigmoid, applied to the last
/// axis of an `N x T x D` tensor.
#[derive(Debug, Clone)]
pub struct LinearSigmoid<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<(Tensor<T>, Tensor<T>)>,
}

impl<T: Real> LinearSigmoid<T> {
    pub fn new(name: &str, input: usize, output: usize, rng: &mut impl rand::Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                Tensor::from_vec(&[output, input], uniform_init(rng, output * input, bound))
                    .unwrap(),
            ),
            bias: Param::new(
                format!("{name}.bias"),
                Tensor::from_vec(&[output], uniform_init(rng, output, bound)).unwrap(),
            ),
            cache: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }
}

impl<T: Real> Layer<T> for LinearSigmoid<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.cache = (mode == Mode::Train).then(|| (x.clone(), y.clone()));
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, steps, d) = x.dims3()?;
        if d != self.input_dim() {
            return Err(Error::Shape(format!(
                "linear layer expects width {}, got {d}",
                self.input_dim()
            )));
        }
        let out_dim = self.output_dim();
        let w = self.weight.value.data();
        let b = self.bias.value.data();
        let mut y = Tensor::zeros(&[n, steps, out_dim]);
        let yd = y.data_mut();
        for (row, xr) in x.data().chunks_exact(d).enumerate() {
            for o in 0..out_dim {
                yd[row * out_dim + o] = sigmoid(dot(&w[o * d..(o + 1) * d], xr) + b[o]);
            }
        }
        Ok(y)
    }

    /// `grad_out` is the gradient with respect to the sigmoid output.
    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (x, y) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Shape("linear backward without a training forward".into()))?;
        grad_out.check_same_shape(y)?;
        let d = self.input_dim();
        let out_dim = self.output_dim();
        let w = self.weight.value.data();
        let wg = self.weight.grad.data_mut();
        let bg = self.bias.grad.data_mut();
        let mut grad_in = Tensor::zeros(x.shape());
        let gid = grad_in.data_mut();
        let one = T::one();
        for (row, xr) in x.data().chunks_exact(d).enumerate() {
            for o in 0..out_dim {
                let s = y.data()[row * out_dim + o];
                let da = grad_out.data()[row * out_dim + o] * s * (one - s);
                bg[o] += da;
                axpy(&mut wg[o * d..(o + 1) * d], da, xr);
                axpy(&mut gid[row * d..(row + 1) * d], da, &w[o * d..(o + 1) * d]);
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
