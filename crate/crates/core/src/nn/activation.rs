use super::{Layer, Mode, Param, Real, Tensor};
use crate::error::{Error, Result};

/// Logistic function evaluated without overflow for large `|x|`.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `max(0, x)`; the backward pass treats 0 as inactive.
#[derive(Debug, Clone, Default)]
pub struct Relu<T> {
    cache: Option<Tensor<T>>,
}

impl<T: Real> Relu<T> {
    pub fn new() -> Self {
        Self { cache: None }
    }
}

impl<T: Real> Layer<T> for Relu<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.cache = (mode == Mode::Train).then(|| y.clone());
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.map(|v| if v > T::zero() { v } else { T::zero() }))
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Shape("relu backward without a training forward".into()))?;
        grad_out.check_same_shape(y)?;
        let data = grad_out
            .data()
            .iter()
            .zip(y.data())
            .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
            .collect();
        Tensor::from_vec(grad_out.shape(), data)
    }

    fn params(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values_and_mask() {
        let mut r = Relu::<f64>::new();
        let x = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(r.forward(&x, Mode::Train).unwrap().data(), &[0.0, 0.0, 2.0]);
        let g = r.backward(&Tensor::full(&[3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert_eq!(sigmoid(800.0f64), 1.0);
        assert!((sigmoid(2.0f64) + sigmoid(-2.0f64) - 1.0).abs() < 1e-15);
    }
}
