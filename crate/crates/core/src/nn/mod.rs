//! Dense layer kernels with hand-written backward passes.
//!
//! Layers cache whatever their backward pass needs during a
//! [`Mode::Train`] forward. Gradients accumulate into [`Param::grad`] until
//! cleared with [`zero_grads`]. Everything is generic over [`Real`] so the
//! same code trains in `f32` and is gradient-checked in `f64`.

mod activation;
mod batchnorm;
mod conv;
mod conv_transpose;
mod gemm;
pub mod gradcheck;
mod gru;
mod linear;
mod pool;
mod tensor;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

pub use activation::{sigmoid, Relu};
pub use batchnorm::{BatchNorm2d, BN_EPS, BN_MOMENTUM};
pub use conv::Conv2d;
pub use conv_transpose::ConvTranspose2d;
pub use gradcheck::{
    grad_check, grad_check_with, relative_error, GradCheckOptions, GradCheckReport, Objective,
};
pub use gru::BiGru;
pub use linear::LinearSigmoid;
pub use pool::AvgPool2x2;
pub use tensor::{Param, Tensor};

use crate::error::Result;

/// Floating-point element type of tensors.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub fn cast<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("finite f64 converts to any Real")
}

/// Whether batch-norm layers use batch or running statistics (and whether
/// caches for backward are kept).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A differentiable building block.
pub trait Layer<T: Real> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>>;

    /// Eval-mode forward pass without touching any state.
    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>>;

    /// Propagates `grad_out` (same shape as the last training-mode output),
    /// accumulating parameter gradients and returning the input gradient.
    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>>;

    fn params(&self) -> Vec<&Param<T>>;

    fn params_mut(&mut self) -> Vec<&mut Param<T>>;
}

pub fn zero_grads<T: Real, L: Layer<T> + ?Sized>(layer: &mut L) {
    for p in layer.params_mut() {
        p.zero_grad();
    }
}

/// Number of trainable scalars.
pub fn trainable_count<T: Real, L: Layer<T> + ?Sized>(layer: &L) -> usize {
    layer
        .params()
        .iter()
        .filter(|p| p.trainable)
        .map(|p| p.value.len())
        .sum()
}

/// Dot product with eight independent partial sums, reduced in a fixed order.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..n {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `dst += alpha * src`.
#[inline]
pub(crate) fn axpy<T: Real>(dst: &mut [T], alpha: T, src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

/// Seeded uniform initialisation in `[-bound, bound]`.
pub(crate) fn uniform_init<T: Real>(rng: &mut impl rand::Rng, len: usize, bound: f64) -> Vec<T> {
    (0..len)
        .map(|_| cast(rng.random_range(-bound..=bound)))
        .collect()
}
