use super::{cast, Layer, Mode, Param, Real, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalisation over `(N, H, W)`.
///
/// Training mode normalises with the biased batch variance and folds the
/// unbiased variance into the running estimate. Eval mode uses the running
/// statistics, which start at mean 0 and variance 1.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    normalized: Tensor<T>,
    inv_std: Vec<f64>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), Tensor::full(&[channels], T::one())),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: Param::buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: Param::buffer(
                format!("{name}.running_var"),
                Tensor::full(&[channels], T::one()),
            ),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }
}

impl<T: Real> BatchNorm2d<T> {
    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
        let dims = x.dims4()?;
        if dims.1 != self.channels() {
            return Err(Error::Shape(format!(
                "{}: expected {} channels, got {}",
                self.gamma.name,
                self.channels(),
                dims.1
            )));
        }
        Ok(dims)
    }
}

impl<T: Real> Layer<T> for BatchNorm2d<T> {
    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.check_input(x)?;
        let plane = h * w;
        let xd = x.data();
        let mut out = Tensor::zeros(x.shape());
        let od = out.data_mut();
        for ch in 0..c {
            let mean = self.running_mean.value.data()[ch].to_f64().unwrap();
            let var = self.running_var.value.data()[ch].to_f64().unwrap();
            let inv_std = 1.0 / (var + BN_EPS).sqrt();
            let gamma = self.gamma.value.data()[ch].to_f64().unwrap();
            let scale: T = cast(gamma * inv_std);
            let shift: T =
                cast(self.beta.value.data()[ch].to_f64().unwrap() - mean * gamma * inv_std);
            for b in 0..n {
                let off = (b * c + ch) * plane;
                for (o, &v) in od[off..off + plane].iter_mut().zip(&xd[off..off + plane]) {
                    *o = v * scale + shift;
                }
            }
        }
        Ok(out)
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if mode == Mode::Eval {
            self.cache = None;
            return self.infer(x);
        }
        let (n, c, h, w) = self.check_input(x)?;
        let plane = h * w;
        let count = n * plane;
        let xd = x.data();
        let mut out = Tensor::zeros(x.shape());
        let mut normalized = Tensor::zeros(x.shape());
        let mut inv_stds = Vec::with_capacity(c);
        for ch in 0..c {
            let mut sum = 0.0;
            for b in 0..n {
                let off = (b * c + ch) * plane;
                sum += xd[off..off + plane]
                    .iter()
                    .map(|v| v.to_f64().unwrap())
                    .sum::<f64>();
            }
            let mean = sum / count as f64;
            let mut sq = 0.0;
            for b in 0..n {
                let off = (b * c + ch) * plane;
                sq += xd[off..off + plane]
                    .iter()
                    .map(|v| {
                        let d = v.to_f64().unwrap() - mean;
                        d * d
                    })
                    .sum::<f64>();
            }
            let var = sq / count as f64;
            let inv_std = 1.0 / (var + BN_EPS).sqrt();
            inv_stds.push(inv_std);

            let mean_t: T = cast(mean);
            let inv_t: T = cast(inv_std);
            let gamma = self.gamma.value.data()[ch];
            let beta = self.beta.value.data()[ch];
            let nd = normalized.data_mut();
            for b in 0..n {
                let off = (b * c + ch) * plane;
                for (z, &v) in nd[off..off + plane].iter_mut().zip(&xd[off..off + plane]) {
                    *z = (v - mean_t) * inv_t;
                }
            }
            let od = out.data_mut();
            for b in 0..n {
                let off = (b * c + ch) * plane;
                for (o, &z) in od[off..off + plane].iter_mut().zip(&nd[off..off + plane]) {
                    *o = z * gamma + beta;
                }
            }

            let unbiased = if count > 1 {
                sq / (count - 1) as f64
            } else {
                var
            };
            let rm = &mut self.running_mean.value.data_mut()[ch];
            *rm = cast((1.0 - BN_MOMENTUM) * rm.to_f64().unwrap() + BN_MOMENTUM * mean);
            let rv = &mut self.running_var.value.data_mut()[ch];
            *rv = cast((1.0 - BN_MOMENTUM) * rv.to_f64().unwrap() + BN_MOMENTUM * unbiased);
        }
        self.cache = Some(BnCache {
            normalized,
            inv_std: inv_stds,
        });
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Shape("batch-norm backward without a training forward".into()))?;
        grad_out.check_same_shape(&cache.normalized)?;
        let (n, c, h, w) = grad_out.dims4()?;
        let plane = h * w;
        let count = (n * plane) as f64;
        let gd = grad_out.data();
        let zd = cache.normalized.data();
        let mut grad_in = Tensor::zeros(grad_out.shape());
        let gid = grad_in.data_mut();

        for ch in 0..c {
            let mut sum_g = 0.0;
            let mut sum_gz = 0.0;
            for b in 0..n {
                let off = (b * c + ch) * plane;
                for (&g, &z) in gd[off..off + plane].iter().zip(&zd[off..off + plane]) {
                    let g = g.to_f64().unwrap();
                    sum_g += g;
                    sum_gz += g * z.to_f64().unwrap();
                }
            }
            self.beta.grad.data_mut()[ch] += cast(sum_g);
            self.gamma.grad.data_mut()[ch] += cast(sum_gz);

            let gamma = self.gamma.value.data()[ch].to_f64().unwrap();
            let scale: T = cast(gamma * cache.inv_std[ch]);
            let mean_g: T = cast(sum_g / count);
            let mean_gz: T = cast(sum_gz / count);
            for b in 0..n {
                let off = (b * c + ch) * plane;
                for ((gi, &g), &z) in gid[off..off + plane]
                    .iter_mut()
                    .zip(&gd[off..off + plane])
                    .zip(&zd[off..off + plane])
                {
                    *gi = scale * (g - mean_g - z * mean_gz);
                }
            }
        }
        Ok(grad_in)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![
            &mut self.gamma,
            &mut self.beta,
            &mut self.running_mean,
            &mut self.running_var,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn train_output_has_beta_mean_and_gamma_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut bn = BatchNorm2d::<f64>::new("bn", 2);
        bn.gamma.value = Tensor::from_vec(&[2], vec![1.5, 0.5]).unwrap();
        bn.beta.value = Tensor::from_vec(&[2], vec![-0.3, 2.0]).unwrap();
        let x = Tensor::from_vec(
            &[3, 2, 4, 5],
            (0..120).map(|_| rng.random_range(-3.0..5.0)).collect(),
        )
        .unwrap();
        let y = bn.forward(&x, Mode::Train).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|b| y.data()[(b * 2 + ch) * 20..(b * 2 + ch + 1) * 20].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            let (g, b) = (bn.gamma.value.data()[ch], bn.beta.value.data()[ch]);
            assert!((mean - b).abs() < 1e-5);
            // eps in the denominator shrinks the variance very slightly
            assert!((var - g * g).abs() < 1e-5 * g * g + 1e-5);
        }
    }

    #[test]
    fn constant_input_normalises_to_zero() {
        let mut bn = BatchNorm2d::<f64>::new("bn", 1);
        let y = bn
            .forward(&Tensor::full(&[2, 1, 3, 3], 4.2), Mode::Train)
            .unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn eval_uses_running_stats() {
        let mut bn = BatchNorm2d::<f64>::new("bn", 1);
        let x = Tensor::from_vec(&[1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        // fresh layer: identity up to eps
        let y = bn.forward(&x, Mode::Eval).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b / (1.0 + BN_EPS).sqrt()).abs() < 1e-12);
        }
        bn.forward(&x, Mode::Train).unwrap();
        assert!((bn.running_mean.value.data()[0] - 0.25).abs() < 1e-12);
        // unbiased variance of 1..4 is 5/3
        assert!((bn.running_var.value.data()[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }
}
