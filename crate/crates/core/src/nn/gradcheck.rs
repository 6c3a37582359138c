//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{zero_grads, Layer, Mode, Tensor};
use crate::error::Result;

/// Denominator floor of the elementwise relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Seeds the random output projection and any element sampling.
    pub seed: u64,
    /// Check at most this many input elements (all when `None`).
    pub max_input_samples: Option<usize>,
    /// Check at most this many trainable parameter elements (all when `None`).
    pub max_param_samples: Option<usize>,
    pub check_input: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            seed: 0,
            max_input_samples: None,
            max_param_samples: None,
            check_input: true,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Location of the largest error, e.g. `input[17]` or `conv.weight[3]`.
    pub worst: String,
    pub checked: usize,
}

impl GradCheckReport {
    fn record(&mut self, what: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if err > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = self.max_rel_error.max(err);
            self.worst = format!("{} (analytic {analytic:e}, numeric {numeric:e})", what());
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Checks `layer` under the scalar objective `sum(r * y)` for a fixed
/// standard-normal projection `r`.
pub fn grad_check<L: Layer<f64> + ?Sized>(
    layer: &mut L,
    input: &Tensor<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let probe = layer.forward(input, Mode::Train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9E37_79B9_7F4A_7C15);
    let proj: Vec<f64> = (0..probe.len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let proj = Tensor::from_vec(probe.shape(), proj)?;
    let objective = move |y: &Tensor<f64>| -> Result<(f64, Tensor<f64>)> {
        y.check_same_shape(&proj)?;
        let value = y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum();
        Ok((value, proj.clone()))
    };
    grad_check_with(layer, input, &objective, opts)
}

/// A scalar objective of a layer output: its value and gradient.
pub type Objective<'a> = dyn Fn(&Tensor<f64>) -> Result<(f64, Tensor<f64>)> + 'a;

/// Checks `layer` under an arbitrary differentiable objective of its output.
/// `objective` returns the value and its gradient with respect to the output.
pub fn grad_check_with<L: Layer<f64> + ?Sized>(
    layer: &mut L,
    input: &Tensor<f64>,
    objective: &Objective<'_>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let eps = opts.eps;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    zero_grads(layer);
    let y = layer.forward(input, Mode::Train)?;
    let (_, upstream) = objective(&y)?;
    let grad_in = layer.backward(&upstream)?;

    let eval = |layer: &mut L, x: &Tensor<f64>| -> Result<f64> {
        let y = layer.forward(x, Mode::Train)?;
        Ok(objective(&y)?.0)
    };

    let mut report = GradCheckReport::default();

    if opts.check_input {
        let picks = pick(&mut rng, input.len(), opts.max_input_samples);
        let mut x = input.clone();
        for i in picks {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + eps;
            let plus = eval(layer, &x)?;
            x.data_mut()[i] = orig - eps;
            let minus = eval(layer, &x)?;
            x.data_mut()[i] = orig;
            report.record(
                || format!("input[{i}]"),
                grad_in.data()[i],
                (plus - minus) / (2.0 * eps),
            );
        }
    }

    // (param index, element) over trainable parameters only
    let sizes: Vec<(usize, usize)> = layer
        .params()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.trainable)
        .map(|(i, p)| (i, p.value.len()))
        .collect();
    let analytic: Vec<Vec<f64>> = {
        let params = layer.params();
        sizes
            .iter()
            .map(|&(i, _)| params[i].grad.data().to_vec())
            .collect()
    };
    let total: usize = sizes.iter().map(|s| s.1).sum();
    for flat in pick(&mut rng, total, opts.max_param_samples) {
        let (mut slot, mut elem) = (0, flat);
        while elem >= sizes[slot].1 {
            elem -= sizes[slot].1;
            slot += 1;
        }
        let pi = sizes[slot].0;
        let orig = layer.params()[pi].value.data()[elem];
        layer.params_mut()[pi].value.data_mut()[elem] = orig + eps;
        let plus = eval(layer, input)?;
        layer.params_mut()[pi].value.data_mut()[elem] = orig - eps;
        let minus = eval(layer, input)?;
        layer.params_mut()[pi].value.data_mut()[elem] = orig;
        let name = layer.params()[pi].name.clone();
        report.record(
            || format!("{name}[{elem}]"),
            analytic[slot][elem],
            (plus - minus) / (2.0 * eps),
        );
    }
    Ok(report)
}

fn pick(rng: &mut ChaCha8Rng, len: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(k) if k < len => {
            let mut v = sample(rng, len, k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..len).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Param;

    /// `y = A x` for a fixed matrix.
    struct Affine {
        a: Param<f64>,
        cache: Option<Tensor<f64>>,
    }

    impl Layer<f64> for Affine {
        fn forward(&mut self, x: &Tensor<f64>, _: Mode) -> Result<Tensor<f64>> {
            let a = self.a.value.data();
            let y = (0..2)
                .map(|r| {
                    a[r * 3] * x.data()[0] + a[r * 3 + 1] * x.data()[1] + a[r * 3 + 2] * x.data()[2]
                })
                .collect();
            self.cache = Some(x.clone());
            Tensor::from_vec(&[2], y)
        }
        fn infer(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
            let a = self.a.value.data();
            let y = (0..2)
                .map(|r| {
                    a[r * 3] * x.data()[0] + a[r * 3 + 1] * x.data()[1] + a[r * 3 + 2] * x.data()[2]
                })
                .collect();
            Tensor::from_vec(&[2], y)
        }
        fn backward(&mut self, g: &Tensor<f64>) -> Result<Tensor<f64>> {
            let x = self.cache.clone().unwrap();
            let a = self.a.value.data().to_vec();
            let mut dx = vec![0.0; 3];
            for r in 0..2 {
                for c in 0..3 {
                    self.a.grad.data_mut()[r * 3 + c] += g.data()[r] * x.data()[c];
                    dx[c] += g.data()[r] * a[r * 3 + c];
                }
            }
            Tensor::from_vec(&[3], dx)
        }
        fn params(&self) -> Vec<&Param<f64>> {
            vec![&self.a]
        }
        fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
            vec![&mut self.a]
        }
    }

    fn affine() -> Affine {
        Affine {
            a: Param::new(
                "a",
                Tensor::from_vec(&[6], vec![0.5, -1.0, 2.0, 0.25, 3.0, -0.75]).unwrap(),
            ),
            cache: None,
        }
    }

    #[test]
    fn linear_map_is_exact() {
        let x = Tensor::from_vec(&[3], vec![0.3, -0.2, 1.1]).unwrap();
        let report = grad_check(&mut affine(), &x, &GradCheckOptions::default()).unwrap();
        assert_eq!(report.checked, 9);
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn wrong_backward_is_caught() {
        struct Broken(Affine);
        impl Layer<f64> for Broken {
            fn forward(&mut self, x: &Tensor<f64>, m: Mode) -> Result<Tensor<f64>> {
                self.0.forward(x, m)
            }
            fn infer(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
                self.0.infer(x)
            }
            fn backward(&mut self, g: &Tensor<f64>) -> Result<Tensor<f64>> {
                Ok(self.0.backward(g)?.map(|v| v * 1.01))
            }
            fn params(&self) -> Vec<&Param<f64>> {
                self.0.params()
            }
            fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
                self.0.params_mut()
            }
        }
        let x = Tensor::from_vec(&[3], vec![0.3, -0.2, 1.1]).unwrap();
        let report = grad_check(&mut Broken(affine()), &x, &GradCheckOptions::default()).unwrap();
        assert!(report.max_rel_error > 5e-3);
        assert!(report.worst.starts_with("input"));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 0.1).abs() < 1e-12);
    }
}
