//! Finite-difference checks of every layer, the composite blocks and the
//! whole network, in f64 over many seeds. Each check panics on failure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rmvpe::model::{ModelConfig, Rcb, Rdb, Reb, Rmvpe};
use rmvpe::nn::{
    grad_check, grad_check_with, AvgPool2x2, BatchNorm2d, BiGru, Conv2d, ConvTranspose2d,
    GradCheckOptions, GradCheckReport, Layer, LinearSigmoid, Mode, Param, Relu, Tensor,
};
use rmvpe::training::weighted_bce;
use rmvpe::Result;

const SEEDS: u64 = 20;
const OP_TOL: f64 = 1e-4;
const MODEL_TOL: f64 = 1e-3;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
}

fn opts(seed: u64) -> GradCheckOptions {
    GradCheckOptions {
        eps: 1e-6,
        seed,
        ..GradCheckOptions::default()
    }
}

fn assert_ok(what: &str, seed: u64, r: GradCheckReport, tol: f64) {
    assert!(r.checked > 0, "{what}: nothing checked");
    assert!(
        r.max_rel_error < tol,
        "{what} seed {seed}: rel error {:e} at {}",
        r.max_rel_error,
        r.worst
    );
}

/// Moves every entry at least `margin` away from zero so ReLU kinks are not
/// straddled by the finite-difference step.
fn away_from_zero(mut x: Tensor<f64>, margin: f64) -> Tensor<f64> {
    for v in x.data_mut() {
        if v.abs() < margin {
            *v = if *v < 0.0 { -margin } else { margin };
        }
    }
    x
}

pub fn conv2d_3x3_and_1x1() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ci, co) = (rng.random_range(1..4), rng.random_range(1..4));
        let (h, w) = (rng.random_range(2..6), rng.random_range(2..6));
        let x = randn(&mut rng, &[2, ci, h, w]);
        let mut c3 = Conv2d::<f64>::new("c3", ci, co, 3, &mut rng);
        assert_ok(
            "conv3x3",
            seed,
            grad_check(&mut c3, &x, &opts(seed)).unwrap(),
            OP_TOL,
        );
        let mut c1 = Conv2d::<f64>::new("c1", ci, co, 1, &mut rng);
        assert_ok(
            "conv1x1",
            seed,
            grad_check(&mut c1, &x, &opts(seed)).unwrap(),
            OP_TOL,
        );
    }
}

pub fn conv_transpose() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (ci, co) = (rng.random_range(1..4), rng.random_range(1..4));
        let (h, w) = (rng.random_range(1..5), rng.random_range(1..5));
        let x = randn(&mut rng, &[2, ci, h, w]);
        let mut up = ConvTranspose2d::<f64>::new("up", ci, co, &mut rng);
        assert_ok(
            "conv_transpose",
            seed,
            grad_check(&mut up, &x, &opts(seed)).unwrap(),
            OP_TOL,
        );
    }
}

pub fn batch_norm_train_mode() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let c = rng.random_range(1..4);
        let x = randn(&mut rng, &[3, c, 3, 4]);
        let mut bn = BatchNorm2d::<f64>::new("bn", c);
        for p in bn.params_mut().into_iter().filter(|p| p.trainable) {
            let shape = p.value.shape().to_vec();
            p.value = randn(&mut rng, &shape);
        }
        assert_ok(
            "batch_norm",
            seed,
            grad_check(&mut bn, &x, &opts(seed)).unwrap(),
            OP_TOL,
        );
    }
}

pub fn relu_away_from_kink() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let x = away_from_zero(randn(&mut rng, &[2, 2, 3, 3]), 1e-3);
        assert_ok(
            "relu",
            seed,
            grad_check(&mut Relu::new(), &x, &opts(seed)).unwrap(),
            OP_TOL,
        );
    }
}

pub fn avg_pool() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let (h, w) = (2 * rng.random_range(1..4), 2 * rng.random_range(1..4));
        let x = randn(&mut rng, &[2, 2, h, w]);
        assert_ok(
            "avg_pool",
            seed,
            grad_check(&mut AvgPool2x2::new(), &x, &opts(seed)).unwrap(),
            OP_TOL,
        );
    }
}

pub fn bigru_five_steps() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let (f, h) = (rng.random_range(1..5), rng.random_range(1..4));
        let x = randn(&mut rng, &[2, 5, f]);
        let mut gru = BiGru::<f64>::new("gru", f, h, &mut rng);
        assert_ok(
            "bigru",
            seed,
            grad_check(&mut gru, &x, &opts(seed)).unwrap(),
            OP_TOL,
        );
    }
}

pub fn linear_sigmoid() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let (i, o) = (rng.random_range(1..6), rng.random_range(1..6));
        let x = randn(&mut rng, &[2, 3, i]);
        let mut fc = LinearSigmoid::<f64>::new("fc", i, o, &mut rng);
        assert_ok(
            "linear_sigmoid",
            seed,
            grad_check(&mut fc, &x, &opts(seed)).unwrap(),
            OP_TOL,
        );
    }
}

pub fn weighted_bce_wrt_prediction() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let (n, t, b) = (2, 3, 7);
        let pred: Vec<f64> = (0..n * t * b)
            .map(|_| rng.random_range(0.05..0.95))
            .collect();
        let target: Vec<f64> = (0..n * t * b)
            .map(|_| f64::from(u8::from(rng.random_bool(0.2))))
            .collect();
        let pred = Tensor::from_vec(&[n, t, b], pred).unwrap();
        let target = Tensor::from_vec(&[n, t, b], target).unwrap();
        let (_, grad) = weighted_bce(&pred, &target, 5.0).unwrap();
        let h = 1e-6;
        for i in 0..pred.len() {
            let mut p = pred.clone();
            p.data_mut()[i] += h;
            let up = weighted_bce(&p, &target, 5.0).unwrap().0;
            p.data_mut()[i] -= 2.0 * h;
            let down = weighted_bce(&p, &target, 5.0).unwrap().0;
            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
            assert!(rel < 1e-6, "seed {seed} elem {i}: {a} vs {numeric}");
        }
    }
}

/// Conv biases directly followed by batch norm cancel out, so their exact
/// gradient is zero and a relative error is meaningless there.
fn is_pre_norm_bias(name: &str) -> bool {
    name.ends_with(".conv1.bias") || name.ends_with(".conv2.bias")
}

/// Relative check on every parameter except pre-norm biases, which are then
/// required to have zero gradient both analytically and numerically.
fn check_block<L: Layer<f64>>(what: &str, seed: u64, layer: &mut L, x: &Tensor<f64>) {
    for p in layer.params_mut() {
        if is_pre_norm_bias(&p.name) {
            p.trainable = false;
        }
    }
    assert_ok(
        what,
        seed,
        grad_check(layer, x, &opts(seed)).unwrap(),
        OP_TOL,
    );
    for p in layer.params_mut() {
        if is_pre_norm_bias(&p.name) {
            p.trainable = true;
        }
    }

    let y = layer.forward(x, Mode::Train).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = randn(&mut rng, y.shape());
    let value =
        |y: &Tensor<f64>| -> f64 { y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum() };
    for p in layer.params_mut() {
        p.grad.data_mut().fill(0.0);
    }
    layer.backward(&r).unwrap();
    let biases: Vec<usize> = (0..layer.params().len())
        .filter(|&i| is_pre_norm_bias(&layer.params()[i].name))
        .collect();
    assert!(!biases.is_empty(), "{what}: no pre-norm biases found");
    let h = 1e-4;
    for i in biases {
        for e in 0..layer.params()[i].value.len() {
            let name = layer.params()[i].name.clone();
            let analytic = layer.params()[i].grad.data()[e];
            let orig = layer.params()[i].value.data()[e];
            layer.params_mut()[i].value.data_mut()[e] = orig + h;
            let plus = value(&layer.forward(x, Mode::Train).unwrap());
            layer.params_mut()[i].value.data_mut()[e] = orig - h;
            let minus = value(&layer.forward(x, Mode::Train).unwrap());
            layer.params_mut()[i].value.data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            assert!(
                analytic.abs() < 1e-12,
                "{what} seed {seed}: {name}[{e}] analytic {analytic:e}"
            );
            assert!(
                numeric.abs() < 1e-9,
                "{what} seed {seed}: {name}[{e}] numeric {numeric:e}"
            );
        }
    }
}

pub fn rcb_composite() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        let (ci, co) = (rng.random_range(1..3), rng.random_range(1..4));
        let x = randn(&mut rng, &[2, ci, 4, 4]);
        let mut rcb = Rcb::<f64>::new("rcb", ci, co, &mut rng);
        check_block("rcb", seed, &mut rcb, &x);
    }
}

/// Exposes a REB as one layer whose output is `[pooled, pre]` flattened.
struct RebFlat {
    reb: Reb<f64>,
    shapes: Option<(Vec<usize>, Vec<usize>)>,
}

impl Layer<f64> for RebFlat {
    fn forward(&mut self, x: &Tensor<f64>, mode: Mode) -> Result<Tensor<f64>> {
        let (p, q) = self.reb.forward(x, mode)?;
        self.shapes = Some((p.shape().to_vec(), q.shape().to_vec()));
        let mut v = p.into_data();
        v.extend(q.into_data());
        let n = v.len();
        Tensor::from_vec(&[n], v)
    }

    fn infer(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let (p, q) = self.reb.infer(x)?;
        let mut v = p.into_data();
        v.extend(q.into_data());
        let n = v.len();
        Tensor::from_vec(&[n], v)
    }

    fn backward(&mut self, g: &Tensor<f64>) -> Result<Tensor<f64>> {
        let (ps, qs) = self.shapes.clone().expect("forward first");
        let np: usize = ps.iter().product();
        let gp = Tensor::from_vec(&ps, g.data()[..np].to_vec())?;
        let gq = Tensor::from_vec(&qs, g.data()[np..].to_vec())?;
        self.reb.backward(&gp, &gq)
    }

    fn params(&self) -> Vec<&Param<f64>> {
        self.reb.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        self.reb.params_mut()
    }
}

pub fn reb_composite() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let (ci, co) = (rng.random_range(1..3), rng.random_range(1..3));
        let x = randn(&mut rng, &[2, ci, 4, 4]);
        let mut reb = RebFlat {
            reb: Reb::new("reb", ci, co, 2, &mut rng),
            shapes: None,
        };
        check_block("reb", seed, &mut reb, &x);
    }
}

/// Exposes an RDB as one layer taking `[x, skip]` flattened.
struct RdbFlat {
    rdb: Rdb<f64>,
    x_shape: Vec<usize>,
    skip_shape: Vec<usize>,
}

impl RdbFlat {
    fn split(&self, input: &Tensor<f64>) -> Result<(Tensor<f64>, Tensor<f64>)> {
        let nx: usize = self.x_shape.iter().product();
        Ok((
            Tensor::from_vec(&self.x_shape, input.data()[..nx].to_vec())?,
            Tensor::from_vec(&self.skip_shape, input.data()[nx..].to_vec())?,
        ))
    }
}

impl Layer<f64> for RdbFlat {
    fn forward(&mut self, input: &Tensor<f64>, mode: Mode) -> Result<Tensor<f64>> {
        let (x, s) = self.split(input)?;
        self.rdb.forward(&x, &s, mode)
    }

    fn infer(&self, input: &Tensor<f64>) -> Result<Tensor<f64>> {
        let (x, s) = self.split(input)?;
        self.rdb.infer(&x, &s)
    }

    fn backward(&mut self, g: &Tensor<f64>) -> Result<Tensor<f64>> {
        let (gx, gs) = self.rdb.backward(g)?;
        let mut v = gx.into_data();
        v.extend(gs.into_data());
        let n = v.len();
        Tensor::from_vec(&[n], v)
    }

    fn params(&self) -> Vec<&Param<f64>> {
        self.rdb.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        self.rdb.params_mut()
    }
}

pub fn rdb_composite() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (ci, co) = (rng.random_range(1..4), rng.random_range(1..3));
        let x_shape = vec![2, ci, 2, 3];
        let skip_shape = vec![2, co, 4, 6];
        let nx: usize = x_shape.iter().product();
        let ns: usize = skip_shape.iter().product();
        let input = randn(&mut rng, &[nx + ns]);
        let mut rdb = RdbFlat {
            rdb: Rdb::new("rdb", ci, co, 2, &mut rng),
            x_shape,
            skip_shape,
        };
        check_block("rdb", seed, &mut rdb, &input);
    }
}

/// Weighted BCE of `y` minus that of `base`, summed entry by entry so the
/// difference of two nearby totals never cancels catastrophically.
fn loss_minus_base(y: &Tensor<f64>, base: &Tensor<f64>, target: &Tensor<f64>, omega: f64) -> f64 {
    let n = y.shape()[0] as f64;
    let mut sum = 0.0;
    for ((&p, &q), &t) in y.data().iter().zip(base.data()).zip(target.data()) {
        // -(w t ln(p/q) + (1 - t) ln((1 - p)/(1 - q)))
        let d = if t > 0.5 {
            -omega * ((p - q) / q).ln_1p()
        } else {
            -((q - p) / (1.0 - q)).ln_1p()
        };
        sum += d;
    }
    sum / n
}

fn check_config() -> ModelConfig {
    ModelConfig {
        encoder_channels: [1, 1, 2, 2, 4],
        ..ModelConfig::toy()
    }
}

pub fn full_model_end_to_end_loss() {
    let cfg = check_config();
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(1100 + seed);
        let mut model = Rmvpe::<f64>::new(cfg.clone(), seed).unwrap();
        // zero by construction; covered by the block checks
        for p in model.params_mut() {
            if is_pre_norm_bias(&p.name) {
                p.trainable = false;
            }
        }
        let x = randn(&mut rng, &[1, 1, 32, cfg.mel_bins]);
        let mut target = vec![0.0; 32 * cfg.bins_out];
        for t in 0..32 {
            if rng.random_bool(0.8) {
                target[t * cfg.bins_out + rng.random_range(0..cfg.bins_out)] = 1.0;
            }
        }
        let target = Tensor::from_vec(&[1, 32, cfg.bins_out], target).unwrap();
        let base = model.forward(&x, Mode::Train).unwrap();
        let objective = |y: &Tensor<f64>| {
            let (total, grad) = weighted_bce(y, &target, 5.0)?;
            let shifted = loss_minus_base(y, &base, &target, 5.0);
            let (base_total, _) = weighted_bce(&base, &target, 5.0)?;
            assert!((shifted - (total - base_total)).abs() <= 1e-9 * total.abs().max(1.0));
            Ok((shifted, grad))
        };
        let o = GradCheckOptions {
            eps: 1e-6,
            seed,
            max_input_samples: Some(20),
            max_param_samples: Some(20),
            check_input: true,
        };
        let r = grad_check_with(&mut model, &x, &objective, &o).unwrap();
        assert_ok("full model", seed, r, MODEL_TOL);
    }
}

pub fn eval_forward_yields_probabilities() {
    let cfg = check_config();
    let mut model = Rmvpe::<f64>::new(cfg.clone(), 1).unwrap();
    let x = Tensor::full(&[1, 1, 32, cfg.mel_bins], 0.0);
    let y = model.forward(&x, Mode::Eval).unwrap();
    assert_eq!(y.shape(), &[1, 32, cfg.bins_out]);
    assert!(y.data().iter().all(|v| *v > 0.0 && *v < 1.0));
}

/// Every check, in a stable order.
pub const ALL: &[(&str, fn())] = &[
    ("conv2d_3x3_and_1x1", conv2d_3x3_and_1x1),
    ("conv_transpose", conv_transpose),
    ("batch_norm_train_mode", batch_norm_train_mode),
    ("relu_away_from_kink", relu_away_from_kink),
    ("avg_pool", avg_pool),
    ("bigru_five_steps", bigru_five_steps),
    ("linear_sigmoid", linear_sigmoid),
    ("weighted_bce_wrt_prediction", weighted_bce_wrt_prediction),
    ("rcb_composite", rcb_composite),
    ("reb_composite", reb_composite),
    ("rdb_composite", rdb_composite),
    ("full_model_end_to_end_loss", full_model_end_to_end_loss),
    (
        "eval_forward_yields_probabilities",
        eval_forward_yields_probabilities,
    ),
];
