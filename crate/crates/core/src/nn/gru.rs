use super::{axpy, dot, sigmoid, uniform_init, Layer, Mode, Param, Real, Tensor};
use crate::error::{Error, Result};

/// Bidirectional GRU over `N x T x D` sequences, producing `N x T x 2H`
/// (forward half first).
///
/// Per direction, with gates stacked `[z, r, n]` in the weight rows:
///
/// ```text
/// z  = sigmoid(Wx_z x + Wh_z h + b_z)
/// r  = sigmoid(Wx_r x + Wh_r h + b_r)
/// n  = tanh(Wx_n x + Wh_n (r * h) + b_n)
/// h' = (1 - z) * n + z * h
/// ```
///
/// The reset gate scales the hidden state before the candidate matmul.
/// Initial hidden state is zero.
#[derive(Debug, Clone)]
pub struct BiGru<T> {
    dirs: [Direction<T>; 2],
    hidden: usize,
    cache: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
struct Direction<T> {
    w_x: Param<T>,
    w_h: Param<T>,
    bias: Param<T>,
    reverse: bool,
    steps: Option<StepCache<T>>,
}

/// Per `[batch][time][unit]` activations of one direction.
#[derive(Debug, Clone)]
struct StepCache<T> {
    h_prev: Vec<T>,
    z: Vec<T>,
    r: Vec<T>,
    n: Vec<T>,
    rh: Vec<T>,
}

impl<T: Real> Direction<T> {
    fn new(
        name: &str,
        input: usize,
        hidden: usize,
        reverse: bool,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let g = 3 * hidden;
        Self {
            w_x: Param::new(
                format!("{name}.w_x"),
                Tensor::from_vec(&[g, input], uniform_init(rng, g * input, bound)).unwrap(),
            ),
            w_h: Param::new(
                format!("{name}.w_h"),
                Tensor::from_vec(&[g, hidden], uniform_init(rng, g * hidden, bound)).unwrap(),
            ),
            bias: Param::new(
                format!("{name}.bias"),
                Tensor::from_vec(&[g], uniform_init(rng, g, bound)).unwrap(),
            ),
            reverse,
            steps: None,
        }
    }

    fn input_dim(&self) -> usize {
        self.w_x.value.shape()[1]
    }

    fn order(&self, steps: usize) -> impl Iterator<Item = usize> {
        let reverse = self.reverse;
        (0..steps).map(move |s| if reverse { steps - 1 - s } else { s })
    }

    /// Runs the recurrence and writes `h` into columns `[offset, offset + H)`
    /// of `out` (`N x T x 2H`).
    fn run(
        &self,
        x: &Tensor<T>,
        out: &mut [T],
        offset: usize,
        hidden: usize,
        keep: bool,
    ) -> Option<StepCache<T>> {
        let (n_batch, steps, d) = x.dims3().expect("checked by caller");
        let hh = hidden;
        let g = 3 * hh;
        let wx = self.w_x.value.data();
        let wh = self.w_h.value.data();
        let bias = self.bias.value.data();
        let xd = x.data();
        let mut cache = keep.then(|| StepCache {
            h_prev: vec![T::zero(); n_batch * steps * hh],
            z: vec![T::zero(); n_batch * steps * hh],
            r: vec![T::zero(); n_batch * steps * hh],
            n: vec![T::zero(); n_batch * steps * hh],
            rh: vec![T::zero(); n_batch * steps * hh],
        });

        let mut gx = vec![T::zero(); steps * g];
        let mut h = vec![T::zero(); hh];
        let mut rh = vec![T::zero(); hh];
        let mut z = vec![T::zero(); hh];
        let mut r = vec![T::zero(); hh];
        for b in 0..n_batch {
            let xb = &xd[b * steps * d..(b + 1) * steps * d];
            for t in 0..steps {
                let xt = &xb[t * d..(t + 1) * d];
                for row in 0..g {
                    gx[t * g + row] = dot(&wx[row * d..(row + 1) * d], xt) + bias[row];
                }
            }
            h.fill(T::zero());
            for t in self.order(steps) {
                let gt = &gx[t * g..(t + 1) * g];
                for u in 0..hh {
                    z[u] = sigmoid(gt[u] + dot(&wh[u * hh..(u + 1) * hh], &h));
                    r[u] = sigmoid(gt[hh + u] + dot(&wh[(hh + u) * hh..(hh + u + 1) * hh], &h));
                }
                for u in 0..hh {
                    rh[u] = r[u] * h[u];
                }
                let base = (b * steps + t) * hh;
                if let Some(c) = cache.as_mut() {
                    c.h_prev[base..base + hh].copy_from_slice(&h);
                    c.z[base..base + hh].copy_from_slice(&z);
                    c.r[base..base + hh].copy_from_slice(&r);
                    c.rh[base..base + hh].copy_from_slice(&rh);
                }
                for u in 0..hh {
                    let cand = (gt[2 * hh + u]
                        + dot(&wh[(2 * hh + u) * hh..(2 * hh + u + 1) * hh], &rh))
                    .tanh();
                    if let Some(c) = cache.as_mut() {
                        c.n[base + u] = cand;
                    }
                    h[u] = (T::one() - z[u]) * cand + z[u] * h[u];
                }
                let o = (b * steps + t) * 2 * hh + offset;
                out[o..o + hh].copy_from_slice(&h);
            }
        }
        cache
    }

    /// Backpropagation through time; accumulates into `grad_in` (`N x T x D`).
    fn backward(
        &mut self,
        x: &Tensor<T>,
        grad_out: &[T],
        offset: usize,
        hidden: usize,
        grad_in: &mut [T],
    ) {
        let (n_batch, steps, d) = x.dims3().expect("checked by caller");
        let hh = hidden;
        let g = 3 * hh;
        let order: Vec<usize> = self.order(steps).collect();
        let cache = self.steps.as_ref().expect("checked by caller");
        let wx = self.w_x.value.data();
        let wh = self.w_h.value.data();
        let xd = x.data();
        let wx_grad = self.w_x.grad.data_mut();
        let wh_grad = self.w_h.grad.data_mut();
        let b_grad = self.bias.grad.data_mut();

        let mut dgx = vec![T::zero(); steps * g];
        let mut dh_next = vec![T::zero(); hh];
        let mut dh = vec![T::zero(); hh];
        let mut dh_prev = vec![T::zero(); hh];
        let mut d_rh = vec![T::zero(); hh];
        for b in 0..n_batch {
            dh_next.fill(T::zero());
            for &t in order.iter().rev() {
                let base = (b * steps + t) * hh;
                let o = (b * steps + t) * 2 * hh + offset;
                for u in 0..hh {
                    dh[u] = grad_out[o + u] + dh_next[u];
                }
                let h_prev = &cache.h_prev[base..base + hh];
                let z = &cache.z[base..base + hh];
                let r = &cache.r[base..base + hh];
                let n = &cache.n[base..base + hh];
                let rh = &cache.rh[base..base + hh];
                let dg = &mut dgx[t * g..(t + 1) * g];
                let one = T::one();
                for u in 0..hh {
                    dh_prev[u] = dh[u] * z[u];
                    let dz = dh[u] * (h_prev[u] - n[u]);
                    dg[u] = dz * z[u] * (one - z[u]);
                    let dn = dh[u] * (one - z[u]);
                    dg[2 * hh + u] = dn * (one - n[u] * n[u]);
                }
                // candidate path: a_n = ... + Wh_n (r * h)
                d_rh.fill(T::zero());
                for u in 0..hh {
                    let da_n = dg[2 * hh + u];
                    let row = (2 * hh + u) * hh;
                    axpy(&mut wh_grad[row..row + hh], da_n, rh);
                    axpy(&mut d_rh, da_n, &wh[row..row + hh]);
                }
                for u in 0..hh {
                    let dr = d_rh[u] * h_prev[u];
                    dg[hh + u] = dr * r[u] * (one - r[u]);
                    dh_prev[u] += d_rh[u] * r[u];
                }
                // gate paths: a_z, a_r = ... + Wh h
                for row in 0..2 * hh {
                    let da = dg[row];
                    axpy(&mut wh_grad[row * hh..(row + 1) * hh], da, h_prev);
                    axpy(&mut dh_prev, da, &wh[row * hh..(row + 1) * hh]);
                }
                dh_next.copy_from_slice(&dh_prev);
            }
            let xb = &xd[b * steps * d..(b + 1) * steps * d];
            let gib = &mut grad_in[b * steps * d..(b + 1) * steps * d];
            for t in 0..steps {
                let dg = &dgx[t * g..(t + 1) * g];
                let xt = &xb[t * d..(t + 1) * d];
                for row in 0..g {
                    b_grad[row] += dg[row];
                    axpy(&mut wx_grad[row * d..(row + 1) * d], dg[row], xt);
                    axpy(
                        &mut gib[t * d..(t + 1) * d],
                        dg[row],
                        &wx[row * d..(row + 1) * d],
                    );
                }
            }
        }
    }
}

impl<T: Real> BiGru<T> {
    pub fn new(name: &str, input: usize, hidden: usize, rng: &mut impl rand::Rng) -> Self {
        Self {
            dirs: [
                Direction::new(&format!("{name}.fwd"), input, hidden, false, rng),
                Direction::new(&format!("{name}.bwd"), input, hidden, true, rng),
            ],
            hidden,
            cache: None,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.dirs[0].input_dim()
    }
}

impl<T: Real> Layer<T> for BiGru<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let keep = mode == Mode::Train;
        let (out, caches) = self.run(x, keep)?;
        for (dir, c) in self.dirs.iter_mut().zip(caches) {
            dir.steps = c;
        }
        self.cache = keep.then(|| x.clone());
        Ok(out)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(x, false)?.0)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Shape("gru backward without a training forward".into()))?;
        let (n, steps, _) = x.dims3()?;
        if grad_out.shape() != [n, steps, 2 * self.hidden] {
            return Err(Error::Shape(format!(
                "gru upstream gradient {:?} does not match [{n}, {steps}, {}]",
                grad_out.shape(),
                2 * self.hidden
            )));
        }
        let mut grad_in = Tensor::zeros(x.shape());
        let hidden = self.hidden;
        for (i, dir) in self.dirs.iter_mut().enumerate() {
            dir.backward(x, grad_out.data(), i * hidden, hidden, grad_in.data_mut());
        }
        Ok(grad_in)
    }

    fn params(&self) -> Vec<&Param<T>> {
        self.dirs
            .iter()
            .flat_map(|d| [&d.w_x, &d.w_h, &d.bias])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.dirs
            .iter_mut()
            .flat_map(|d| [&mut d.w_x, &mut d.w_h, &mut d.bias])
            .collect()
    }
}

impl<T: Real> BiGru<T> {
    #[allow(clippy::type_complexity)]
    fn run(&self, x: &Tensor<T>, keep: bool) -> Result<(Tensor<T>, [Option<StepCache<T>>; 2])> {
        let (n, steps, d) = x.dims3()?;
        if d != self.input_dim() {
            return Err(Error::Shape(format!(
                "gru expects input width {}, got {d}",
                self.input_dim()
            )));
        }
        if steps == 0 {
            return Err(Error::Shape("gru needs at least one time step".into()));
        }
        let hidden = self.hidden;
        let mut out = Tensor::zeros(&[n, steps, 2 * hidden]);
        let c0 = self.dirs[0].run(x, out.data_mut(), 0, hidden, keep);
        let c1 = self.dirs[1].run(x, out.data_mut(), hidden, hidden, keep);
        Ok((out, [c0, c1]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_step_directions_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut gru = BiGru::<f64>::new("gru", 5, 4, &mut rng);
        // share weights so both directions compute the same single step
        let (a, b) = gru.dirs.split_at_mut(1);
        b[0].w_x.value = a[0].w_x.value.clone();
        b[0].w_h.value = a[0].w_h.value.clone();
        b[0].bias.value = a[0].bias.value.clone();
        let x = Tensor::from_vec(&[1, 1, 5], uniform_init(&mut rng, 5, 1.0)).unwrap();
        let y = gru.forward(&x, Mode::Eval).unwrap();
        assert_eq!(&y.data()[..4], &y.data()[4..]);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut gru = BiGru::<f64>::new("gru", 3, 2, &mut ChaCha8Rng::seed_from_u64(0));
        for p in gru.params_mut() {
            p.value.data_mut().fill(0.0);
        }
        let x = Tensor::from_vec(&[1, 4, 3], (0..12).map(|v| v as f64).collect()).unwrap();
        let y = gru.forward(&x, Mode::Eval).unwrap();
        // z = 0.5, n = tanh(0) = 0, h stays 0
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_evaluated_step() {
        let mut gru = BiGru::<f64>::new("gru", 1, 1, &mut ChaCha8Rng::seed_from_u64(0));
        for p in gru.params_mut() {
            p.value.data_mut().fill(0.0);
        }
        // candidate weight on x only
        gru.dirs[0].w_x.value.data_mut()[2] = 1.0;
        let x = Tensor::from_vec(&[1, 2, 1], vec![0.5, 0.5]).unwrap();
        let y = gru.forward(&x, Mode::Eval).unwrap();
        let h1 = 0.5 * 0.5f64.tanh();
        let h2 = 0.5 * 0.5f64.tanh() + 0.5 * h1;
        assert!((y.data()[0] - h1).abs() < 1e-15);
        assert!((y.data()[2] - h2).abs() < 1e-15);
    }

    #[test]
    fn width_mismatch() {
        let mut gru = BiGru::<f32>::new("gru", 3, 2, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(gru.forward(&Tensor::zeros(&[1, 4, 4]), Mode::Eval).is_err());
    }
}
