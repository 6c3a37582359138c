use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::blocks::{Icb, Rcb, Rdb, Reb};
use super::config::{ModelConfig, FRAME_MULTIPLE, STAGES};
use crate::error::{Error, Result};
use crate::nn::{
    cast, BatchNorm2d, BiGru, Conv2d, Layer, LinearSigmoid, Mode, Param, Real, Tensor,
};
use crate::pitch_codec::SalienceMatrix;
use crate::spectrogram::LogMelSpectrogram;

/// Shape of one named stage of a forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageShape {
    pub stage: String,
    pub shape: Vec<usize>,
}

/// The full network: `N x 1 x T x F` log-mel input to `N x T x bins_out`
/// salience.
///
/// ```text
/// BN -> REB x5 -> ICB xK -> RDB x5 (each fed by a skip RCB) -> conv3x3 to 1
///    -> BiGRU over the F-dim frame vectors -> linear + sigmoid
/// ```
#[derive(Debug, Clone)]
pub struct Rmvpe<T> {
    config: ModelConfig,
    input_bn: BatchNorm2d<T>,
    encoders: Vec<Reb<T>>,
    intermediate: Vec<Icb<T>>,
    skips: Vec<Rcb<T>>,
    /// Indexed by stage, so `decoders[STAGES - 1]` runs first.
    decoders: Vec<Rdb<T>>,
    final_conv: Conv2d<T>,
    gru: BiGru<T>,
    fc: LinearSigmoid<T>,
    /// Spatial size of the last training forward, needed to unflatten.
    train_dims: Option<(usize, usize, usize)>,
}

impl<T: Real> Rmvpe<T> {
    /// Builds a freshly initialised network; identical seeds give identical
    /// weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let c = config.encoder_channels;
        let r = config.rcb_per_block;
        let encoders = (0..STAGES)
            .map(|k| {
                Reb::new(
                    &format!("enc{k}"),
                    if k == 0 { 1 } else { c[k - 1] },
                    c[k],
                    r,
                    rng,
                )
            })
            .collect();
        let deep = config.bottleneck_channels();
        let intermediate = (0..config.icb_count)
            .map(|j| Icb::new(&format!("icb{j}"), deep, deep, r, rng))
            .collect();
        let skips = (0..STAGES)
            .map(|k| Rcb::new(&format!("skip{k}"), c[k], c[k], rng))
            .collect();
        let decoders = (0..STAGES)
            .map(|k| {
                let cin = if k + 1 < STAGES { c[k + 1] } else { deep };
                Rdb::new(&format!("dec{k}"), cin, c[k], r, rng)
            })
            .collect();
        let mut fc = LinearSigmoid::new("fc", 2 * config.gru_hidden, config.bins_out, rng);
        // start every bin at the one-hot prior so early steps learn pitch, not sparsity
        let prior = -((config.bins_out.max(2) - 1) as f64).ln();
        fc.bias.value = Tensor::full(&[config.bins_out], cast(prior));
        Ok(Self {
            input_bn: BatchNorm2d::new("input_bn", 1),
            encoders,
            intermediate,
            skips,
            decoders,
            final_conv: Conv2d::new("final_conv", c[0], 1, 3, rng),
            gru: BiGru::new("gru", config.mel_bins, config.gru_hidden, rng),
            fc,
            train_dims: None,
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
        let (n, c, t, f) = x.dims4()?;
        if c != 1 {
            return Err(Error::Shape(format!(
                "model input must have 1 channel, got {c}"
            )));
        }
        if f != self.config.mel_bins {
            return Err(Error::Shape(format!(
                "model expects {} mel bins, got {f}",
                self.config.mel_bins
            )));
        }
        if t == 0 || t % FRAME_MULTIPLE != 0 {
            return Err(Error::Shape(format!(
                "frame count {t} is not a positive multiple of {FRAME_MULTIPLE}; \
                 reflect-pad or trim the spectrogram first"
            )));
        }
        Ok((n, t, f))
    }

    /// Eval-mode forward that also reports the shape after every stage and
    /// checks each against the expected U-Net geometry.
    pub fn infer_traced(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<StageShape>)> {
        let (n, t, f) = self.check_input(x)?;
        let c = self.config.encoder_channels;
        let mut trace = Vec::new();
        let mut record = |stage: String, got: &[usize], want: &[usize]| -> Result<()> {
            if got != want {
                return Err(Error::Shape(format!(
                    "{stage}: got {got:?}, expected {want:?}"
                )));
            }
            trace.push(StageShape {
                stage,
                shape: got.to_vec(),
            });
            Ok(())
        };

        let mut h = self.input_bn.infer(x)?;
        let mut pre = Vec::with_capacity(STAGES);
        for (k, enc) in self.encoders.iter().enumerate() {
            let (pooled, p) = enc.infer(&h)?;
            record(
                format!("enc{k}.pre_pool"),
                p.shape(),
                &[n, c[k], t >> k, f >> k],
            )?;
            pre.push(p);
            h = pooled;
        }
        for (j, icb) in self.intermediate.iter().enumerate() {
            h = icb.infer(&h)?;
            let d = self.config.bottleneck_channels();
            record(
                format!("icb{j}"),
                h.shape(),
                &[n, d, t >> STAGES, f >> STAGES],
            )?;
        }
        for k in (0..STAGES).rev() {
            let s = self.skips[k].infer(&pre[k])?;
            h = self.decoders[k].infer(&h, &s)?;
            record(format!("dec{k}"), h.shape(), &[n, c[k], t >> k, f >> k])?;
        }
        let h = self.final_conv.infer(&h)?;
        record("final_conv".into(), h.shape(), &[n, 1, t, f])?;
        let h = self.gru.infer(&h.reshape(&[n, t, f])?)?;
        record("gru".into(), h.shape(), &[n, t, 2 * self.config.gru_hidden])?;
        let y = self.fc.infer(&h)?;
        record("fc".into(), y.shape(), &[n, t, self.config.bins_out])?;
        Ok((y, trace))
    }

    /// Salience for a whole spectrogram of any length: frames are
    /// reflect-padded to a multiple of 32, run in eval mode and trimmed back.
    pub fn predict_salience(&self, mel: &LogMelSpectrogram) -> Result<SalienceMatrix> {
        if mel.n_mels() != self.config.mel_bins {
            return Err(Error::Shape(format!(
                "spectrogram has {} mel bins, model expects {}",
                mel.n_mels(),
                self.config.mel_bins
            )));
        }
        let padded = mel.reflect_pad_to_multiple(FRAME_MULTIPLE);
        let x = Tensor::from_vec(
            &[1, 1, padded.frames(), padded.n_mels()],
            padded
                .values()
                .iter()
                .map(|&v| crate::nn::cast(v as f64))
                .collect(),
        )?;
        let y = self.infer(&x)?;
        let bins = self.config.bins_out;
        let values: Vec<f64> = y.data()[..mel.frames() * bins]
            .iter()
            .map(|v| v.to_f64().unwrap())
            .collect();
        SalienceMatrix::new(mel.frames(), mel.hop_seconds(), values)
    }

    /// Same network in another precision.
    pub fn convert<U: Real>(&self) -> Rmvpe<U> {
        let mut out = Rmvpe::<U>::new(self.config.clone(), 0).expect("config already validated");
        for (d, s) in out.params_mut().into_iter().zip(self.params()) {
            d.value = s.value.convert();
        }
        out
    }
}

impl<T: Real> Layer<T> for Rmvpe<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if mode == Mode::Eval {
            self.train_dims = None;
            return self.infer(x);
        }
        let (n, t, f) = self.check_input(x)?;
        let mut h = self.input_bn.forward(x, mode)?;
        let mut pre = Vec::with_capacity(STAGES);
        for enc in &mut self.encoders {
            let (pooled, p) = enc.forward(&h, mode)?;
            pre.push(p);
            h = pooled;
        }
        for icb in &mut self.intermediate {
            h = icb.forward(&h, mode)?;
        }
        for k in (0..STAGES).rev() {
            let s = self.skips[k].forward(&pre[k], mode)?;
            h = self.decoders[k].forward(&h, &s, mode)?;
        }
        let h = self.final_conv.forward(&h, mode)?;
        let h = self.gru.forward(&h.reshape(&[n, t, f])?, mode)?;
        self.train_dims = Some((n, t, f));
        self.fc.forward(&h, mode)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.infer_traced(x)?.0)
    }

    /// `grad_out` is the gradient with respect to the salience output.
    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, t, f) = self
            .train_dims
            .ok_or_else(|| Error::Shape("model backward without a training forward".into()))?;
        let g = self.fc.backward(grad_out)?;
        let g = self.gru.backward(&g)?.reshape(&[n, 1, t, f])?;
        let mut g = self.final_conv.backward(&g)?;
        let mut grad_pre = Vec::with_capacity(STAGES);
        for k in 0..STAGES {
            let (gx, gs) = self.decoders[k].backward(&g)?;
            grad_pre.push(self.skips[k].backward(&gs)?);
            g = gx;
        }
        for icb in self.intermediate.iter_mut().rev() {
            g = icb.backward(&g)?;
        }
        for k in (0..STAGES).rev() {
            g = self.encoders[k].backward(&g, &grad_pre[k])?;
        }
        self.input_bn.backward(&g)
    }

    /// All parameters and buffers in a fixed order with unique names.
    fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.input_bn.params();
        for e in &self.encoders {
            p.extend(e.params());
        }
        for i in &self.intermediate {
            p.extend(i.params());
        }
        for s in &self.skips {
            p.extend(s.params());
        }
        for d in &self.decoders {
            p.extend(d.params());
        }
        p.extend(self.final_conv.params());
        p.extend(self.gru.params());
        p.extend(self.fc.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.input_bn.params_mut();
        for e in &mut self.encoders {
            p.extend(e.params_mut());
        }
        for i in &mut self.intermediate {
            p.extend(i.params_mut());
        }
        for s in &mut self.skips {
            p.extend(s.params_mut());
        }
        for d in &mut self.decoders {
            p.extend(d.params_mut());
        }
        p.extend(self.final_conv.params_mut());
        p.extend(self.gru.params_mut());
        p.extend(self.fc.params_mut());
        p
    }
}
