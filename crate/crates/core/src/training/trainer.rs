use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::segment::{Segment, SegmentBatch, SEGMENT_FRAMES};
use super::{lr_with, weighted_bce, Adam, DEFAULT_OMEGA, LR0, LR_DECAY, LR_DECAY_EVERY};
use crate::audio_io::write_atomic;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalResult};
use crate::model::{Checkpoint, ModelConfig, Rmvpe, FRAME_MULTIPLE};
use crate::nn::{zero_grads, Layer, Mode};
use crate::pitch_codec::{decode, CentGrid, SalienceMatrix, DEFAULT_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub batch_size: usize,
    pub omega: f64,
    pub epochs: usize,
    pub seed: u64,
    pub threshold: f64,
    /// Share of segments held out when no validation set is given.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: LR0,
            lr_decay: LR_DECAY,
            lr_decay_every: LR_DECAY_EVERY,
            batch_size: 16,
            omega: DEFAULT_OMEGA,
            epochs: 100,
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr0", self.lr0),
            ("lr_decay", self.lr_decay),
            ("omega", self.omega),
            ("threshold", self.threshold),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.lr_decay_every == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "lr_decay_every, batch_size and epochs must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction must be in [0, 1), got {}",
                self.val_fraction
            )));
        }
        debug_assert_eq!(SEGMENT_FRAMES % FRAME_MULTIPLE, 0);
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_with(self.lr0, self.lr_decay, self.lr_decay_every, epoch)
    }
}

/// Callback verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub epoch: usize,
    /// Optimizer steps taken so far, this one included.
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

/// Mean validation accuracies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub rpa: f64,
    pub rca: f64,
    pub oa: f64,
}

impl Scores {
    pub fn mean_of(results: &[EvalResult]) -> Option<Self> {
        if results.is_empty() {
            return None;
        }
        let n = results.len() as f64;
        Some(Self {
            rpa: results.iter().map(|r| r.rpa).sum::<f64>() / n,
            rca: results.iter().map(|r| r.rca).sum::<f64>() / n,
            oa: results.iter().map(|r| r.oa).sum::<f64>() / n,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val: Option<Scores>,
}

/// Hooks into the loop. Both default to continuing.
pub trait TrainObserver {
    fn on_step(&mut self, _info: &StepInfo) -> Control {
        Control::Continue
    }

    fn on_epoch(&mut self, _record: &EpochRecord, _model: &Rmvpe<f32>) -> Control {
        Control::Continue
    }
}

impl TrainObserver for () {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Best by validation RPA, or by training loss without validation data.
    pub best: Checkpoint,
    /// State after the last completed epoch.
    pub last: Checkpoint,
    pub steps: u64,
    /// Why training stopped early because of non-finite values.
    pub halted: Option<String>,
}

pub struct Trainer<'a> {
    model_config: ModelConfig,
    config: TrainConfig,
    validation: Option<&'a [Segment]>,
    resume: Option<Checkpoint>,
}

impl<'a> Trainer<'a> {
    pub fn new(model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        model_config.validate()?;
        config.validate()?;
        Ok(Self {
            model_config,
            config,
            validation: None,
            resume: None,
        })
    }

    /// Explicit validation set; disables the automatic split.
    pub fn validation(mut self, segments: &'a [Segment]) -> Self {
        self.validation = Some(segments);
        self
    }

    /// Continues from a checkpoint; its epoch count selects the learning rate.
    pub fn resume(mut self, checkpoint: Checkpoint) -> Self {
        self.resume = Some(checkpoint);
        self
    }

    pub fn run(
        self,
        segments: &[Segment],
        observer: &mut dyn TrainObserver,
    ) -> Result<TrainOutcome> {
        let cfg = &self.config;
        if segments.is_empty() {
            return Err(Error::Config("no training segments".into()));
        }
        let (train, held_out): (Vec<&Segment>, Vec<&Segment>) = match self.validation {
            Some(v) => (segments.iter().collect(), v.iter().collect()),
            None => split(segments, cfg.val_fraction, cfg.seed),
        };
        let grid = CentGrid::new();

        let (mut model, mut adam, start) = match self.resume {
            Some(ck) => {
                if ck.model.config() != &self.model_config {
                    return Err(Error::Config(
                        "checkpoint model config differs from the requested one".into(),
                    ));
                }
                let adam = ck.adam.map(Adam::with_state).unwrap_or_default();
                (ck.model, adam, ck.epoch)
            }
            None => (
                Rmvpe::new(self.model_config.clone(), cfg.seed)?,
                Adam::new(),
                0,
            ),
        };

        let snapshot = |model: &Rmvpe<f32>, adam: &Adam<f32>, epoch| Checkpoint {
            model: model.clone(),
            epoch,
            adam: Some(adam.state.clone()),
        };
        let mut last = snapshot(&model, &adam, start);
        let mut best = last.clone();
        let mut best_key = f64::NEG_INFINITY;
        let mut history = Vec::new();
        let mut steps = adam.state.step;
        let mut halted = None;

        'epochs: for epoch in start..cfg.epochs {
            let lr = cfg.lr_at(epoch);
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut epoch_rng(cfg.seed, epoch));

            let mut loss_sum = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(cfg.batch_size) {
                let refs: Vec<&Segment> = chunk.iter().map(|&i| train[i]).collect();
                let batch = SegmentBatch::new(&refs)?;
                zero_grads(&mut model);
                let pred = model.forward(&batch.inputs, Mode::Train)?;
                let (loss, grad) = weighted_bce(&pred, &batch.targets, cfg.omega)?;
                if !loss.is_finite() {
                    halted = Some(format!(
                        "non-finite loss at epoch {epoch}, step {}",
                        steps + 1
                    ));
                    break 'epochs;
                }
                model.backward(&grad)?;
                match adam.step(model.params_mut(), lr) {
                    Ok(()) => {}
                    Err(Error::NonFinite(msg)) => {
                        halted = Some(format!("epoch {epoch}, step {}: {msg}", steps + 1));
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                }
                steps += 1;
                loss_sum += loss;
                batches += 1;
                let info = StepInfo {
                    epoch,
                    step: steps,
                    loss,
                    lr,
                };
                log::debug!("epoch {epoch} step {steps} loss {loss:.4}");
                if observer.on_step(&info) == Control::Stop {
                    // a partial epoch still counts as the latest state
                    let record = finish_epoch(
                        &model,
                        &held_out,
                        epoch,
                        lr,
                        loss_sum / batches as f64,
                        cfg,
                        &grid,
                    )?;
                    last = snapshot(&model, &adam, epoch + 1);
                    consider(&record, &last, &mut best, &mut best_key);
                    history.push(record);
                    break 'epochs;
                }
            }

            let record = finish_epoch(
                &model,
                &held_out,
                epoch,
                lr,
                loss_sum / batches as f64,
                cfg,
                &grid,
            )?;
            last = snapshot(&model, &adam, epoch + 1);
            consider(&record, &last, &mut best, &mut best_key);
            log::info!(
                "epoch {epoch} lr {lr:.3e} loss {:.4}{}",
                record.train_loss,
                record
                    .val
                    .map(|s| format!(" val RPA {:.4} RCA {:.4} OA {:.4}", s.rpa, s.rca, s.oa))
                    .unwrap_or_default()
            );
            let verdict = observer.on_epoch(&record, &model);
            history.push(record);
            if verdict == Control::Stop {
                break;
            }
        }
        if let Some(msg) = &halted {
            log::error!("training halted: {msg}");
        }
        Ok(TrainOutcome {
            history,
            best,
            last,
            steps,
            halted,
        })
    }
}

fn finish_epoch(
    model: &Rmvpe<f32>,
    held_out: &[&Segment],
    epoch: usize,
    lr: f64,
    train_loss: f64,
    cfg: &TrainConfig,
    grid: &CentGrid,
) -> Result<EpochRecord> {
    let val = if held_out.is_empty() {
        None
    } else {
        Scores::mean_of(&evaluate_segments(
            model,
            held_out,
            cfg.threshold,
            cfg.batch_size,
            grid,
        )?)
    };
    Ok(EpochRecord {
        epoch,
        lr,
        train_loss,
        val,
    })
}

fn consider(record: &EpochRecord, state: &Checkpoint, best: &mut Checkpoint, best_key: &mut f64) {
    let key = match record.val {
        Some(s) => s.rpa,
        None => -record.train_loss,
    };
    if key > *best_key {
        *best_key = key;
        *best = state.clone();
    }
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Seeded hold-out of `floor(fraction * n)` segments, keeping at least one
/// for training.
fn split(segments: &[Segment], fraction: f64, seed: u64) -> (Vec<&Segment>, Vec<&Segment>) {
    let n = segments.len();
    let held = ((fraction * n as f64).floor() as usize).min(n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let (val, train) = idx.split_at(held);
    let mut train = train.to_vec();
    let mut val = val.to_vec();
    train.sort_unstable();
    val.sort_unstable();
    (
        train.iter().map(|&i| &segments[i]).collect(),
        val.iter().map(|&i| &segments[i]).collect(),
    )
}

/// Eval-mode salience for equally sized segments, `chunk` at a time.
pub fn segment_salience(
    model: &Rmvpe<f32>,
    segments: &[&Segment],
    chunk: usize,
) -> Result<Vec<SalienceMatrix>> {
    let mut out = Vec::with_capacity(segments.len());
    for group in segments.chunks(chunk.max(1)) {
        let batch = SegmentBatch::new(group)?;
        let y = model.infer(&batch.inputs)?;
        let (n, t, bins) = y.dims3()?;
        for (i, s) in group.iter().enumerate().take(n) {
            let values = y.data()[i * t * bins..(i + 1) * t * bins]
                .iter()
                .map(|&v| f64::from(v))
                .collect();
            out.push(SalienceMatrix::new(t, s.mel.hop_seconds(), values)?);
        }
    }
    Ok(out)
}

/// Decodes each segment and scores it against its reference.
pub fn evaluate_segments(
    model: &Rmvpe<f32>,
    segments: &[&Segment],
    threshold: f64,
    chunk: usize,
    grid: &CentGrid,
) -> Result<Vec<EvalResult>> {
    segment_salience(model, segments, chunk)?
        .iter()
        .zip(segments)
        .map(|(sal, s)| evaluate(&s.reference, &decode(sal, threshold, grid)))
        .collect()
}

/// One row per epoch: `epoch,lr,train_loss,val_RPA,val_RCA,val_OA`.
pub fn epoch_log_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,train_loss,val_RPA,val_RCA,val_OA\n");
    for r in history {
        let val = r
            .val
            .map(|s| format!("{:.6},{:.6},{:.6}", s.rpa, s.rca, s.oa))
            .unwrap_or_else(|| ",,".into());
        out += &format!("{},{:e},{:.6},{val}\n", r.epoch, r.lr, r.train_loss);
    }
    out
}

pub fn write_epoch_log(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = epoch_log_csv(history);
    write_atomic(path, |f| {
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_io::{PitchTrack, Waveform};
    use crate::spectrogram::{FrontendConfig, MelFrontend};
    use crate::training::segment_recording;

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            encoder_channels: [1, 1, 1, 1, 2],
            rcb_per_block: 1,
            icb_count: 1,
            gru_hidden: 4,
            ..ModelConfig::toy()
        }
    }

    fn segments(n: usize) -> Vec<Segment> {
        let fe = MelFrontend::new(FrontendConfig::default()).unwrap();
        let grid = CentGrid::new();
        (0..n)
            .flat_map(|k| {
                let f0 = 150.0 + 40.0 * k as f64;
                let len = 40_960;
                let w: Vec<f32> = (0..len)
                    .map(|i| (0.3 * (std::f64::consts::TAU * f0 * i as f64 / 16e3).sin()) as f32)
                    .collect();
                let w = Waveform::new(w, 16_000).unwrap();
                let l = PitchTrack::new(0.02, vec![f0; len / 320 + 1]).unwrap();
                segment_recording(&w, &l, &fe, &grid).unwrap()
            })
            .collect()
    }

    #[test]
    fn empty_dataset_is_a_config_error() {
        let t = Trainer::new(tiny_model(), TrainConfig::default()).unwrap();
        assert!(matches!(t.run(&[], &mut ()), Err(Error::Config(_))));
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let segs = segments(3);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            val_fraction: 0.0,
            ..TrainConfig::default()
        };
        let run = || {
            let out = Trainer::new(tiny_model(), cfg.clone())
                .unwrap()
                .run(&segs, &mut ())
                .unwrap();
            out.history.iter().map(|r| r.train_loss).collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a.len(), 2);
        assert_eq!(a, run());
    }

    #[test]
    fn observer_can_stop_and_split_holds_out() {
        struct StopAfter(u64);
        impl TrainObserver for StopAfter {
            fn on_step(&mut self, info: &StepInfo) -> Control {
                if info.step >= self.0 {
                    Control::Stop
                } else {
                    Control::Continue
                }
            }
        }
        let segs = segments(4);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 1,
            val_fraction: 0.25,
            ..TrainConfig::default()
        };
        let out = Trainer::new(tiny_model(), cfg)
            .unwrap()
            .run(&segs, &mut StopAfter(2))
            .unwrap();
        assert_eq!(out.steps, 2);
        assert_eq!(out.history.len(), 1);
        assert!(out.history[0].val.is_some());
        assert_eq!(out.last.epoch, 1);
    }

    #[test]
    fn resume_continues_schedule() {
        let segs = segments(1);
        let cfg = TrainConfig {
            epochs: 2,
            val_fraction: 0.0,
            ..TrainConfig::default()
        };
        let first = Trainer::new(
            tiny_model(),
            TrainConfig {
                epochs: 1,
                ..cfg.clone()
            },
        )
        .unwrap()
        .run(&segs, &mut ())
        .unwrap();
        let resumed = Trainer::new(tiny_model(), cfg)
            .unwrap()
            .resume(first.last)
            .run(&segs, &mut ())
            .unwrap();
        assert_eq!(resumed.history.len(), 1);
        assert_eq!(resumed.history[0].epoch, 1);
        assert_eq!(resumed.steps, 2);
    }

    #[test]
    fn split_sizes() {
        let segs = segments(1);
        let many: Vec<Segment> = std::iter::repeat(segs[0].clone()).take(20).collect();
        let (t, v) = split(&many, 0.1, 3);
        assert_eq!((t.len(), v.len()), (18, 2));
        let (t, v) = split(&many[..1], 0.5, 3);
        assert_eq!((t.len(), v.len()), (1, 0));
    }

    #[test]
    fn log_columns() {
        let h = [EpochRecord {
            epoch: 0,
            lr: 5e-4,
            train_loss: 1.5,
            val: None,
        }];
        assert_eq!(
            epoch_log_csv(&h),
            "epoch,lr,train_loss,val_RPA,val_RCA,val_OA\n0,5e-4,1.500000,,,\n"
        );
    }
}
