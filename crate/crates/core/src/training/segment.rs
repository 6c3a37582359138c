use crate::audio_io::{resample, PitchTrack, Waveform, MODEL_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::pitch_codec::{encode_target, CentGrid, TargetMatrix, N_BINS};
use crate::spectrogram::{LogMelSpectrogram, MelFrontend};

/// Samples per training segment (2.56 s at 16 kHz).
pub const SEGMENT_SAMPLES: usize = 40_960;
/// Mel frames kept per segment; the 129th frame is dropped.
pub const SEGMENT_FRAMES: usize = 128;

/// One fixed-length training example.
#[derive(Debug, Clone)]
pub struct Segment {
    pub mel: LogMelSpectrogram,
    pub target: TargetMatrix,
    /// Reference pitch on the same 128 frames, padded frames unvoiced.
    pub reference: PitchTrack,
}

/// Cuts a labelled recording into non-overlapping segments. The tail is
/// zero-padded to a full segment and frames centred past the real audio
/// are unvoiced. Labels must already be on the model frame grid.
pub fn segment_recording(
    audio: &Waveform,
    labels: &PitchTrack,
    frontend: &MelFrontend,
    grid: &CentGrid,
) -> Result<Vec<Segment>> {
    let cfg = frontend.config();
    let hop = cfg.hop;
    if cfg.sample_rate != MODEL_SAMPLE_RATE
        || SEGMENT_SAMPLES % hop != 0
        || SEGMENT_SAMPLES / hop != SEGMENT_FRAMES
    {
        return Err(Error::Config(format!(
            "segmentation needs a {MODEL_SAMPLE_RATE} Hz front end with a {} sample hop",
            SEGMENT_SAMPLES / SEGMENT_FRAMES
        )));
    }
    if (labels.hop_seconds() - cfg.hop_seconds()).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "labels use a {} s hop, expected {} s",
            labels.hop_seconds(),
            cfg.hop_seconds()
        )));
    }
    let audio = resample(audio, MODEL_SAMPLE_RATE)?;
    let samples = audio.samples();
    if samples.len() < hop {
        log::warn!(
            "skipping recording of {} samples (shorter than one hop)",
            samples.len()
        );
        return Ok(Vec::new());
    }

    let count = samples.len().div_ceil(SEGMENT_SAMPLES);
    let mut out = Vec::with_capacity(count);
    for s in 0..count {
        let start = s * SEGMENT_SAMPLES;
        let end = (start + SEGMENT_SAMPLES).min(samples.len());
        let mut chunk = samples[start..end].to_vec();
        chunk.resize(SEGMENT_SAMPLES, 0.0);
        let mel = frontend
            .log_mel(&Waveform::new(chunk, MODEL_SAMPLE_RATE)?)?
            .truncated(SEGMENT_FRAMES);

        let frames: Vec<f64> = (0..SEGMENT_FRAMES)
            .map(|t| {
                let centre = start + t * hop;
                let global = s * SEGMENT_FRAMES + t;
                if centre < samples.len() {
                    labels.frames().get(global).copied().unwrap_or(0.0)
                } else {
                    0.0
                }
            })
            .collect();
        let reference = PitchTrack::new(labels.hop_seconds(), frames)?;
        let target = encode_target(&reference, grid)?;
        out.push(Segment {
            mel,
            target,
            reference,
        });
    }
    Ok(out)
}

/// Model inputs `N x 1 x T x F` and dense targets `N x T x 360`.
#[derive(Debug, Clone)]
pub struct SegmentBatch {
    pub inputs: Tensor<f32>,
    pub targets: Tensor<f32>,
}

impl SegmentBatch {
    pub fn new(segments: &[&Segment]) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (t, f) = (first.mel.frames(), first.mel.n_mels());
        let mut inputs = Vec::with_capacity(segments.len() * t * f);
        let mut targets = Vec::with_capacity(segments.len() * t * N_BINS);
        for s in segments {
            if s.mel.frames() != t || s.mel.n_mels() != f || s.target.frames() != t {
                return Err(Error::Shape(format!(
                    "segment with {}x{} mel and {} target rows does not match {t}x{f}",
                    s.mel.frames(),
                    s.mel.n_mels(),
                    s.target.frames()
                )));
            }
            inputs.extend_from_slice(s.mel.values());
            targets.extend(s.target.to_dense().into_iter().map(|v| v as f32));
        }
        let n = segments.len();
        Ok(Self {
            inputs: Tensor::from_vec(&[n, 1, t, f], inputs)?,
            targets: Tensor::from_vec(&[n, t, N_BINS], targets)?,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
