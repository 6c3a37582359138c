//! Additive noise at a controlled signal-to-noise ratio.
//!
//! Coloured noise is white Gaussian noise shaped in the frequency domain:
//! amplitude `f^(-alpha/2)` gives a power slope of `-3 * alpha` dB/octave
//! (pink `alpha = 1`, brown `alpha = 2`). The DC bin is always zeroed and
//! every generator returns unit RMS. SNR uses the RMS of whole files.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio_io::{load_wav, resample, rms, Waveform};
use crate::error::{Error, Result};

/// Talkers summed by the babble generator.
pub const BABBLE_TALKERS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    Pink,
    Brown,
    /// Synthetic multi-talker babble; a stand-in for recorded pub noise.
    Babble,
    /// A user-supplied recording, looped as needed.
    File(PathBuf),
}

impl FromStr for NoiseKind {
    type Err = Error;

    /// `white`, `pink`, `brown`, `babble` or `file:<path>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white" => Ok(Self::White),
            "pink" => Ok(Self::Pink),
            "brown" => Ok(Self::Brown),
            "babble" => Ok(Self::Babble),
            other => match other.strip_prefix("file:") {
                Some(p) if !p.is_empty() => Ok(Self::File(p.into())),
                _ => Err(Error::InvalidArgument(format!(
                    "unknown noise kind `{other}` (expected white, pink, brown, babble or file:<path>)"
                ))),
            },
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::White => f.write_str("white"),
            Self::Pink => f.write_str("pink"),
            Self::Brown => f.write_str("brown"),
            Self::Babble => f.write_str("babble"),
            Self::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub snr_db: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, snr_db: f64, seed: u64) -> Result<Self> {
        if !snr_db.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "SNR must be finite, got {snr_db}"
            )));
        }
        Ok(Self { kind, snr_db, seed })
    }
}

fn gaussian(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Multiplies the spectrum of `x` by `gain(freq_hz)` (Hermitian-symmetric),
/// zeroing DC.
fn shape(x: &[f64], sr: u32, gain: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for k in 1..=n / 2 {
        let g = gain(k as f64 * sr as f64 / n as f64);
        buf[k] *= g;
        if n - k != k {
            buf[n - k] *= g;
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

fn unit_rms(x: Vec<f64>) -> Result<Vec<f32>> {
    let r = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if !(r > 0.0) {
        return Err(Error::Domain("generated noise is silent".into()));
    }
    Ok(x.into_iter().map(|v| (v / r) as f32).collect())
}

/// Rough long-term speech spectrum: flat below 500 Hz, -9 dB/octave above,
/// with a gentle roll-off under 100 Hz.
fn speech_gain(f: f64) -> f64 {
    let low = (f / 100.0).min(1.0);
    let high = if f > 500.0 {
        (500.0 / f).powf(1.5)
    } else {
        1.0
    };
    low * high
}

/// Syllable-rate envelope: lowpassed noise under 6 Hz, exponentiated so it
/// stays positive.
fn syllable_envelope(n: usize, sr: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let lp = shape(&gaussian(n, rng), sr, |f| if f <= 6.0 { 1.0 } else { 0.0 });
    let r = (lp.iter().map(|v| v * v).sum::<f64>() / n as f64)
        .sqrt()
        .max(1e-12);
    lp.into_iter().map(|v| (v / r).exp()).collect()
}

fn loop_to(samples: &[f32], n: usize) -> Vec<f32> {
    samples.iter().copied().cycle().take(n).collect()
}

/// `n` samples of unit-RMS noise at `sr` Hz; deterministic in `seed`.
pub fn gen_noise(kind: &NoiseKind, n: usize, sr: u32, seed: u64) -> Result<Waveform> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "noise length must be at least one sample".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = match kind {
        NoiseKind::White => {
            let mut x = gaussian(n, &mut rng);
            let mean = x.iter().sum::<f64>() / n as f64;
            x.iter_mut().for_each(|v| *v -= mean);
            unit_rms(x)?
        }
        NoiseKind::Pink => unit_rms(shape(&gaussian(n, &mut rng), sr, |f| f.powf(-0.5)))?,
        NoiseKind::Brown => unit_rms(shape(&gaussian(n, &mut rng), sr, |f| 1.0 / f))?,
        NoiseKind::Babble => {
            let mut sum = vec![0.0; n];
            for _ in 0..BABBLE_TALKERS {
                let voice = shape(&gaussian(n, &mut rng), sr, speech_gain);
                let env = syllable_envelope(n, sr, &mut rng);
                for ((s, v), e) in sum.iter_mut().zip(voice).zip(env) {
                    *s += v * e;
                }
            }
            // the envelope product reintroduces DC
            let mean = sum.iter().sum::<f64>() / n as f64;
            sum.iter_mut().for_each(|v| *v -= mean);
            unit_rms(sum)?
        }
        NoiseKind::File(path) => {
            let w = resample(&load_wav(path)?, sr)?;
            if w.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "noise file {} is empty",
                    path.display()
                )));
            }
            unit_rms(loop_to(w.samples(), n).into_iter().map(f64::from).collect())?
        }
    };
    Waveform::new(samples, sr)
}

/// `signal + g * noise` with `g = RMS(signal) / (RMS(noise) * 10^(snr/20))`.
/// Noise is looped or truncated to the signal length first; the sum is not
/// normalized.
pub fn mix_at_snr(signal: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Waveform> {
    if signal.sample_rate() != noise.sample_rate() {
        return Err(Error::InvalidArgument(format!(
            "sample rates differ: signal {} Hz, noise {} Hz",
            signal.sample_rate(),
            noise.sample_rate()
        )));
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "SNR must be finite, got {snr_db}"
        )));
    }
    if noise.is_empty() {
        return Err(Error::InvalidArgument("noise has no samples".into()));
    }
    let rs = signal.rms();
    if !(rs > 0.0) {
        return Err(Error::Domain("signal is silent; SNR is undefined".into()));
    }
    let looped = loop_to(noise.samples(), signal.len());
    let rn = rms(&looped);
    if !(rn > 0.0) {
        return Err(Error::Domain("noise is silent; SNR is undefined".into()));
    }
    let g = rs / (rn * 10f64.powf(snr_db / 20.0));
    let mixed = signal
        .samples()
        .iter()
        .zip(&looped)
        .map(|(&s, &n)| (f64::from(s) + g * f64::from(n)) as f32)
        .collect();
    Waveform::new(mixed, signal.sample_rate())
}

/// `10 log10(P_signal / P_noise)` where the noise is `mixed - signal`.
pub fn measured_snr(signal: &Waveform, mixed: &Waveform) -> Result<f64> {
    if signal.len() != mixed.len() {
        return Err(Error::InvalidArgument(
            "signal and mix lengths differ".into(),
        ));
    }
    let ps: f64 = signal.samples().iter().map(|&s| f64::from(s).powi(2)).sum();
    let pn: f64 = signal
        .samples()
        .iter()
        .zip(mixed.samples())
        .map(|(&s, &m)| (f64::from(m) - f64::from(s)).powi(2))
        .sum();
    Ok(10.0 * (ps / pn).log10())
}

/// Deterministic per-file seed from the global seed and a file id
/// (FNV-1a of the id, mixed with splitmix64).
pub fn file_seed(global: u64, id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = global ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Adds noise to one file of a corpus; `id` selects the noise stream.
pub fn degrade(signal: &Waveform, id: &str, spec: &NoiseSpec) -> Result<Waveform> {
    let noise = gen_noise(
        &spec.kind,
        signal.len().max(1),
        signal.sample_rate(),
        file_seed(spec.seed, id),
    )?;
    mix_at_snr(signal, &noise, spec.snr_db)
}

/// Degrades every wav under `in_dir` into the same relative place under
/// `out_dir`; label files are copied unchanged.
pub fn degrade_corpus(in_dir: &Path, out_dir: &Path, spec: &NoiseSpec) -> Result<usize> {
    use crate::audio_io::save_wav;
    use crate::corpus::scan_corpus;

    let entries = scan_corpus(in_dir)?;
    for e in &entries {
        let rel = e.wav.strip_prefix(in_dir).unwrap_or(&e.wav);
        let dst = out_dir.join(rel);
        if let Some(parent) = dst.parent() {
            std::fs::create_dir_all(parent).map_err(|err| Error::io(parent, err))?;
        }
        let clean = load_wav(&e.wav)?;
        save_wav(&degrade(&clean, &e.id, spec)?, &dst)?;
        if let Some(lp) = &e.labels {
            let ldst = crate::corpus::label_path(&dst);
            std::fs::copy(lp, &ldst).map_err(|err| Error::io(&ldst, err))?;
        }
    }
    Ok(entries.len())
}
