//! Log-mel feature extraction.
//!
//! Frames are centred (reflect padding of `n_fft / 2` on both sides) so that
//! frame `k` sits at sample `k * hop`. Magnitude spectra go through a
//! Slaney-style mel filterbank and a natural log with a fixed floor.

use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio_io::{write_atomic, Waveform};
use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Parameters of the feature frontend. Stored in checkpoints so training and
/// inference agree.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_fft: 2048,
            hop: 320,
            n_mels: 256,
            fmin: 30.0,
            fmax: 8000.0,
            log_floor: 1e-5,
        }
    }
}

impl FrontendConfig {
    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }

    /// Number of frames produced for `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        len / self.hop + 1
    }
}

/// `T x F` log-amplitude mel energies.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    frames: usize,
    n_mels: usize,
    hop_seconds: f64,
    sample_rate: u32,
    values: Vec<f32>,
}

impl LogMelSpectrogram {
    pub fn new(
        frames: usize,
        n_mels: usize,
        hop_seconds: f64,
        sample_rate: u32,
        values: Vec<f32>,
    ) -> Result<Self> {
        if values.len() != frames * n_mels {
            return Err(Error::Shape(format!(
                "{} values for a {frames}x{n_mels} spectrogram",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("log-mel spectrogram".into()));
        }
        Ok(Self {
            frames,
            n_mels,
            hop_seconds,
            sample_rate,
            values,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop_seconds
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.values[t * self.n_mels..(t + 1) * self.n_mels]
    }

    /// Keeps the first `frames` rows.
    pub fn truncated(mut self, frames: usize) -> Self {
        let frames = frames.min(self.frames);
        self.values.truncate(frames * self.n_mels);
        self.frames = frames;
        self
    }

    /// Extends along time by reflecting about the last frame until the frame
    /// count is a multiple of `multiple`.
    pub fn reflect_pad_to_multiple(&self, multiple: usize) -> LogMelSpectrogram {
        let target = self.frames.div_ceil(multiple).max(1) * multiple;
        let mut values = self.values.clone();
        values.reserve((target - self.frames) * self.n_mels);
        for t in self.frames..target {
            let src = reflect_index(t as isize, self.frames);
            values.extend_from_slice(self.frame(src));
        }
        LogMelSpectrogram {
            frames: target,
            values,
            ..self.clone()
        }
    }

    /// Writes raw little-endian `f32` values plus a `<path>.txt` sidecar
    /// holding the dimensions.
    pub fn dump(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_atomic(path, |file| {
            let mut buf = Vec::with_capacity(self.values.len() * 4);
            for v in &self.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            file.write_all(&buf).map_err(|e| Error::io(path, e))
        })?;
        let mut sidecar = path.as_os_str().to_owned();
        sidecar.push(".txt");
        let sidecar = std::path::PathBuf::from(sidecar);
        let text = format!(
            "frames = {}\nmel_bins = {}\nhop_seconds = {}\nsample_rate = {}\ndtype = f32le\n",
            self.frames, self.n_mels, self.hop_seconds, self.sample_rate
        );
        write_atomic(&sidecar, |file| {
            file.write_all(text.as_bytes())
                .map_err(|e| Error::io(&sidecar, e))
        })
    }
}

/// Mirror index into `[0, len)` without repeating the edge sample; indices
/// that overshoot more than one period keep folding.
pub(crate) fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= len as isize {
        m = period - m;
    }
    m as usize
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Centred STFT magnitudes, `T x (n_fft/2 + 1)` with `T = len / hop + 1`.
pub fn stft_magnitude(w: &Waveform, n_fft: usize, hop: usize) -> Result<Matrix> {
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    stft_with(w.samples(), n_fft, hop, &hann_window(n_fft), &fft)
}

fn stft_with(
    samples: &[f32],
    n_fft: usize,
    hop: usize,
    window: &[f64],
    fft: &Arc<dyn Fft<f64>>,
) -> Result<Matrix> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot analyse an empty waveform".into(),
        ));
    }
    if n_fft == 0 || hop == 0 || n_fft % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "invalid STFT geometry n_fft={n_fft} hop={hop}"
        )));
    }
    let pad = (n_fft / 2) as isize;
    let frames = samples.len() / hop + 1;
    let bins = n_fft / 2 + 1;
    let mut out = Matrix::zeros(frames, bins);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for t in 0..frames {
        let start = (t * hop) as isize - pad;
        for (i, slot) in buf.iter_mut().enumerate() {
            let src = reflect_index(start + i as isize, samples.len());
            *slot = Complex::new(samples[src] as f64 * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (dst, c) in out.row_mut(t).iter_mut().zip(&buf[..bins]) {
            *dst = c.norm();
        }
    }
    Ok(out)
}

pub fn hz_to_mel(f: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if f >= MIN_LOG_HZ {
        min_log_mel + (f / MIN_LOG_HZ).ln() / logstep
    } else {
        f / F_SP
    }
}

pub fn mel_to_hz(m: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if m >= min_log_mel {
        MIN_LOG_HZ * (logstep * (m - min_log_mel)).exp()
    } else {
        F_SP * m
    }
}

/// The `n_mels + 2` band edges; filter `i` rises from edge `i`, peaks at
/// edge `i + 1` and falls to edge `i + 2`.
pub fn mel_band_edges(n_mels: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let lo = hz_to_mel(fmin);
    let hi = hz_to_mel(fmax);
    (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Triangular, area-normalised mel filters as an `n_mels x (n_fft/2 + 1)`
/// matrix.
pub fn mel_filterbank(
    n_mels: usize,
    fmin: f64,
    fmax: f64,
    n_fft: usize,
    sr: u32,
) -> Result<Matrix> {
    if !(fmin >= 0.0 && fmin < fmax && fmax <= sr as f64 / 2.0) {
        return Err(Error::InvalidArgument(format!(
            "mel range [{fmin}, {fmax}] Hz invalid for sample rate {sr}"
        )));
    }
    if n_mels == 0 || n_fft == 0 {
        return Err(Error::InvalidArgument("empty filterbank".into()));
    }
    let bins = n_fft / 2 + 1;
    let edges = mel_band_edges(n_mels, fmin, fmax);
    let mut fb = Matrix::zeros(n_mels, bins);
    for i in 0..n_mels {
        let (left, centre, right) = (edges[i], edges[i + 1], edges[i + 2]);
        let norm = 2.0 / (right - left);
        for (k, w) in fb.row_mut(i).iter_mut().enumerate() {
            let f = k as f64 * sr as f64 / n_fft as f64;
            let rising = (f - left) / (centre - left);
            let falling = (right - f) / (right - centre);
            *w = rising.min(falling).max(0.0) * norm;
        }
    }
    Ok(fb)
}

/// Precomputed window, FFT plan and (sparse) filterbank.
pub struct MelFrontend {
    config: FrontendConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    filterbank: Matrix,
    // (first nonzero bin, weights) per mel band
    sparse: Vec<(usize, Vec<f64>)>,
}

impl std::fmt::Debug for MelFrontend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelFrontend")
            .field("config", &self.config)
            .finish()
    }
}

impl MelFrontend {
    pub fn new(config: FrontendConfig) -> Result<Self> {
        if config.hop == 0 {
            return Err(Error::InvalidArgument("hop must be positive".into()));
        }
        if !(config.log_floor > 0.0) {
            return Err(Error::InvalidArgument("log floor must be positive".into()));
        }
        let filterbank = mel_filterbank(
            config.n_mels,
            config.fmin,
            config.fmax,
            config.n_fft,
            config.sample_rate,
        )?;
        let sparse = (0..filterbank.rows)
            .map(|r| {
                let row = filterbank.row(r);
                let first = row.iter().position(|&w| w > 0.0).unwrap_or(0);
                let last = row.iter().rposition(|&w| w > 0.0).unwrap_or(0);
                (first, row[first..=last.max(first)].to_vec())
            })
            .collect();
        Ok(Self {
            window: hann_window(config.n_fft),
            fft: FftPlanner::new().plan_fft_forward(config.n_fft),
            filterbank,
            sparse,
            config,
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &Matrix {
        &self.filterbank
    }

    /// Peak frequency of every mel band.
    pub fn center_frequencies(&self) -> Vec<f64> {
        let edges = mel_band_edges(self.config.n_mels, self.config.fmin, self.config.fmax);
        edges[1..=self.config.n_mels].to_vec()
    }

    pub fn stft_magnitude(&self, w: &Waveform) -> Result<Matrix> {
        stft_with(
            w.samples(),
            self.config.n_fft,
            self.config.hop,
            &self.window,
            &self.fft,
        )
    }

    /// `ln(max(filterbank * |STFT|, floor))` per frame.
    pub fn log_mel(&self, w: &Waveform) -> Result<LogMelSpectrogram> {
        if w.sample_rate() != self.config.sample_rate {
            return Err(Error::InvalidArgument(format!(
                "expected {} Hz audio, got {} Hz",
                self.config.sample_rate,
                w.sample_rate()
            )));
        }
        let mag = self.stft_magnitude(w)?;
        let n_mels = self.config.n_mels;
        let floor = self.config.log_floor;
        let mut values = Vec::with_capacity(mag.rows * n_mels);
        for t in 0..mag.rows {
            let spectrum = mag.row(t);
            for (first, weights) in &self.sparse {
                let energy: f64 = weights
                    .iter()
                    .zip(&spectrum[*first..])
                    .map(|(w, m)| w * m)
                    .sum();
                values.push(energy.max(floor).ln() as f32);
            }
        }
        LogMelSpectrogram::new(
            mag.rows,
            n_mels,
            self.config.hop_seconds(),
            self.config.sample_rate,
            values,
        )
    }
}

/// Log-mel features with the default frontend configuration.
pub fn log_mel(w: &Waveform) -> Result<LogMelSpectrogram> {
    MelFrontend::new(FrontendConfig::default())?.log_mel(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, amp: f64, len: usize) -> Waveform {
        let s = (0..len)
            .map(|i| (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin()) as f32)
            .collect();
        Waveform::new(s, 16_000).unwrap()
    }

    #[test]
    fn frame_count_for_segment() {
        let w = Waveform::new(vec![0.0; 40_960], 16_000).unwrap();
        let m = stft_magnitude(&w, 2048, 320).unwrap();
        assert_eq!((m.rows, m.cols), (129, 1025));
        assert!(m.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let m = stft_magnitude(&sine(1000.0, 1.0, 16_000), 2048, 320).unwrap();
        // edge frames see the reflected padding
        for t in 4..m.rows - 4 {
            let row = m.row(t);
            let argmax = (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                .unwrap();
            assert_eq!(argmax, 128, "frame {t}");
        }
    }

    #[test]
    fn reflect_index_folds() {
        let idx: Vec<usize> = (-4..8).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(idx, vec![2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn filterbank_covers_interior_bins() {
        let fb = mel_filterbank(256, 30.0, 8000.0, 2048, 16_000).unwrap();
        assert_eq!((fb.rows, fb.cols), (256, 1025));
        assert!(fb.data.iter().all(|&w| w >= 0.0));
        for k in 0..fb.cols {
            let f = k as f64 * 16_000.0 / 2048.0;
            if f > 30.0 && f < 8000.0 {
                let col: f64 = (0..fb.rows).map(|r| fb.get(r, k)).sum();
                assert!(col > 0.0, "bin {k} ({f} Hz) uncovered");
            }
        }
    }

    #[test]
    fn filter_peaks_increase() {
        let fb = mel_filterbank(256, 30.0, 8000.0, 2048, 16_000).unwrap();
        let centres = &mel_band_edges(256, 30.0, 8000.0)[1..257];
        assert!(centres.windows(2).all(|w| w[0] < w[1]));
        let peaks: Vec<usize> = (0..fb.rows)
            .map(|r| {
                let row = fb.row(r);
                (0..row.len())
                    .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                    .unwrap()
            })
            .collect();
        assert!(peaks.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn top_bins_only_reach_last_filters() {
        let fb = mel_filterbank(256, 30.0, 8000.0, 2048, 16_000).unwrap();
        for bin in [1023, 1024] {
            let responding: Vec<usize> = (0..fb.rows).filter(|&r| fb.get(r, bin) > 0.0).collect();
            assert!(
                responding.iter().all(|&r| r >= 254),
                "bin {bin}: {responding:?}"
            );
        }
        assert!(fb.get(255, 1023) > 0.0);
    }

    #[test]
    fn filterbank_rejects_bad_range() {
        assert!(mel_filterbank(10, 8000.0, 30.0, 2048, 16_000).is_err());
        assert!(mel_filterbank(10, 30.0, 9000.0, 2048, 16_000).is_err());
    }

    #[test]
    fn silence_hits_floor() {
        let w = Waveform::new(vec![0.0; 3200], 16_000).unwrap();
        let m = log_mel(&w).unwrap();
        assert_eq!(m.frames(), 11);
        let floor = (1e-5f64).ln() as f32;
        assert!(m.values().iter().all(|&v| v == floor));
        assert!((floor as f64 + 11.5129).abs() < 1e-4);
    }

    #[test]
    fn sine_lands_in_nearest_band() {
        let frontend = MelFrontend::new(FrontendConfig::default()).unwrap();
        let centres = frontend.center_frequencies();
        let nearest = (0..centres.len())
            .min_by(|&a, &b| {
                (centres[a] - 440.0)
                    .abs()
                    .total_cmp(&(centres[b] - 440.0).abs())
            })
            .unwrap();
        let m = frontend.log_mel(&sine(440.0, 0.5, 16_000)).unwrap();
        for t in 4..m.frames() - 4 {
            let row = m.frame(t);
            let argmax = (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                .unwrap();
            assert_eq!(argmax, nearest, "frame {t}");
        }
    }

    #[test]
    fn doubling_amplitude_adds_ln2() {
        let frontend = MelFrontend::new(FrontendConfig::default()).unwrap();
        let a = frontend.log_mel(&sine(300.0, 0.25, 8000)).unwrap();
        let b = frontend.log_mel(&sine(300.0, 0.5, 8000)).unwrap();
        let floor = (1e-5f64).ln();
        for (x, y) in a.values().iter().zip(b.values()) {
            if (*x as f64) > floor + 1.0 {
                assert!(((y - x) as f64 - 2f64.ln()).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn shift_by_hop_shifts_frames() {
        let frontend = MelFrontend::new(FrontendConfig::default()).unwrap();
        let base = sine(523.0, 0.3, 12_000);
        let mut shifted = vec![0.0f32; 320];
        shifted.extend_from_slice(base.samples());
        let shifted = Waveform::new(shifted, 16_000).unwrap();
        let a = frontend.log_mel(&base).unwrap();
        let b = frontend.log_mel(&shifted).unwrap();
        // frames far enough from both ends to avoid padding effects
        for t in 4..a.frames() - 4 {
            for (x, y) in a.frame(t).iter().zip(b.frame(t + 1)) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn reflect_pad_reaches_multiple() {
        let w = Waveform::new(vec![0.1; 320 * 40], 16_000).unwrap();
        let m = log_mel(&w).unwrap();
        assert_eq!(m.frames(), 41);
        let p = m.reflect_pad_to_multiple(32);
        assert_eq!(p.frames(), 64);
        assert_eq!(p.frame(41), m.frame(39));
        assert_eq!(p.truncated(41), m);
    }

    #[test]
    fn wrong_rate_rejected() {
        let w = Waveform::new(vec![0.0; 100], 8000).unwrap();
        assert!(log_mel(&w).is_err());
    }
}
