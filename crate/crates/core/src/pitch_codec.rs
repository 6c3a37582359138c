//! Conversions between Hz, cents, the 360-bin salience grid and decoded
//! pitch tracks.

use crate::audio_io::PitchTrack;
use crate::error::{Error, Result};

/// Reference frequency of the cent scale.
pub const F_REF_HZ: f64 = 10.0;
/// Number of output bins.
pub const N_BINS: usize = 360;
/// Spacing between adjacent bins.
pub const BIN_CENTS: f64 = 20.0;
/// Frequency of bin 0 (C1 as printed, not the 32.7032 Hz equal-tempered value).
pub const LOWEST_HZ: f64 = 32.70;
/// Default voicing threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Half-width of the local weighted-average window around the peak bin.
pub const DECODE_HALF_WINDOW: usize = 4;

/// `1200 * log2(f / 10)`.
pub fn hz_to_cents(f: f64) -> Result<f64> {
    if !(f > 0.0) || !f.is_finite() {
        return Err(Error::Domain(format!(
            "frequency must be positive, got {f}"
        )));
    }
    Ok(1200.0 * (f / F_REF_HZ).log2())
}

pub fn cents_to_hz(c: f64) -> f64 {
    F_REF_HZ * (c / 1200.0).exp2()
}

/// The fixed 20-cent grid of 360 bins.
#[derive(Debug, Clone, PartialEq)]
pub struct CentGrid {
    bin_cents: Vec<f64>,
}

impl Default for CentGrid {
    fn default() -> Self {
        Self::new()
    }
}

impl CentGrid {
    pub fn new() -> Self {
        let c0 = 1200.0 * (LOWEST_HZ / F_REF_HZ).log2();
        Self {
            bin_cents: (0..N_BINS).map(|i| c0 + BIN_CENTS * i as f64).collect(),
        }
    }

    pub fn bin_cents(&self) -> &[f64] {
        &self.bin_cents
    }

    pub fn cents(&self, bin: usize) -> f64 {
        self.bin_cents[bin]
    }

    pub fn hz(&self, bin: usize) -> f64 {
        cents_to_hz(self.bin_cents[bin])
    }

    /// Lowest and highest frequencies accepted as training targets (the grid
    /// padded by half an interval on each side).
    pub fn target_range_hz(&self) -> (f64, f64) {
        (
            cents_to_hz(self.bin_cents[0] - BIN_CENTS / 2.0),
            cents_to_hz(self.bin_cents[N_BINS - 1] + BIN_CENTS / 2.0),
        )
    }

    /// Nearest bin to a cent value; exact midpoints go to the lower bin.
    pub fn nearest_bin(&self, cents: f64) -> usize {
        let x = (cents - self.bin_cents[0]) / BIN_CENTS;
        let i = (x - 0.5 - 1e-9).ceil();
        i.clamp(0.0, (N_BINS - 1) as f64) as usize
    }
}

/// Per-frame one-hot targets: `Some(bin)` for voiced frames, `None` for
/// unvoiced (an all-zero row).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetMatrix {
    bins: Vec<Option<usize>>,
}

impl TargetMatrix {
    pub fn new(bins: Vec<Option<usize>>) -> Result<Self> {
        if let Some(b) = bins.iter().flatten().find(|&&b| b >= N_BINS) {
            return Err(Error::InvalidArgument(format!(
                "target bin {b} out of range"
            )));
        }
        Ok(Self { bins })
    }

    pub fn unvoiced(frames: usize) -> Self {
        Self {
            bins: vec![None; frames],
        }
    }

    pub fn frames(&self) -> usize {
        self.bins.len()
    }

    pub fn bins(&self) -> &[Option<usize>] {
        &self.bins
    }

    pub fn bins_mut(&mut self) -> &mut [Option<usize>] {
        &mut self.bins
    }

    /// Dense `T x 360` row-major 0/1 matrix.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.bins.len() * N_BINS];
        for (t, b) in self.bins.iter().enumerate() {
            if let Some(b) = b {
                out[t * N_BINS + b] = 1.0;
            }
        }
        out
    }
}

/// One-hot encodes a pitch track on the cent grid.
pub fn encode_target(track: &PitchTrack, grid: &CentGrid) -> Result<TargetMatrix> {
    let (lo, hi) = grid.target_range_hz();
    let bins = track
        .frames()
        .iter()
        .enumerate()
        .map(|(frame, &f)| {
            if f <= 0.0 {
                return Ok(None);
            }
            // tiny slack so frequencies printed at the range edge still pass
            if f < lo * (1.0 - 1e-12) || f > hi * (1.0 + 1e-12) {
                return Err(Error::OutOfRange {
                    frame,
                    frequency_hz: f,
                });
            }
            Ok(Some(grid.nearest_bin(hz_to_cents(f)?)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TargetMatrix { bins })
}

/// `T x 360` bin probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SalienceMatrix {
    frames: usize,
    hop_seconds: f64,
    values: Vec<f64>,
}

impl SalienceMatrix {
    pub fn new(frames: usize, hop_seconds: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != frames * N_BINS {
            return Err(Error::Shape(format!(
                "{} values for {frames} frames of {N_BINS} bins",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "salience value {v} outside [0, 1]"
            )));
        }
        if !(hop_seconds > 0.0) {
            return Err(Error::InvalidArgument("hop must be positive".into()));
        }
        Ok(Self {
            frames,
            hop_seconds,
            values,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop_seconds
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * N_BINS..(t + 1) * N_BINS]
    }

    pub fn truncated(mut self, frames: usize) -> Self {
        let frames = frames.min(self.frames);
        self.values.truncate(frames * N_BINS);
        self.frames = frames;
        self
    }
}

/// Local weighted-average pitch and voicing confidence of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameEstimate {
    /// `None` when the window around the peak carries no weight.
    pub cents: Option<f64>,
    pub confidence: f64,
}

/// Weighted mean of bin cents over `[m-4, m+4]` (clipped to the grid) around
/// the first maximum `m`.
pub fn decode_frame(row: &[f64], grid: &CentGrid) -> FrameEstimate {
    debug_assert_eq!(row.len(), N_BINS);
    let mut peak = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[peak] {
            peak = i;
        }
    }
    let lo = peak.saturating_sub(DECODE_HALF_WINDOW);
    let hi = (peak + DECODE_HALF_WINDOW).min(N_BINS - 1);
    let mut weighted = 0.0;
    let mut total = 0.0;
    for (&v, &c) in row[lo..=hi].iter().zip(&grid.bin_cents()[lo..=hi]) {
        weighted += v * c;
        total += v;
    }
    FrameEstimate {
        cents: (total > 0.0).then(|| weighted / total),
        confidence: row[peak],
    }
}

/// Decodes salience into Hz, emitting `0.0` where confidence is below
/// `threshold`.
pub fn decode(sal: &SalienceMatrix, threshold: f64, grid: &CentGrid) -> PitchTrack {
    let frames = (0..sal.frames())
        .map(|t| {
            let est = decode_frame(sal.row(t), grid);
            match est.cents {
                Some(c) if est.confidence >= threshold => cents_to_hz(c),
                _ => 0.0,
            }
        })
        .collect();
    PitchTrack::new(sal.hop_seconds(), frames).expect("decoded frequencies are valid")
}

/// Pre-threshold pitch (Hz) and confidence for every frame.
pub fn decode_unthresholded(sal: &SalienceMatrix, grid: &CentGrid) -> Vec<(f64, f64)> {
    (0..sal.frames())
        .map(|t| {
            let est = decode_frame(sal.row(t), grid);
            (est.cents.map_or(0.0, cents_to_hz), est.confidence)
        })
        .collect()
}
