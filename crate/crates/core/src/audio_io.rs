//! Audio and pitch-label I/O.
//!
//! WAV decoding accepts 16-bit PCM and 32-bit IEEE float with one or two
//! channels. Everything downstream works on mono [`Waveform`]s; stereo input
//! is reduced according to a [`ChannelSelect`]. Pitch labels use a two-column
//! text format (`time_sec  frequency_hz`, `#` comments allowed) and are
//! snapped onto a uniform frame grid with [`load_pitch_labels`].

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Working sample rate of the model frontend.
pub const MODEL_SAMPLE_RATE: u32 = 16_000;

/// Mono audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument(
                "sample rate must be positive".into(),
            ));
        }
        if samples.is_empty() {
            return Err(Error::InvalidArgument(
                "waveform must hold at least one sample".into(),
            ));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Root-mean-square amplitude over the whole buffer.
    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }
}

pub(crate) fn rms(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let power: f64 = samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
    (power / samples.len() as f64).sqrt()
}

/// How two-channel audio becomes mono.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChannelSelect {
    Left,
    Right,
    /// Mean of both channels.
    #[default]
    Mix,
}

impl std::str::FromStr for ChannelSelect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Self::Left),
            "right" => Ok(Self::Right),
            "mix" => Ok(Self::Mix),
            other => Err(Error::InvalidArgument(format!(
                "unknown channel `{other}` (expected left, right or mix)"
            ))),
        }
    }
}

/// Reads a WAV file, downmixing stereo by channel mean.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    load_wav_channel(path, ChannelSelect::Mix)
}

/// Reads a WAV file, reducing stereo input with `channel`.
pub fn load_wav_channel(path: impl AsRef<Path>, channel: ChannelSelect) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound_error(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if !(1..=2).contains(&channels) {
        return Err(Error::UnsupportedFormat(format!(
            "{channels} channels (only mono and stereo are supported)"
        )));
    }

    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound_error(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v.clamp(-1.0, 1.0)))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound_error(path, e))?,
        (format, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "{bits}-bit {format:?} samples (expected 16-bit PCM or 32-bit float)"
            )))
        }
    };

    let samples: Vec<f32> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(2)
            .map(|frame| match channel {
                ChannelSelect::Left => frame[0],
                ChannelSelect::Right => frame[1],
                ChannelSelect::Mix => 0.5 * (frame[0] + frame[1]),
            })
            .collect()
    };
    if samples.is_empty() {
        return Err(Error::Format(format!(
            "{} contains no samples",
            path.display()
        )));
    }
    Waveform::new(samples, spec.sample_rate)
}

fn map_hound_error(path: &Path, err: hound::Error) -> Error {
    match err {
        // hound reports short reads as `Other` rather than `UnexpectedEof`
        hound::Error::IoError(e)
            if matches!(
                e.kind(),
                std::io::ErrorKind::UnexpectedEof | std::io::ErrorKind::Other
            ) =>
        {
            Error::Format(format!("{}: truncated file", path.display()))
        }
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::FormatError(msg) => Error::Format(format!("{}: {msg}", path.display())),
        hound::Error::Unsupported | hound::Error::InvalidSampleFormat | hound::Error::TooWide => {
            Error::UnsupportedFormat(format!("{}: {err}", path.display()))
        }
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Writes 16-bit PCM mono. Samples are clipped to the representable range.
pub fn save_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(i) = w.samples.iter().position(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument(format!("sample {i} is not finite")));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    write_atomic(path, |file| {
        let mut writer = hound::WavWriter::new(std::io::BufWriter::new(file), spec)
            .map_err(|e| map_hound_error(path, e))?;
        for &s in &w.samples {
            writer
                .write_sample(quantize_pcm16(s))
                .map_err(|e| map_hound_error(path, e))?;
        }
        writer.finalize().map_err(|e| map_hound_error(path, e))
    })
}

fn quantize_pcm16(s: f32) -> i16 {
    (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Writes through a temporary file in the destination directory, then renames.
pub(crate) fn write_atomic(
    path: &Path,
    write: impl FnOnce(&mut std::fs::File) -> Result<()>,
) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    write(tmp.as_file_mut())?;
    tmp.as_file_mut().flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Zero crossings of the sinc kernel kept on each side of the centre tap.
const SINC_ZERO_CROSSINGS: usize = 64;
/// Anti-aliasing cutoff as a fraction of the lower Nyquist frequency.
const SINC_CUTOFF: f64 = 0.95;
const KAISER_BETA: f64 = 10.0;
/// Upper bound on precomputed polyphase table entries.
const MAX_TABLE_ENTRIES: usize = 1 << 22;

/// Band-limited resampling with a Kaiser-windowed sinc kernel.
///
/// The output holds `round(len * target / source)` samples. Equal rates
/// return the input unchanged.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::InvalidArgument(
            "target rate must be positive".into(),
        ));
    }
    let source_rate = w.sample_rate;
    if source_rate == target_rate {
        return Ok(w.clone());
    }
    let ratio = target_rate as f64 / source_rate as f64;
    let out_len = ((w.len() as f64 * ratio).round() as usize).max(1);

    // Normalised to the input rate: 1.0 is the input Nyquist frequency.
    let cutoff = SINC_CUTOFF * ratio.min(1.0);
    let half_width = SINC_ZERO_CROSSINGS as f64 / cutoff;
    let taps_per_side = half_width.ceil() as usize;
    let kernel = |t: f64| -> f64 {
        if t.abs() >= half_width {
            return 0.0;
        }
        let x = cutoff * t;
        let sinc = if x.abs() < 1e-12 {
            1.0
        } else {
            (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
        };
        let r = t / half_width;
        cutoff * sinc * bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / bessel_i0(KAISER_BETA)
    };

    let g = gcd(source_rate as u64, target_rate as u64);
    let src_step = source_rate as u64 / g;
    let phases = (target_rate as u64 / g) as usize;
    let taps = 2 * taps_per_side;
    let table: Option<Vec<f64>> = (phases * taps <= MAX_TABLE_ENTRIES).then(|| {
        let mut table = Vec::with_capacity(phases * taps);
        for p in 0..phases {
            let frac = p as f64 / phases as f64;
            for j in 0..taps {
                table.push(kernel(frac + taps_per_side as f64 - 1.0 - j as f64));
            }
        }
        table
    });

    let input = &w.samples;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len as u64 {
        let num = n * src_step;
        let base = (num / phases as u64) as i64;
        let phase = (num % phases as u64) as usize;
        let first = base - taps_per_side as i64 + 1;
        let mut acc = 0.0f64;
        for j in 0..taps {
            let k = first + j as i64;
            if k < 0 || k as usize >= input.len() {
                continue;
            }
            let h = match &table {
                Some(t) => t[phase * taps + j],
                None => {
                    let frac = phase as f64 / phases as f64;
                    kernel(frac + taps_per_side as f64 - 1.0 - j as f64)
                }
            };
            acc += h * input[k as usize] as f64;
        }
        out.push(acc as f32);
    }
    Waveform::new(out, target_rate)
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        let f = half / k as f64;
        term *= f * f;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Frame-level pitch: one frequency per hop, `0.0` marking unvoiced frames.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchTrack {
    hop_seconds: f64,
    frames: Vec<f64>,
}

impl PitchTrack {
    pub fn new(hop_seconds: f64, frames: Vec<f64>) -> Result<Self> {
        if !(hop_seconds > 0.0) || !hop_seconds.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "hop must be positive, got {hop_seconds}"
            )));
        }
        if let Some(i) = frames.iter().position(|f| !(*f >= 0.0) || !f.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "frame {i} has invalid frequency {}",
                frames[i]
            )));
        }
        Ok(Self {
            hop_seconds,
            frames,
        })
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop_seconds
    }

    pub fn frames(&self) -> &[f64] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn time_of(&self, frame: usize) -> f64 {
        frame as f64 * self.hop_seconds
    }

    pub fn is_voiced(&self, frame: usize) -> bool {
        self.frames[frame] > 0.0
    }

    pub fn voiced_count(&self) -> usize {
        self.frames.iter().filter(|&&f| f > 0.0).count()
    }

    /// Keeps the first `len` frames.
    pub fn truncated(&self, len: usize) -> PitchTrack {
        PitchTrack {
            hop_seconds: self.hop_seconds,
            frames: self.frames[..len.min(self.frames.len())].to_vec(),
        }
    }

    /// Renders the canonical two-column label text.
    pub fn to_label_text(&self) -> String {
        let mut out = String::with_capacity(self.frames.len() * 24);
        for (k, f) in self.frames.iter().enumerate() {
            let _ = writeln!(out, "{:.6}\t{:.6}", self.time_of(k), f);
        }
        out
    }
}

/// Reads a label file and resamples it onto the grid `t_k = k * hop_seconds`.
pub fn load_pitch_labels(path: impl AsRef<Path>, hop_seconds: f64) -> Result<PitchTrack> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pitch_labels(&text, hop_seconds)
}

/// Parses label text and snaps it to a uniform grid by nearest neighbour in
/// time. Equidistant grid points take the earlier label.
pub fn parse_pitch_labels(text: &str, hop_seconds: f64) -> Result<PitchTrack> {
    if !(hop_seconds > 0.0) || !hop_seconds.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "hop must be positive, got {hop_seconds}"
        )));
    }
    let labels = parse_label_pairs(text)?;
    let Some(&(last_time, _)) = labels.last() else {
        return PitchTrack::new(hop_seconds, Vec::new());
    };

    let len = (last_time / hop_seconds + 1e-9).floor() as usize + 1;
    let mut frames = Vec::with_capacity(len);
    let mut j = 0;
    for k in 0..len {
        let t = k as f64 * hop_seconds;
        // Advance while the next label is strictly closer (ties stay earlier).
        while j + 1 < labels.len() {
            let here = (labels[j].0 - t).abs();
            let next = (labels[j + 1].0 - t).abs();
            if next < here - 1e-9 {
                j += 1;
            } else {
                break;
            }
        }
        frames.push(labels[j].1);
    }
    PitchTrack::new(hop_seconds, frames)
}

/// Raw `(time, frequency)` pairs in file order, validated.
pub fn parse_label_pairs(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut labels: Vec<(f64, f64)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::LabelParse {
            line: line_no,
            message,
        };
        let mut fields = line.split_whitespace();
        let (Some(t), Some(f), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(parse_err(format!("expected two columns, got `{line}`")));
        };
        let time: f64 = t
            .parse()
            .map_err(|_| parse_err(format!("bad time `{t}`")))?;
        let freq: f64 = f
            .parse()
            .map_err(|_| parse_err(format!("bad frequency `{f}`")))?;
        if !time.is_finite() || !freq.is_finite() {
            return Err(parse_err("non-finite value".into()));
        }
        if freq < 0.0 {
            return Err(parse_err(format!("negative frequency {freq}")));
        }
        if let Some(&(prev, _)) = labels.last() {
            if time <= prev {
                return Err(parse_err(format!(
                    "time {time} does not increase (previous {prev})"
                )));
            }
        }
        labels.push((time, freq));
    }
    Ok(labels)
}

/// Writes a track in the canonical label format.
pub fn save_pitch_labels(track: &PitchTrack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = track.to_label_text();
    write_atomic(path, |file| {
        file.write_all(text.as_bytes())
            .map_err(|e| Error::io(path, e))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pcm16(path: &Path, rate: u32, channels: u16, frames: &[Vec<i16>]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for frame in frames {
            for &s in frame {
                w.write_sample(s).unwrap();
            }
        }
        w.finalize().unwrap();
    }

    #[test]
    fn pcm16_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.wav");
        write_pcm16(&path, 44_100, 1, &vec![vec![16384]; 44_100]);
        let w = load_wav(&path).unwrap();
        assert_eq!(w.sample_rate(), 44_100);
        assert_eq!(w.len(), 44_100);
        assert!(w.samples().iter().all(|&s| s == 0.5));
    }

    #[test]
    fn stereo_downmix_and_channel_select() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..100 {
            w.write_sample(0.2f32).unwrap();
            w.write_sample(0.6f32).unwrap();
        }
        w.finalize().unwrap();

        let mix = load_wav(&path).unwrap();
        assert!(mix.samples().iter().all(|&s| (s - 0.4).abs() < 1e-7));
        let left = load_wav_channel(&path, ChannelSelect::Left).unwrap();
        assert!(left.samples().iter().all(|&s| s == 0.2));
        let right = load_wav_channel(&path, ChannelSelect::Right).unwrap();
        assert!(right.samples().iter().all(|&s| s == 0.6));
    }

    #[test]
    fn truncated_header_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("g.wav");
        write_pcm16(&good, 16_000, 1, &vec![vec![1]; 16]);
        let bytes = std::fs::read(&good).unwrap();
        let bad = dir.path().join("b.wav");
        std::fs::write(&bad, &bytes[..20]).unwrap();
        let r = load_wav(&bad);
        assert!(matches!(r, Err(Error::Format(_))), "{r:?}");
    }

    #[test]
    fn unsupported_bit_depth() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 24,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(5i32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&path), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_wav("/nonexistent/x.wav"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn save_clips_rather_than_wraps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.wav");
        let w = Waveform::new(vec![1.0, -1.0, 1.5, -2.0], 16_000).unwrap();
        save_wav(&w, &path).unwrap();
        let raw: Vec<i16> = hound::WavReader::open(&path)
            .unwrap()
            .into_samples::<i16>()
            .map(|s| s.unwrap())
            .collect();
        assert_eq!(raw, vec![32767, -32768, 32767, -32768]);
    }

    #[test]
    fn save_to_unwritable_path_fails() {
        let w = Waveform::new(vec![0.0; 4], 16_000).unwrap();
        assert!(matches!(
            save_wav(&w, "/nonexistent-dir/out.wav"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn resample_identity_and_length() {
        let w = Waveform::new((0..100).map(|i| i as f32 / 100.0).collect(), 16_000).unwrap();
        assert_eq!(resample(&w, 16_000).unwrap(), w);

        let up = Waveform::new(vec![0.1; 8000], 8000).unwrap();
        assert_eq!(resample(&up, 16_000).unwrap().len(), 16_000);
        assert!(matches!(resample(&up, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn labels_exact_grid() {
        let t = parse_pitch_labels("0.00 440.0\n0.02 440.0\n", 0.02).unwrap();
        assert_eq!(t.frames(), &[440.0, 440.0]);
    }

    #[test]
    fn labels_nearest_tie_goes_early() {
        let t = parse_pitch_labels("0.01 100.0", 0.02).unwrap();
        assert_eq!(t.frames(), &[100.0]);
        // grid point 0.02 is equidistant from 0.01 and 0.03
        let t = parse_pitch_labels("0.01 100\n0.03 200\n0.05 300", 0.02).unwrap();
        assert_eq!(t.frames(), &[100.0, 100.0, 200.0]);
    }

    #[test]
    fn labels_ten_ms_onto_twenty_ms() {
        let text: String = (0..10)
            .map(|i| format!("{:.2}\t{}\n", i as f64 * 0.01, 100 + i))
            .collect();
        let t = parse_pitch_labels(&text, 0.02).unwrap();
        assert_eq!(t.frames(), &[100.0, 102.0, 104.0, 106.0, 108.0]);
    }

    #[test]
    fn labels_empty_and_comments() {
        assert_eq!(parse_pitch_labels("", 0.02).unwrap().len(), 0);
        let t = parse_pitch_labels("# header\n\n0.0 0\n", 0.02).unwrap();
        assert_eq!(t.frames(), &[0.0]);
    }

    #[test]
    fn labels_reject_bad_input() {
        assert!(matches!(
            parse_pitch_labels("0.02 1\n0.01 1", 0.02),
            Err(Error::LabelParse { line: 2, .. })
        ));
        assert!(matches!(
            parse_pitch_labels("0.0 -5", 0.02),
            Err(Error::LabelParse { line: 1, .. })
        ));
        assert!(parse_pitch_labels("0.0", 0.02).is_err());
    }

    #[test]
    fn labels_round_trip_through_text() {
        let track = PitchTrack::new(0.02, vec![0.0, 220.5, 221.25, 0.0]).unwrap();
        let back = parse_pitch_labels(&track.to_label_text(), 0.02).unwrap();
        assert_eq!(back, track);
    }
}
