//! Synthetic labelled songs: harmonic tones on a seeded note contour with
//! vibrato and silent gaps. Labels are sampled from the exact contour.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio_io::{save_pitch_labels, save_wav, PitchTrack, Waveform};
use crate::corpus::label_path;
use crate::error::{Error, Result};

/// Lowest and highest frequencies the cent grid can label.
pub const GRID_MIN_HZ: f64 = 32.7;
pub const GRID_MAX_HZ: f64 = 1975.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub songs: usize,
    pub duration_seconds: f64,
    /// Note centres are drawn log-uniformly from this range.
    pub min_hz: f64,
    pub max_hz: f64,
    pub vibrato_cents: f64,
    pub vibrato_hz: f64,
    /// Partials including the fundamental; partial `k` has amplitude `1/k`.
    pub harmonics: usize,
    pub note_seconds: (f64, f64),
    /// Chance of a silent gap after each note.
    pub gap_probability: f64,
    pub gap_seconds: (f64, f64),
    pub sample_rate: u32,
    pub hop_seconds: f64,
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            songs: 10,
            duration_seconds: 2.56,
            min_hz: 110.0,
            max_hz: 880.0,
            vibrato_cents: 30.0,
            vibrato_hz: 5.5,
            harmonics: 6,
            note_seconds: (0.2, 0.6),
            gap_probability: 0.3,
            gap_seconds: (0.05, 0.25),
            sample_rate: 16_000,
            hop_seconds: 0.02,
            amplitude: 0.3,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let span = 2f64.powf(self.vibrato_cents.abs() / 1200.0);
        if !(self.min_hz > 0.0) || self.min_hz > self.max_hz {
            return Err(Error::Config(format!(
                "bad pitch range {}..{} Hz",
                self.min_hz, self.max_hz
            )));
        }
        if self.min_hz / span < GRID_MIN_HZ || self.max_hz * span > GRID_MAX_HZ {
            return Err(Error::Config(format!(
                "pitch range {}..{} Hz with {} cents vibrato leaves the grid [{GRID_MIN_HZ}, {GRID_MAX_HZ}] Hz",
                self.min_hz, self.max_hz, self.vibrato_cents
            )));
        }
        let ranges = [self.note_seconds, self.gap_seconds];
        if ranges.iter().any(|&(a, b)| !(a > 0.0) || b < a) {
            return Err(Error::Config(
                "note and gap durations need 0 < min <= max".into(),
            ));
        }
        if self.songs == 0 || self.harmonics == 0 || self.sample_rate == 0 {
            return Err(Error::Config(
                "songs, harmonics and sample_rate must be positive".into(),
            ));
        }
        if !(self.duration_seconds > 0.0)
            || !(self.hop_seconds > 0.0)
            || !(0.0..=1.0).contains(&self.gap_probability)
        {
            return Err(Error::Config(
                "duration and hop must be positive and gap_probability in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Note {
    start: f64,
    end: f64,
    hz: f64,
}

/// Piecewise pitch contour; `0.0` outside notes.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    notes: Vec<Note>,
    vibrato_cents: f64,
    vibrato_hz: f64,
}

impl Contour {
    pub fn random(spec: &SynthSpec, rng: &mut impl Rng) -> Self {
        let (lo, hi) = (spec.min_hz.ln(), spec.max_hz.ln());
        let mut notes = Vec::new();
        let mut t = 0.0;
        while t < spec.duration_seconds {
            let len = rng.random_range(spec.note_seconds.0..=spec.note_seconds.1);
            let hz = rng.random_range(lo..=hi).exp();
            notes.push(Note {
                start: t,
                end: t + len,
                hz,
            });
            t += len;
            if rng.random_bool(spec.gap_probability) {
                t += rng.random_range(spec.gap_seconds.0..=spec.gap_seconds.1);
            }
        }
        Self {
            notes,
            vibrato_cents: spec.vibrato_cents,
            vibrato_hz: spec.vibrato_hz,
        }
    }

    pub fn hz_at(&self, t: f64) -> f64 {
        let i = self.notes.partition_point(|n| n.start <= t);
        match i.checked_sub(1).map(|i| self.notes[i]) {
            Some(n) if t < n.end => {
                let phase = std::f64::consts::TAU * self.vibrato_hz * (t - n.start);
                n.hz * 2f64.powf(self.vibrato_cents * phase.sin() / 1200.0)
            }
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSong {
    pub id: String,
    pub audio: Waveform,
    pub labels: PitchTrack,
    pub contour: Contour,
}

/// Renders the contour as a band-limited harmonic tone.
pub fn render(contour: &Contour, spec: &SynthSpec) -> Result<Waveform> {
    let sr = f64::from(spec.sample_rate);
    let n = (spec.duration_seconds * sr).round() as usize;
    let norm: f64 = (1..=spec.harmonics).map(|k| 1.0 / k as f64).sum();
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let f = contour.hz_at(i as f64 / sr);
        if f <= 0.0 {
            phase = 0.0;
            out.push(0.0);
            continue;
        }
        let mut v = 0.0;
        for k in 1..=spec.harmonics {
            if k as f64 * f >= sr / 2.0 {
                break;
            }
            v += (k as f64 * phase).sin() / k as f64;
        }
        out.push((spec.amplitude * v / norm) as f32);
        phase = (phase + std::f64::consts::TAU * f / sr) % std::f64::consts::TAU;
    }
    Waveform::new(out, spec.sample_rate)
}

/// Song `index` of the corpus described by `spec`.
pub fn synth_song(spec: &SynthSpec, index: usize) -> Result<SynthSong> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let contour = Contour::random(spec, &mut rng);
    let audio = render(&contour, spec)?;
    let hop_samples = spec.hop_seconds * f64::from(spec.sample_rate);
    let frames = (audio.len() as f64 / hop_samples).floor() as usize + 1;
    let labels = PitchTrack::new(
        spec.hop_seconds,
        (0..frames)
            .map(|k| contour.hz_at(k as f64 * spec.hop_seconds))
            .collect(),
    )?;
    Ok(SynthSong {
        id: format!("song_{index:04}"),
        audio,
        labels,
        contour,
    })
}

pub fn synth_corpus(spec: &SynthSpec) -> Result<Vec<SynthSong>> {
    (0..spec.songs).map(|i| synth_song(spec, i)).collect()
}

/// Writes `<id>.wav` and `<id>.f0` for every song.
pub fn write_corpus(songs: &[SynthSong], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in songs {
        let wav = dir.join(format!("{}.wav", s.id));
        save_wav(&s.audio, &wav)?;
        save_pitch_labels(&s.labels, label_path(&wav))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_follow_contour_and_gaps_are_silent() {
        let spec = SynthSpec {
            gap_probability: 1.0,
            ..SynthSpec::default()
        };
        let s = synth_song(&spec, 0).unwrap();
        for (k, &f) in s.labels.frames().iter().enumerate() {
            assert_eq!(f, s.contour.hz_at(k as f64 * 0.02));
        }
        assert!(s.labels.voiced_count() < s.labels.len());
        for (i, &v) in s.audio.samples().iter().enumerate() {
            if s.contour.hz_at(i as f64 / 16_000.0) == 0.0 {
                assert_eq!(v, 0.0);
            }
        }
        assert_eq!(s.labels.len(), 40_960 / 320 + 1);
    }

    #[test]
    fn seeded_and_distinct() {
        let spec = SynthSpec::default();
        let a = synth_song(&spec, 1).unwrap();
        assert_eq!(a.audio, synth_song(&spec, 1).unwrap().audio);
        assert_ne!(a.labels, synth_song(&spec, 2).unwrap().labels);
    }

    #[test]
    fn range_outside_grid_is_rejected() {
        for (lo, hi) in [(20.0, 100.0), (100.0, 1970.0), (300.0, 200.0)] {
            let spec = SynthSpec {
                min_hz: lo,
                max_hz: hi,
                ..SynthSpec::default()
            };
            assert!(synth_song(&spec, 0).is_err(), "{lo}..{hi}");
        }
    }
}
