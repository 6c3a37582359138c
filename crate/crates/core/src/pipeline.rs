//! End-to-end inference and the noise-robustness sweep.

use crate::audio_io::{resample, PitchTrack, Waveform, MODEL_SAMPLE_RATE};
use crate::corpus::Recording;
use crate::degradation::{file_seed, gen_noise, mix_at_snr, NoiseKind};
use crate::error::Result;
use crate::metrics::{evaluate, EvalResult};
use crate::model::Rmvpe;
use crate::pitch_codec::{decode, decode_unthresholded, CentGrid, SalienceMatrix};
use crate::spectrogram::{FrontendConfig, MelFrontend};

/// SNRs of the standard sweep, in dB.
pub const SWEEP_SNRS: [f64; 6] = [40.0, 30.0, 20.0, 10.0, 5.0, 0.0];

/// A model with its feature front end; shareable across threads.
#[derive(Debug)]
pub struct Predictor {
    pub model: Rmvpe<f32>,
    frontend: MelFrontend,
    grid: CentGrid,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub track: PitchTrack,
    pub salience: SalienceMatrix,
}

impl Prediction {
    /// Per-frame `(time, pitch_hz, confidence)` before thresholding.
    pub fn raw_rows(&self, grid: &CentGrid) -> Vec<(f64, f64, f64)> {
        decode_unthresholded(&self.salience, grid)
            .into_iter()
            .enumerate()
            .map(|(t, (hz, conf))| (t as f64 * self.salience.hop_seconds(), hz, conf))
            .collect()
    }
}

impl Predictor {
    pub fn new(model: Rmvpe<f32>) -> Result<Self> {
        let frontend = MelFrontend::new(FrontendConfig {
            n_mels: model.config().mel_bins,
            ..FrontendConfig::default()
        })?;
        Ok(Self {
            model,
            frontend,
            grid: CentGrid::new(),
        })
    }

    pub fn grid(&self) -> &CentGrid {
        &self.grid
    }

    pub fn hop_seconds(&self) -> f64 {
        self.frontend.config().hop_seconds()
    }

    /// Resample, log-mel, eval-mode forward, decode.
    pub fn predict(&self, audio: &Waveform, threshold: f64) -> Result<Prediction> {
        let audio = resample(audio, MODEL_SAMPLE_RATE)?;
        let mel = self.frontend.log_mel(&audio)?;
        let salience = self.model.predict_salience(&mel)?;
        Ok(Prediction {
            track: decode(&salience, threshold, &self.grid),
            salience,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub kind: String,
    pub snr_db: f64,
    pub song: String,
    pub result: EvalResult,
}

/// Degrade, predict and score every song for every `(kind, snr)` cell.
/// Each `(kind, song)` pair draws one noise realisation that is reused at
/// every SNR, so cells differ only in the noise gain.
pub fn sweep(
    predictor: &Predictor,
    songs: &[Recording],
    kinds: &[NoiseKind],
    snrs: &[f64],
    seed: u64,
    threshold: f64,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(kinds.len() * snrs.len() * songs.len());
    for kind in kinds {
        let name = kind.to_string();
        for song in songs {
            let clean = resample(&song.audio, MODEL_SAMPLE_RATE)?;
            let noise = gen_noise(
                kind,
                clean.len().max(1),
                MODEL_SAMPLE_RATE,
                file_seed(seed, &format!("{name}/{}", song.id)),
            )?;
            for &snr in snrs {
                let noisy = mix_at_snr(&clean, &noise, snr)?;
                let est = predictor.predict(&noisy, threshold)?.track;
                rows.push(SweepRow {
                    kind: name.clone(),
                    snr_db: snr,
                    song: song.id.clone(),
                    result: evaluate(&song.labels, &est)?,
                });
            }
        }
    }
    // stable order: kind, snr as given, song
    let snr_pos = |s: f64| snrs.iter().position(|&x| x == s).unwrap_or(usize::MAX);
    rows.sort_by(|a, b| {
        let ka = kinds.iter().position(|k| k.to_string() == a.kind);
        let kb = kinds.iter().position(|k| k.to_string() == b.kind);
        ka.cmp(&kb)
            .then(snr_pos(a.snr_db).cmp(&snr_pos(b.snr_db)))
            .then(a.song.cmp(&b.song))
    });
    Ok(rows)
}

/// Mean RPA of the rows matching `kind` and `snr_db`.
pub fn mean_rpa(rows: &[SweepRow], kind: &str, snr_db: f64) -> Option<f64> {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.kind == kind && r.snr_db == snr_db)
        .map(|r| r.result.rpa)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Long-form CSV: `kind,snr_db,song,rpa,rca,oa`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("kind,snr_db,song,rpa,rca,oa\n");
    for r in rows {
        out += &format!(
            "{},{},{},{:.6},{:.6},{:.6}\n",
            crate::metrics::csv_field(&r.kind),
            r.snr_db,
            crate::metrics::csv_field(&r.song),
            r.result.rpa,
            r.result.rca,
            r.result.oa
        );
    }
    out
}
