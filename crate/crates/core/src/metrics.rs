//! Frame-level melody accuracy: raw pitch (RPA), raw chroma (RCA) and
//! overall accuracy (OA), macro-averaged per song.

use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::audio_io::{write_atomic, PitchTrack};
use crate::error::{Error, Result};
use crate::pitch_codec::hz_to_cents;

/// A pitch counts as correct within this many cents (closed interval).
pub const TOLERANCE_CENTS: f64 = 50.0;

const HOP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub ref_voiced: usize,
    pub ref_unvoiced: usize,
    pub matched_rpa: usize,
    pub matched_rca: usize,
    pub matched_oa: usize,
}

impl Counts {
    pub fn frames(&self) -> usize {
        self.ref_voiced + self.ref_unvoiced
    }
}

/// Fractions in `[0, 1]`. With no voiced reference frames RPA and RCA are 0;
/// with no frames at all OA is 0 too.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub rpa: f64,
    pub rca: f64,
    pub oa: f64,
    pub counts: Counts,
}

impl EvalResult {
    pub fn from_counts(counts: Counts) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        Self {
            rpa: ratio(counts.matched_rpa, counts.ref_voiced),
            rca: ratio(counts.matched_rca, counts.ref_voiced),
            oa: ratio(counts.matched_oa, counts.frames()),
            counts,
        }
    }
}

/// Folds a cent difference into `(-600, 600]`.
pub fn fold_octave(delta: f64) -> f64 {
    delta - 1200.0 * ((delta - 600.0) / 1200.0).ceil()
}

/// Scores `est` against `ref_track`. Tracks of different length are cut to
/// the shorter one.
pub fn evaluate(ref_track: &PitchTrack, est: &PitchTrack) -> Result<EvalResult> {
    if (ref_track.hop_seconds() - est.hop_seconds()).abs() > HOP_TOLERANCE {
        return Err(Error::InvalidArgument(format!(
            "hop mismatch: reference {} s, estimate {} s",
            ref_track.hop_seconds(),
            est.hop_seconds()
        )));
    }
    let n = ref_track.len().min(est.len());
    if ref_track.len() != est.len() {
        log::warn!(
            "track lengths differ ({} reference vs {} estimate frames); scoring the first {n}",
            ref_track.len(),
            est.len()
        );
    }
    let mut c = Counts::default();
    for (&r, &e) in ref_track.frames()[..n].iter().zip(&est.frames()[..n]) {
        if r > 0.0 {
            c.ref_voiced += 1;
            if e <= 0.0 {
                continue;
            }
            let delta = hz_to_cents(e)? - hz_to_cents(r)?;
            if delta.abs() <= TOLERANCE_CENTS {
                c.matched_rpa += 1;
                c.matched_oa += 1;
            }
            if fold_octave(delta).abs() <= TOLERANCE_CENTS {
                c.matched_rca += 1;
            }
        } else {
            c.ref_unvoiced += 1;
            if e <= 0.0 {
                c.matched_oa += 1;
            }
        }
    }
    Ok(EvalResult::from_counts(c))
}

/// Mean and population standard deviation of a fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot summarize zero results".into(),
            ));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mean,
            std: var.sqrt(),
        })
    }
}

/// Rendered in percent as `mm.mm±ss.ss`.
impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}±{:.2}", 100.0 * self.mean, 100.0 * self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub rpa: MeanStd,
    pub rca: MeanStd,
    pub oa: MeanStd,
    pub songs: usize,
}

/// Unweighted per-song averages.
pub fn summarize(results: &[EvalResult]) -> Result<Summary> {
    let pick = |f: fn(&EvalResult) -> f64| results.iter().map(f).collect::<Vec<_>>();
    Ok(Summary {
        rpa: MeanStd::of(&pick(|r| r.rpa))?,
        rca: MeanStd::of(&pick(|r| r.rca))?,
        oa: MeanStd::of(&pick(|r| r.oa))?,
        songs: results.len(),
    })
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Per-song rows followed by a `mean±std` summary row.
pub fn results_csv(rows: &[(String, EvalResult)]) -> Result<String> {
    let mut out = String::from(
        "song_id,rpa,rca,oa,ref_voiced,ref_unvoiced,matched_rpa,matched_rca,matched_oa\n",
    );
    for (id, r) in rows {
        let c = r.counts;
        out += &format!(
            "{},{:.6},{:.6},{:.6},{},{},{},{},{}\n",
            csv_field(id),
            r.rpa,
            r.rca,
            r.oa,
            c.ref_voiced,
            c.ref_unvoiced,
            c.matched_rpa,
            c.matched_rca,
            c.matched_oa
        );
    }
    let results: Vec<EvalResult> = rows.iter().map(|(_, r)| *r).collect();
    let s = summarize(&results)?;
    out += &format!("mean±std,{},{},{},,,,,\n", s.rpa, s.rca, s.oa);
    Ok(out)
}

pub fn write_results_csv(rows: &[(String, EvalResult)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = results_csv(rows)?;
    write_atomic(path, |f| {
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    })
}
