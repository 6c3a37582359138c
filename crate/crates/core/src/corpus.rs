//! Directory corpora: `name.wav` next to `name.f0` labels, searched
//! recursively. Song ids are the relative path without extension, with `/`
//! separators, and entries are sorted by id.

use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use crate::audio_io::{load_pitch_labels, load_wav_channel, ChannelSelect, PitchTrack, Waveform};
use crate::error::{Error, Result};

pub const LABEL_EXTENSION: &str = "f0";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub id: String,
    pub wav: PathBuf,
    /// Present when a sibling label file exists.
    pub labels: Option<PathBuf>,
}

/// Path of the label file belonging to `wav`.
pub fn label_path(wav: &Path) -> PathBuf {
    wav.with_extension(LABEL_EXTENSION)
}

fn rel_id(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path).with_extension("");
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Every file under `root` with the given extension, sorted by id.
pub fn scan_files(root: &Path, extension: &str) -> Result<Vec<(String, PathBuf)>> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        ));
    }
    let mut out = Vec::new();
    for entry in WalkDir::new(root).follow_links(true) {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            Error::io(path, e.into())
        })?;
        let p = entry.path();
        if entry.file_type().is_file()
            && p.extension()
                .is_some_and(|e| e.eq_ignore_ascii_case(extension))
        {
            out.push((rel_id(root, p), p.to_path_buf()));
        }
    }
    out.sort();
    Ok(out)
}

pub fn scan_corpus(root: impl AsRef<Path>) -> Result<Vec<CorpusEntry>> {
    let root = root.as_ref();
    Ok(scan_files(root, "wav")?
        .into_iter()
        .map(|(id, wav)| {
            let l = label_path(&wav);
            CorpusEntry {
                id,
                labels: l.is_file().then_some(l),
                wav,
            }
        })
        .collect())
}

/// A loaded song with labels on the model frame grid.
#[derive(Debug, Clone)]
pub struct Recording {
    pub id: String,
    pub audio: Waveform,
    pub labels: PitchTrack,
}

/// Loads every labelled song; unlabelled ones are skipped with a warning.
pub fn load_labelled(
    root: impl AsRef<Path>,
    hop_seconds: f64,
    channel: ChannelSelect,
) -> Result<Vec<Recording>> {
    let mut out = Vec::new();
    for e in scan_corpus(root)? {
        let Some(lp) = &e.labels else {
            log::warn!("{}: no .{LABEL_EXTENSION} labels, skipped", e.id);
            continue;
        };
        out.push(Recording {
            audio: load_wav_channel(&e.wav, channel)?,
            labels: load_pitch_labels(lp, hop_seconds)?,
            id: e.id,
        });
    }
    Ok(out)
}
