//! Command-line front end. Every run writes a JSON manifest next to its
//! output with the resolved parameters.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::audio_io::{
    load_pitch_labels, load_wav_channel, save_pitch_labels, write_atomic, ChannelSelect,
};
use crate::corpus::{load_labelled, scan_corpus, scan_files, Recording, LABEL_EXTENSION};
use crate::degradation::{degrade_corpus, NoiseKind, NoiseSpec};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, summarize, write_results_csv, EvalResult};
use crate::model::{Checkpoint, ModelConfig, Preset};
use crate::pipeline::{sweep, sweep_csv, Predictor, SWEEP_SNRS};
use crate::pitch_codec::{CentGrid, DEFAULT_THRESHOLD};
use crate::spectrogram::{FrontendConfig, MelFrontend};
use crate::synth::{synth_corpus, write_corpus, SynthSpec};
use crate::training::{segment_recording, write_epoch_log, TrainConfig, Trainer};

#[derive(Debug, Parser)]
#[command(
    name = "rmvpe",
    version,
    about = "Vocal pitch estimation: train, predict, evaluate, degrade"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a labelled corpus.
    Train(TrainArgs),
    /// Write pitch labels for a WAV file or a directory of them.
    Predict(PredictArgs),
    /// Score estimates against reference labels.
    Eval(EvalArgs),
    /// Add noise at a fixed SNR to every WAV under a directory.
    Degrade(DegradeArgs),
    /// Accuracy across noise kinds and SNRs.
    Sweep(SweepArgs),
    /// Generate a synthetic labelled corpus.
    Synth(SynthArgs),
    /// Write the log-mel features of one file.
    DumpMel(DumpMelArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of `name.wav` + `name.f0` pairs.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory for checkpoints, the epoch log and the manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with a `[train]` section and optional `preset`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Explicit validation corpus; otherwise a seeded share is held out.
    #[arg(long)]
    pub val_corpus: Option<PathBuf>,
    /// Continue from a checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub channel: Option<ChannelSelect>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A WAV file or a directory searched recursively.
    #[arg(long)]
    pub input: PathBuf,
    /// Label file for a single input, directory otherwise.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value = "mix")]
    pub channel: ChannelSelect,
    /// Also write `<label>.raw.csv` with pre-threshold pitch and confidence.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of reference `.f0` files.
    #[arg(long)]
    pub reference: PathBuf,
    /// Directory of estimated `.f0` files with matching stems.
    #[arg(long, conflicts_with_all = ["checkpoint", "audio"])]
    pub estimates: Option<PathBuf>,
    /// Predict on the fly with this checkpoint (needs `--audio`).
    #[arg(long, requires = "audio")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub audio: Option<PathBuf>,
    /// Results CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value = "mix")]
    pub channel: ChannelSelect,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    /// white, pink, brown, babble or file:<path>
    #[arg(long)]
    pub kind: NoiseKind,
    #[arg(long, allow_hyphen_values = true)]
    pub snr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    pub in_dir: PathBuf,
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "white,pink,brown")]
    pub kinds: Vec<NoiseKind>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub snrs: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value = "mix")]
    pub channel: ChannelSelect,
    /// Long-form CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with a `[synth]` section.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub songs: Option<usize>,
    #[arg(long)]
    pub seconds: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DumpMelArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Raw `f32` output; a `.txt` sidecar holds the shape.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "mix")]
    pub channel: ChannelSelect,
}

/// Contents of a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub preset: Option<String>,
    pub channel: Option<String>,
    pub train: Option<TrainConfig>,
    pub synth: Option<SynthSpec>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_file: Option<PathBuf>,
    pub params: serde_json::Value,
    pub seed: Option<u64>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub output: PathBuf,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn to_json(v: impl Serialize) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |f| {
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// `<dir>/manifest.json`, or `<file>.manifest.json` for single-file outputs.
fn manifest_path(output: &Path) -> PathBuf {
    if output.is_dir() {
        output.join("manifest.json")
    } else {
        let mut s = output.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }
}

struct Run {
    command: &'static str,
    config_file: Option<PathBuf>,
    seed: Option<u64>,
    started: f64,
}

impl Run {
    fn start(command: &'static str, config_file: Option<PathBuf>, seed: Option<u64>) -> Self {
        Self {
            command,
            config_file,
            seed,
            started: now(),
        }
    }

    fn finish(self, output: &Path, params: serde_json::Value) -> Result<()> {
        let m = RunManifest {
            command: self.command.into(),
            config_file: self.config_file,
            params,
            seed: self.seed,
            started_unix: self.started,
            finished_unix: now(),
            output: output.to_path_buf(),
        };
        let text = serde_json::to_string_pretty(&m).map_err(|e| Error::Config(e.to_string()))?;
        write_text(&manifest_path(output), &(text + "\n"))
    }
}

fn load_predictor(path: &Path) -> Result<Predictor> {
    Predictor::new(Checkpoint::load(path)?.model)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let file = a
        .config
        .as_deref()
        .map(FileConfig::load)
        .transpose()?
        .unwrap_or_default();
    let mut cfg = file.train.clone().unwrap_or_default();
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.lr0 = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.threshold {
        cfg.threshold = v;
    }
    let preset = match (a.preset, &file.preset) {
        (Some(p), _) => p,
        (None, Some(s)) => s.parse()?,
        (None, None) => Preset::Toy,
    };
    let channel = match (a.channel, &file.channel) {
        (Some(c), _) => c,
        (None, Some(s)) => s.parse()?,
        (None, None) => ChannelSelect::Mix,
    };
    let model_config = ModelConfig::preset(preset);
    let run = Run::start("train", a.config.clone(), Some(cfg.seed));

    let frontend = MelFrontend::new(FrontendConfig {
        n_mels: model_config.mel_bins,
        ..FrontendConfig::default()
    })?;
    let grid = CentGrid::new();
    let hop = frontend.config().hop_seconds();
    let to_segments = |songs: Vec<Recording>| -> Result<Vec<_>> {
        let mut out = Vec::new();
        for s in songs {
            out.extend(segment_recording(&s.audio, &s.labels, &frontend, &grid)?);
        }
        Ok(out)
    };
    let train = to_segments(load_labelled(&a.corpus, hop, channel)?)?;
    if train.is_empty() {
        return Err(Error::Config(format!(
            "{}: no labelled training audio",
            a.corpus.display()
        )));
    }
    let val = a
        .val_corpus
        .as_ref()
        .map(|d| load_labelled(d, hop, channel).and_then(&to_segments))
        .transpose()?;

    let mut trainer = Trainer::new(model_config.clone(), cfg.clone())?;
    if let Some(v) = &val {
        trainer = trainer.validation(v);
    }
    if let Some(r) = &a.resume {
        trainer = trainer.resume(Checkpoint::load(r)?);
    }
    let outcome = trainer.run(&train, &mut ())?;

    ensure_dir(&a.out)?;
    outcome.best.save(a.out.join("best.ckpt"))?;
    outcome.last.save(a.out.join("last.ckpt"))?;
    write_epoch_log(&outcome.history, a.out.join("epochs.csv"))?;
    let mut params = BTreeMap::new();
    params.insert("corpus", to_json(&a.corpus));
    params.insert("val_corpus", to_json(&a.val_corpus));
    params.insert("resume", to_json(&a.resume));
    params.insert("preset", to_json(preset.to_string()));
    params.insert("channel", to_json(format!("{channel:?}").to_lowercase()));
    params.insert("train", to_json(&cfg));
    params.insert("segments", to_json(train.len()));
    params.insert("steps", to_json(outcome.steps));
    run.finish(&a.out, to_json(params))?;
    if let Some(msg) = outcome.halted {
        return Err(Error::NonFinite(format!(
            "training halted ({msg}); last good checkpoint saved"
        )));
    }
    println!(
        "trained {} epochs, {} steps; checkpoints in {}",
        outcome.history.len(),
        outcome.steps,
        a.out.display()
    );
    Ok(())
}

fn write_raw(path: &Path, rows: &[(f64, f64, f64)]) -> Result<()> {
    let mut text = String::from("time,pitch_hz,confidence\n");
    for (t, f, c) in rows {
        text += &format!("{t:.6},{f:.6},{c:.6}\n");
    }
    write_text(path, &text)
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let run = Run::start("predict", None, None);
    let predictor = load_predictor(&a.checkpoint)?;
    let jobs: Vec<(PathBuf, PathBuf)> = if a.input.is_dir() {
        ensure_dir(&a.out)?;
        scan_corpus(&a.input)?
            .into_iter()
            .map(|e| {
                let dst = a.out.join(format!("{}.{LABEL_EXTENSION}", e.id));
                (e.wav, dst)
            })
            .collect()
    } else {
        vec![(a.input.clone(), a.out.clone())]
    };
    if jobs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no WAV files under {}",
            a.input.display()
        )));
    }
    for (wav, dst) in &jobs {
        if let Some(parent) = dst.parent().filter(|p| !p.as_os_str().is_empty()) {
            ensure_dir(parent)?;
        }
        let audio = load_wav_channel(wav, a.channel)?;
        let pred = predictor.predict(&audio, a.threshold)?;
        save_pitch_labels(&pred.track, dst)?;
        if a.raw {
            let mut raw = dst.as_os_str().to_owned();
            raw.push(".raw.csv");
            write_raw(Path::new(&raw), &pred.raw_rows(predictor.grid()))?;
        }
    }
    run.finish(
        &a.out,
        serde_json::json!({
            "checkpoint": a.checkpoint,
            "input": a.input,
            "threshold": a.threshold,
            "channel": format!("{:?}", a.channel).to_lowercase(),
            "raw": a.raw,
            "files": jobs.len(),
        }),
    )
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let run = Run::start("eval", None, None);
    let hop = FrontendConfig::default().hop_seconds();
    let refs = scan_files(&a.reference, LABEL_EXTENSION)?;
    let mut rows: Vec<(String, EvalResult)> = Vec::new();
    let mut unmatched = Vec::new();
    match (&a.estimates, &a.checkpoint, &a.audio) {
        (Some(est_dir), None, None) => {
            let ests: BTreeMap<String, PathBuf> =
                scan_files(est_dir, LABEL_EXTENSION)?.into_iter().collect();
            for (id, rp) in &refs {
                match ests.get(id) {
                    Some(ep) => rows.push((
                        id.clone(),
                        evaluate(&load_pitch_labels(rp, hop)?, &load_pitch_labels(ep, hop)?)?,
                    )),
                    None => unmatched.push(id.clone()),
                }
            }
            let ref_ids: std::collections::BTreeSet<&String> =
                refs.iter().map(|(id, _)| id).collect();
            unmatched.extend(ests.keys().filter(|id| !ref_ids.contains(id)).cloned());
        }
        (None, Some(ck), Some(audio_dir)) => {
            let predictor = load_predictor(ck)?;
            let wavs: BTreeMap<String, PathBuf> =
                scan_files(audio_dir, "wav")?.into_iter().collect();
            for (id, rp) in &refs {
                match wavs.get(id) {
                    Some(w) => {
                        let est = predictor
                            .predict(&load_wav_channel(w, a.channel)?, a.threshold)?
                            .track;
                        rows.push((id.clone(), evaluate(&load_pitch_labels(rp, hop)?, &est)?));
                    }
                    None => unmatched.push(id.clone()),
                }
            }
        }
        _ => {
            return Err(Error::InvalidArgument(
                "give either --estimates or --checkpoint with --audio".into(),
            ))
        }
    }
    if !unmatched.is_empty() {
        log::warn!(
            "skipping {} unmatched stems: {}",
            unmatched.len(),
            unmatched.join(", ")
        );
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument(
            "no matching stems between reference and estimates".into(),
        ));
    }
    write_results_csv(&rows, &a.out)?;
    let results: Vec<EvalResult> = rows.iter().map(|(_, r)| *r).collect();
    let s = summarize(&results)?;
    println!(
        "songs {}  RPA {}  RCA {}  OA {}",
        s.songs, s.rpa, s.rca, s.oa
    );
    run.finish(
        &a.out,
        serde_json::json!({
            "reference": a.reference,
            "estimates": a.estimates,
            "checkpoint": a.checkpoint,
            "audio": a.audio,
            "threshold": a.threshold,
            "matched": rows.len(),
            "unmatched": unmatched,
        }),
    )
}

fn cmd_degrade(a: DegradeArgs) -> Result<()> {
    let run = Run::start("degrade", None, Some(a.seed));
    let spec = NoiseSpec::new(a.kind.clone(), a.snr, a.seed)?;
    let n = degrade_corpus(&a.in_dir, &a.out_dir, &spec)?;
    println!("degraded {n} files into {}", a.out_dir.display());
    run.finish(
        &a.out_dir,
        serde_json::json!({"in_dir": a.in_dir, "kind": a.kind.to_string(), "snr_db": a.snr, "files": n}),
    )
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let run = Run::start("sweep", None, Some(a.seed));
    let predictor = load_predictor(&a.checkpoint)?;
    let songs = load_labelled(&a.corpus, predictor.hop_seconds(), a.channel)?;
    if songs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{}: no labelled songs",
            a.corpus.display()
        )));
    }
    let snrs = a.snrs.clone().unwrap_or_else(|| SWEEP_SNRS.to_vec());
    let rows = sweep(&predictor, &songs, &a.kinds, &snrs, a.seed, a.threshold)?;
    write_text(&a.out, &sweep_csv(&rows))?;
    for kind in &a.kinds {
        let cells: Vec<String> = snrs
            .iter()
            .map(|&snr| {
                let rpa =
                    crate::pipeline::mean_rpa(&rows, &kind.to_string(), snr).unwrap_or(f64::NAN);
                format!("{snr}dB {:.2}", 100.0 * rpa)
            })
            .collect();
        println!("{kind}: {}", cells.join("  "));
    }
    run.finish(
        &a.out,
        serde_json::json!({
            "checkpoint": a.checkpoint,
            "corpus": a.corpus,
            "kinds": a.kinds.iter().map(ToString::to_string).collect::<Vec<_>>(),
            "snrs": snrs,
            "threshold": a.threshold,
            "rows": rows.len(),
        }),
    )
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let file = a
        .config
        .as_deref()
        .map(FileConfig::load)
        .transpose()?
        .unwrap_or_default();
    let mut spec = file.synth.unwrap_or_default();
    if let Some(v) = a.songs {
        spec.songs = v;
    }
    if let Some(v) = a.seconds {
        spec.duration_seconds = v;
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    let run = Run::start("synth", a.config.clone(), Some(spec.seed));
    let songs = synth_corpus(&spec)?;
    write_corpus(&songs, &a.out)?;
    println!("wrote {} songs to {}", songs.len(), a.out.display());
    run.finish(&a.out, to_json(&spec))
}

fn cmd_dump_mel(a: DumpMelArgs) -> Result<()> {
    let run = Run::start("dump-mel", None, None);
    let audio = crate::audio_io::resample(
        &load_wav_channel(&a.input, a.channel)?,
        crate::audio_io::MODEL_SAMPLE_RATE,
    )?;
    let mel = MelFrontend::new(FrontendConfig::default())?.log_mel(&audio)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    mel.dump(&a.out)?;
    run.finish(
        &a.out,
        serde_json::json!({"input": a.input, "frames": mel.frames(), "mel_bins": mel.n_mels()}),
    )
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Degrade(a) => cmd_degrade(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Synth(a) => cmd_synth(a),
        Command::DumpMel(a) => cmd_dump_mel(a),
    }
}

/// Parses arguments, runs, and maps failure to a one-line message and exit
/// code 1.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            1
        }
    }
}
