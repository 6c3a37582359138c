//! Drives the `rmvpe` binary through a full synth, train, predict, eval,
//! degrade and sweep cycle on a tiny corpus.

use std::path::Path;
use std::process::{Command, Output};

use rmvpe::audio_io::{load_pitch_labels, load_wav};
use rmvpe::model::load_checkpoint;

fn rmvpe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rmvpe"))
        .args(args)
        .output()
        .expect("run rmvpe")
}

fn ok(args: &[&str]) -> String {
    let out = rmvpe(args);
    assert!(
        out.status.success(),
        "rmvpe {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn full_cycle() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let corpus = root.join("corpus");
    let model = root.join("model");
    let preds = root.join("preds");

    ok(&[
        "synth",
        "--out",
        s(&corpus),
        "--songs",
        "2",
        "--seconds",
        "1.28",
        "--seed",
        "4",
    ]);
    for id in ["song_0000", "song_0001"] {
        assert_eq!(
            load_wav(corpus.join(format!("{id}.wav"))).unwrap().len(),
            20_480
        );
        assert!(corpus.join(format!("{id}.f0")).is_file());
    }
    assert_eq!(manifest(&corpus.join("manifest.json"))["command"], "synth");

    let out = ok(&[
        "train",
        "--corpus",
        s(&corpus),
        "--out",
        s(&model),
        "--epochs",
        "2",
        "--batch-size",
        "2",
        "--seed",
        "1",
    ]);
    assert!(out.contains("trained 2 epochs"), "{out}");
    for f in ["best.ckpt", "last.ckpt", "epochs.csv", "manifest.json"] {
        assert!(model.join(f).is_file(), "{f}");
    }
    let log = std::fs::read_to_string(model.join("epochs.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.starts_with("epoch,lr,train_loss,val_RPA,val_RCA,val_OA"));
    let m = manifest(&model.join("manifest.json"));
    assert_eq!(m["seed"], 1);
    assert_eq!(m["params"]["train"]["epochs"], 2);
    let ckpt = model.join("best.ckpt");
    load_checkpoint(&ckpt).unwrap();

    ok(&[
        "predict",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&corpus),
        "--out",
        s(&preds),
        "--raw",
    ]);
    let reference = load_pitch_labels(corpus.join("song_0000.f0"), 0.02).unwrap();
    let est = load_pitch_labels(preds.join("song_0000.f0"), 0.02).unwrap();
    assert_eq!(est.len(), 20_480 / 320 + 1);
    assert_eq!(est.len(), reference.len());
    let raw = std::fs::read_to_string(preds.join("song_0000.f0.raw.csv")).unwrap();
    assert!(raw.starts_with("time,pitch_hz,confidence\n"));
    assert_eq!(raw.lines().count(), est.len() + 1);

    // single-file predict is deterministic
    let one = root.join("one.f0");
    let wav = corpus.join("song_0001.wav");
    ok(&[
        "predict",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&wav),
        "--out",
        s(&one),
    ]);
    assert_eq!(
        std::fs::read(&one).unwrap(),
        std::fs::read(preds.join("song_0001.f0")).unwrap()
    );
    assert!(root.join("one.f0.manifest.json").is_file());

    let results = root.join("results.csv");
    let out = ok(&[
        "eval",
        "--reference",
        s(&corpus),
        "--estimates",
        s(&preds),
        "--out",
        s(&results),
    ]);
    assert!(out.contains("songs 2"), "{out}");
    let csv = std::fs::read_to_string(&results).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("song_id,rpa,rca,oa"));
    assert!(lines[3].starts_with("mean±std,"));

    let results2 = root.join("results2.csv");
    ok(&[
        "eval",
        "--reference",
        s(&corpus),
        "--checkpoint",
        s(&ckpt),
        "--audio",
        s(&corpus),
        "--out",
        s(&results2),
    ]);
    assert_eq!(csv, std::fs::read_to_string(&results2).unwrap());

    let noisy = root.join("noisy");
    ok(&[
        "degrade",
        "--kind",
        "pink",
        "--snr",
        "5",
        "--seed",
        "2",
        s(&corpus),
        s(&noisy),
    ]);
    let clean = load_wav(corpus.join("song_0000.wav")).unwrap();
    let dirty = load_wav(noisy.join("song_0000.wav")).unwrap();
    assert_eq!(clean.len(), dirty.len());
    assert_ne!(clean.samples(), dirty.samples());
    assert!(noisy.join("song_0000.f0").is_file());

    let sweep = root.join("sweep.csv");
    let out = ok(&[
        "sweep",
        "--checkpoint",
        s(&ckpt),
        "--corpus",
        s(&corpus),
        "--kinds",
        "white,brown",
        "--snrs",
        "10,0",
        "--out",
        s(&sweep),
    ]);
    assert!(out.contains("white:") && out.contains("brown:"), "{out}");
    let rows = std::fs::read_to_string(&sweep).unwrap();
    assert!(rows.starts_with("kind,snr_db,song,rpa,rca,oa\n"));
    assert_eq!(rows.lines().count(), 1 + 2 * 2 * 2);

    let mel = root.join("mel.f32");
    ok(&["dump-mel", "--input", s(&wav), "--out", s(&mel)]);
    let frames = 20_480 / 320 + 1;
    assert_eq!(
        std::fs::metadata(&mel).unwrap().len() as usize,
        frames * 256 * 4
    );
}

#[test]
fn config_file_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("synth.toml");
    std::fs::write(
        &cfg,
        "[synth]\nsongs = 3\nduration_seconds = 0.5\nseed = 9\n",
    )
    .unwrap();
    let out = tmp.path().join("c");
    ok(&[
        "synth",
        "--config",
        s(&cfg),
        "--songs",
        "1",
        "--out",
        s(&out),
    ]);
    assert!(out.join("song_0000.wav").is_file());
    assert!(!out.join("song_0001.wav").exists());
    let m = manifest(&out.join("manifest.json"));
    assert_eq!(m["params"]["songs"], 1);
    assert_eq!(m["params"]["seed"], 9);

    std::fs::write(&cfg, "[synth]\nsongz = 3\n").unwrap();
    let bad = rmvpe(&["synth", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("songz"));
}

#[test]
fn errors_exit_nonzero_with_one_line() {
    let usage = rmvpe(&["predict"]);
    assert_eq!(usage.status.code(), Some(2));

    let tmp = tempfile::tempdir().unwrap();
    let missing = rmvpe(&[
        "predict",
        "--checkpoint",
        s(&tmp.path().join("nope.ckpt")),
        "--input",
        s(tmp.path()),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(missing.status.code(), Some(1));
    let err = String::from_utf8_lossy(&missing.stderr);
    assert!(
        err.lines()
            .any(|l| l.starts_with("error: ") && l.contains("nope.ckpt")),
        "{err}"
    );

    let bad_kind = rmvpe(&["degrade", "--kind", "purple", "--snr", "3", "a", "b"]);
    assert_eq!(bad_kind.status.code(), Some(2));

    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let no_data = rmvpe(&[
        "train",
        "--corpus",
        s(&empty),
        "--out",
        s(&tmp.path().join("m")),
    ]);
    assert_eq!(no_data.status.code(), Some(1));
}
