use std::path::Path;
use std::process::{Command, Output};

use csad_core::train::load_checkpoint;

fn csad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csad"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Short clips on a small STFT so pipelines finish quickly.
const SMALL: &str = "fft_size = 64\nwin_len = 64\nhop = 32\nframes = 8\nn_mels = 16\nduration_secs = 0.25\nepochs = 1\nbatch_size = 4\n";

#[test]
fn help_documents_every_flag() {
    let cases: &[(&str, &[&str])] = &[
        (
            "synth",
            &[
                "--out",
                "--seed",
                "--ids",
                "--clips-per-id",
                "--anomaly",
                "--config",
            ],
        ),
        (
            "train",
            &[
                "--data",
                "--config",
                "--out",
                "--feature",
                "--no-attention",
                "--mixup",
                "--threads",
            ],
        ),
        ("score", &["--ckpt", "--data", "--out", "--threads"]),
        ("auc", &["--scores"]),
        ("rainbowgram", &["--in", "--out"]),
        ("gradcheck", &["--seeds", "--per-param"]),
        ("embed", &["--ckpt", "--data", "--out"]),
    ];
    for (cmd, flags) in cases {
        let o = csad(&[cmd, "--help"]);
        assert!(o.status.success(), "{cmd}");
        let text = stdout(&o);
        for flag in *flags {
            assert!(text.contains(flag), "{cmd} --help lacks {flag}");
        }
    }
}

#[test]
fn unknown_flags_are_usage_errors() {
    let o = csad(&["auc", "--scores", "x.csv", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error kind=usage:"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn bad_anomaly_kind_lists_valid_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let o = csad(&["synth", "--out", p(dir.path()), "--anomaly", "rattle"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for kind in ["phase_jump", "detune", "burst"] {
        assert!(err.contains(kind), "{err}");
    }
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "epochs = 2\nlearning_rate = 0.1\n").unwrap();
    let o = csad(&[
        "synth",
        "--out",
        p(&dir.path().join("d")),
        "--config",
        p(&cfg),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(
        err.starts_with("error kind=config:") && err.contains("\"learning_rate\""),
        "{err}"
    );
}

#[test]
fn synth_defaults_to_four_ids_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, SMALL).unwrap();
    for out in ["a", "b"] {
        let o = csad(&[
            "synth",
            "--out",
            p(&dir.path().join(out)),
            "--config",
            p(&cfg),
            "--seed",
            "4",
            "--clips-per-id",
            "2",
            "--test-clips-per-id",
            "1",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let manifest = std::fs::read_to_string(dir.path().join("a/train/manifest.csv")).unwrap();
    let ids: std::collections::BTreeSet<&str> = manifest
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap())
        .collect();
    assert_eq!(ids.len(), 4);
    for sub in [
        "train/manifest.csv",
        "test/manifest.csv",
        "test/anomaly_id03_0000.wav",
    ] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(sub)).unwrap(),
            std::fs::read(dir.path().join("b").join(sub)).unwrap(),
            "{sub}"
        );
    }
    let test = std::fs::read_to_string(dir.path().join("a/test/manifest.csv")).unwrap();
    assert_eq!(test.lines().count(), 1 + 8);
}

#[test]
fn auc_on_fixture_prints_three_quarters() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("scores.csv");
    std::fs::write(
        &csv,
        "source,machine_type,machine_id,condition,score,seg_0\n\
         a,fan,0,anomaly,0.9,0.9\nb,fan,0,anomaly,0.4,0.4\n\
         c,fan,0,normal,0.5,0.5\nd,fan,0,normal,0.1,0.1\n",
    )
    .unwrap();
    let o = csad(&["auc", "--scores", p(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(
        stdout(&o).lines().any(|l| l == "mean_auc=0.75"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn gradcheck_passes() {
    let o = csad(&["gradcheck", "--seeds", "11"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).lines().all(|l| l.starts_with("ok ")));
}

#[test]
fn rainbowgram_writes_image_and_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("tone.wav");
    let samples: Vec<f64> = (0..8000).map(|i| 0.5 * (i as f64 * 0.2).sin()).collect();
    csad_core::dsp::write_wav(
        &wav,
        &csad_core::dsp::AudioClip::new(samples, 16000).unwrap(),
    )
    .unwrap();
    let ppm = dir.path().join("tone.ppm");
    let o = csad(&["rainbowgram", "--in", p(&wav), "--out", p(&ppm)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(std::fs::read(&ppm).unwrap().starts_with(b"P6\n"));
    let logmag = std::fs::read_to_string(dir.path().join("tone.logmag.csv")).unwrap();
    assert_eq!(logmag.lines().count(), 513);
    assert!(dir.path().join("tone.dphase.csv").exists());
}

#[test]
fn score_on_short_wav_reports_too_short() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, SMALL).unwrap();
    let data = dir.path().join("data");
    let ckpt = dir.path().join("m.ckpt");
    let o = csad(&[
        "synth",
        "--out",
        p(&data),
        "--config",
        p(&cfg),
        "--clips-per-id",
        "1",
        "--test-clips-per-id",
        "1",
    ]);
    assert!(o.status.success());
    let o = csad(&[
        "train",
        "--data",
        p(&data.join("train")),
        "--config",
        p(&cfg),
        "--out",
        p(&ckpt),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("epoch 1 loss "));

    let wav = dir.path().join("short.wav");
    csad_core::dsp::write_wav(
        &wav,
        &csad_core::dsp::AudioClip::new(vec![0.1; 100], 16000).unwrap(),
    )
    .unwrap();
    let o = csad(&[
        "score",
        "--ckpt",
        p(&ckpt),
        "--data",
        p(&wav),
        "--out",
        p(&dir.path().join("s.csv")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.starts_with("error kind=too-short:"), "{err}");

    let emb = dir.path().join("emb.csv");
    let o = csad(&[
        "embed",
        "--ckpt",
        p(&ckpt),
        "--data",
        p(&data.join("test")),
        "--out",
        p(&emb),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read_to_string(&emb).unwrap().lines().count(),
        1 + 8
    );
}

#[test]
fn train_flags_select_ablation_variants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    // Full-size STFT so 128 mel bands fit; eight frames keep it quick.
    std::fs::write(
        &cfg,
        "frames = 8\nduration_secs = 0.3\nepochs = 1\nbatch_size = 4\n",
    )
    .unwrap();
    let data = dir.path().join("data");
    assert!(csad(&[
        "synth",
        "--out",
        p(&data),
        "--config",
        p(&cfg),
        "--clips-per-id",
        "1"
    ])
    .status
    .success());
    let train_dir = data.join("train");
    let train = |extra: &[&str], name: &str| {
        let out = dir.path().join(name);
        let mut args = vec![
            "train",
            "--data",
            p(&train_dir),
            "--config",
            p(&cfg),
            "--out",
            p(&out),
        ];
        args.extend_from_slice(extra);
        let o = csad(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        load_checkpoint(&out).unwrap()
    };

    let complex = train(&[], "complex.ckpt");
    assert_eq!(complex.config.model.num_heads(), 3);
    let plain = train(&["--no-attention"], "plain.ckpt");
    assert!(!plain.config.model.attention);
    assert!(!plain
        .model
        .params()
        .iter()
        .any(|p| p.name.starts_with("attention")));
    let mel = train(&["--feature", "log-mel", "--mixup"], "mel.ckpt");
    assert_eq!(mel.config.model.input_height(), 128);
    assert_eq!(mel.config.model.num_heads(), 1);
    assert_eq!(mel.config.mode, csad_core::train::TrainMode::MixupKl);

    let o = csad(&[
        "train",
        "--data",
        p(&data.join("test")),
        "--config",
        p(&cfg),
        "--out",
        p(&dir.path().join("x")),
    ]);
    assert!(
        o.status.success(),
        "anomalous clips are filtered out: {}",
        stderr(&o)
    );
}
