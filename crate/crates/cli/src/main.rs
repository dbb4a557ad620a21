//! `csad`: synthesise data, train, score and inspect complex-spectrum
//! anomaly detectors from the command line.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use csad_core::data::{
    load_dataset, machine_ids, synth_generate_range, write_dataset, AnomalyKind, ClipRecord,
    Condition,
};
use csad_core::dsp::{rainbowgram_with, read_wav, Matrix};
use csad_core::eval::{read_scores, score_records, write_embeddings, write_scores, AucReport};
use csad_core::model::InputFeature;
use csad_core::train::{load_checkpoint, save_checkpoint, train, TrainEvent, TrainMode};
use csad_core::{check, Error};

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("config: {0}")]
    Config(String),
    #[error("config: unknown key {0:?}; valid keys: {keys}", keys = config::KEYS.join(", "))]
    UnknownKey(String),
    #[error("i/o error on {0}: {1}")]
    Io(String, std::io::Error),
    #[error("{0} gradient suite(s) exceeded tolerance")]
    GradCheck(usize),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Config(_) | CliError::UnknownKey(_) => "config",
            CliError::Io(..) => "io",
            CliError::GradCheck(_) => "gradcheck",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => match e {
                Error::InvalidArgument(_) => 2,
                Error::TooShort { .. }
                | Error::Parse { .. }
                | Error::UnsupportedFormat { .. }
                | Error::Dataset(_)
                | Error::Checkpoint(_)
                | Error::Csv(_) => 3,
                Error::Numeric(_) | Error::Tensor(_) => 4,
                Error::Io { .. } => 5,
            },
            CliError::Config(_) | CliError::UnknownKey(_) => 2,
            CliError::GradCheck(_) => 4,
            CliError::Io(..) => 5,
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "csad",
    version,
    about = "Machine sound anomaly detection on complex spectrograms"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic benchmark: OUT/train (normal) and OUT/test (normal + anomalous).
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Key = value run configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed for every clip.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of machine ids (at most the number of configured fundamentals).
        #[arg(long)]
        ids: Option<usize>,
        /// Normal training clips per id.
        #[arg(long)]
        clips_per_id: Option<usize>,
        /// Test clips per id and condition.
        #[arg(long)]
        test_clips_per_id: Option<usize>,
        /// Anomaly kind: phase_jump, detune or burst.
        #[arg(long)]
        anomaly: Option<AnomalyKind>,
        /// Anomaly strength (defaults to the kind's own default).
        #[arg(long)]
        anomaly_strength: Option<f64>,
        /// Clip duration in seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Train a model on the normal clips of a dataset directory.
    Train {
        /// Dataset directory (manifest.csv or MIMII id_XX layout).
        #[arg(long)]
        data: PathBuf,
        /// Key = value run configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        /// Input representation: complex, magnitude or log-mel.
        #[arg(long)]
        feature: Option<InputFeature>,
        /// Drop the attention block (F_out = F_t).
        #[arg(long)]
        no_attention: bool,
        /// Train on simplex-weighted mixtures with a KL objective.
        #[arg(long)]
        mixup: bool,
        /// Number of epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Mini-batch size.
        #[arg(long)]
        batch_size: Option<usize>,
        /// Adam learning rate.
        #[arg(long)]
        lr: Option<f64>,
        /// Seed for initialisation, shuffling and crops.
        #[arg(long)]
        seed: Option<u64>,
        /// Machine type subdirectory when DATA is a MIMII root.
        #[arg(long)]
        machine_type: Option<String>,
        /// Worker threads (training is single-threaded; accepted for uniformity).
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Score every clip of a dataset directory and write a scores CSV.
    Score {
        /// Checkpoint to load.
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory, or a single WAV file.
        #[arg(long)]
        data: PathBuf,
        /// Scores CSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Machine type subdirectory when DATA is a MIMII root.
        #[arg(long)]
        machine_type: Option<String>,
        /// Worker threads for scoring.
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Report per-id and mean ROC-AUC from a scores CSV.
    Auc {
        /// Scores CSV written by `score`.
        #[arg(long)]
        scores: PathBuf,
    },
    /// Render a WAV file as a rainbowgram (PPM image plus CSV matrices).
    Rainbowgram {
        /// Input WAV file.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output PPM image; OUT.logmag.csv and OUT.dphase.csv are written alongside.
        #[arg(long)]
        out: PathBuf,
        /// Key = value run configuration file (STFT keys).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients for every op and a reduced model.
    Gradcheck {
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_values_t = check::DEFAULT_SEEDS)]
        seeds: Vec<u64>,
        /// Entries checked per model parameter tensor.
        #[arg(long, default_value_t = 6)]
        per_param: usize,
    },
    /// Export pooled Total-head embeddings per clip.
    Embed {
        /// Checkpoint to load.
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory, or a single WAV file.
        #[arg(long)]
        data: PathBuf,
        /// Embeddings CSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Machine type subdirectory when DATA is a MIMII root.
        #[arg(long)]
        machine_type: Option<String>,
    },
}

fn synth(
    out: &Path,
    mut config: RunConfig,
    ids: Option<usize>,
    anomaly: Option<AnomalyKind>,
    strength: Option<f64>,
) -> CliResult {
    if let Some(kind) = anomaly {
        config.synth = config.synth.with_anomaly(kind);
    }
    if let Some(s) = strength {
        config.synth.anomaly_strength = s;
    }
    if let Some(k) = ids {
        let available = config.synth.fundamentals.len();
        if k == 0 || k > available {
            return Err(CliError::Config(format!(
                "--ids must be between 1 and {available} (the number of fundamentals)"
            )));
        }
        config.synth.fundamentals.truncate(k);
    }
    let spec = &config.synth;
    let (train_n, test_n) = (config.clips_per_id, config.test_clips_per_id);
    let train_set = synth_generate_range(spec, 0..train_n, Condition::Normal)?;
    let mut test_set = synth_generate_range(spec, train_n..train_n + test_n, Condition::Normal)?;
    test_set.extend(synth_generate_range(spec, 0..test_n, Condition::Anomaly)?);
    write_dataset(out.join("train"), &train_set)?;
    write_dataset(out.join("test"), &test_set)?;
    println!(
        "wrote {} train and {} test clips for {} ids ({} anomalies) to {}",
        train_set.len(),
        test_set.len(),
        spec.fundamentals.len(),
        spec.anomaly_kind.as_str(),
        out.display()
    );
    Ok(())
}

fn load_records(data: &Path, machine_type: Option<&str>) -> CliResult<Vec<ClipRecord>> {
    if data.is_file() {
        let clip = read_wav(data)?;
        return Ok(vec![ClipRecord {
            clip,
            machine_type: machine_type.unwrap_or("unknown").to_string(),
            machine_id: 0,
            condition: Condition::Unknown,
            anomaly_kind: None,
            source: data.display().to_string(),
        }]);
    }
    Ok(load_dataset(data, machine_type)?)
}

fn run_train(
    data: &Path,
    out: &Path,
    mut config: RunConfig,
    machine_type: Option<&str>,
) -> CliResult {
    let records: Vec<ClipRecord> = load_records(data, machine_type)?
        .into_iter()
        .filter(|r| r.condition == Condition::Normal)
        .collect();
    if !config.classes_fixed {
        config.train.model.num_classes = machine_ids(&records).last().map_or(0, |m| m + 1);
    }
    let ckpt = train(&records, &config.train, |event| {
        if let TrainEvent::Epoch { epoch, mean_loss } = event {
            println!("epoch {epoch} loss {mean_loss:.6}");
        }
    })?;
    save_checkpoint(&ckpt, out)?;
    println!("saved {}", out.display());
    Ok(())
}

fn score(
    ckpt: &Path,
    data: &Path,
    out: &Path,
    machine_type: Option<&str>,
    threads: usize,
) -> CliResult {
    let ckpt = load_checkpoint(ckpt)?;
    let records = load_records(data, machine_type)?;
    let scores = score_records(&ckpt.model, &records, threads.max(1))?;
    write_scores(out, &scores)?;
    println!("scored {} clips into {}", scores.len(), out.display());
    Ok(())
}

fn auc(path: &Path) -> CliResult {
    let scores = read_scores(path)?;
    let report = AucReport::from_scores(&scores)?;
    print!("{}", report.render());
    println!("mean_auc={}", report.mean());
    Ok(())
}

fn write_matrix(path: &Path, m: &Matrix) -> CliResult {
    std::fs::write(path, m.to_csv()).map_err(|e| CliError::Io(path.display().to_string(), e))
}

fn rainbow(input: &Path, out: &Path, config: &RunConfig) -> CliResult {
    let clip = read_wav(input)?;
    let rg = rainbowgram_with(&clip, &config.train.model.stft)?;
    let io = |e| CliError::Io(out.display().to_string(), e);
    let mut w = BufWriter::new(File::create(out).map_err(io)?);
    rg.write_ppm(&mut w).map_err(io)?;
    w.flush().map_err(io)?;
    write_matrix(&out.with_extension("logmag.csv"), &rg.log_magnitude)?;
    write_matrix(&out.with_extension("dphase.csv"), &rg.phase_derivative)?;
    println!(
        "wrote {} ({} bins x {} frames)",
        out.display(),
        rg.log_magnitude.rows,
        rg.phase_derivative.cols
    );
    Ok(())
}

fn gradcheck(seeds: &[u64], per_param: usize) -> CliResult {
    let results = check::run_all(seeds, per_param)?;
    let mut failed = 0;
    for r in &results {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "{verdict} {} seed={} checked={} max_rel_err={:.3e} tol={:.0e}",
            r.name, r.seed, r.report.checked, r.report.max_rel_err, r.tolerance
        );
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        return Err(CliError::GradCheck(failed));
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Synth {
            out,
            config,
            seed,
            ids,
            clips_per_id,
            test_clips_per_id,
            anomaly,
            anomaly_strength,
            duration,
        } => {
            let mut cfg = RunConfig::load(config.as_deref())?;
            if let Some(s) = seed {
                cfg.synth.seed = s;
            }
            if let Some(n) = clips_per_id {
                cfg.clips_per_id = n;
            }
            if let Some(n) = test_clips_per_id {
                cfg.test_clips_per_id = n;
            }
            if let Some(d) = duration {
                cfg.synth.duration_secs = d;
            }
            synth(&out, cfg, ids, anomaly, anomaly_strength)
        }
        Command::Train {
            data,
            config,
            out,
            feature,
            no_attention,
            mixup,
            epochs,
            batch_size,
            lr,
            seed,
            machine_type,
            threads: _,
        } => {
            let mut cfg = RunConfig::load(config.as_deref())?;
            let t = &mut cfg.train;
            if let Some(f) = feature {
                t.model.input_feature = f;
            }
            if no_attention {
                t.model.attention = false;
            }
            if mixup {
                t.mode = TrainMode::MixupKl;
            }
            if let Some(e) = epochs {
                t.epochs = e;
            }
            if let Some(b) = batch_size {
                t.batch_size = b;
            }
            if let Some(l) = lr {
                t.lr = l;
            }
            if let Some(s) = seed {
                t.seed = s;
            }
            run_train(&data, &out, cfg, machine_type.as_deref())
        }
        Command::Score {
            ckpt,
            data,
            out,
            machine_type,
            threads,
        } => score(&ckpt, &data, &out, machine_type.as_deref(), threads),
        Command::Auc { scores } => auc(&scores),
        Command::Rainbowgram { input, out, config } => {
            rainbow(&input, &out, &RunConfig::load(config.as_deref())?)
        }
        Command::Gradcheck { seeds, per_param } => gradcheck(&seeds, per_param),
        Command::Embed {
            ckpt,
            data,
            out,
            machine_type,
        } => {
            let ckpt = load_checkpoint(&ckpt)?;
            let records = load_records(&data, machine_type.as_deref())?;
            write_embeddings(&out, &ckpt.model, &records)?;
            println!("wrote {} embeddings to {}", records.len(), out.display());
            Ok(())
        }
    }
}

fn one_line(text: &str) -> String {
    text.lines()
        .map(str::trim)
        .take_while(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            eprintln!(
                "error kind=usage: {}",
                one_line(msg.trim_start_matches("error: "))
            );
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error kind={}: {}", e.kind(), one_line(&e.to_string()));
            ExitCode::from(e.exit_code())
        }
    }
}
