//! Flat `key = value` run configuration shared by the subcommands.

use std::path::Path;
use std::str::FromStr;

use csad_core::data::{AnomalyKind, SynthSpec};
use csad_core::train::{TrainConfig, TrainMode};

use crate::CliError;

/// Everything a run can be configured with. Files set fields, flags override them.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub synth: SynthSpec,
    pub clips_per_id: usize,
    pub test_clips_per_id: usize,
    pub threads: usize,
    /// Whether `num_classes` was set explicitly rather than inferred from data.
    pub classes_fixed: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            synth: SynthSpec::default(),
            clips_per_id: 32,
            test_clips_per_id: 16,
            threads: 1,
            classes_fixed: false,
        }
    }
}

pub const KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "lr",
    "seed",
    "mode",
    "input_feature",
    "attention",
    "num_classes",
    "frames",
    "n_mels",
    "fft_size",
    "win_len",
    "hop",
    "sample_rate",
    "attention_expansion",
    "fundamentals",
    "duration_secs",
    "anomaly_kind",
    "anomaly_strength",
    "machine_type",
    "clips_per_id",
    "test_clips_per_id",
    "threads",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Config(format!("bad value {value:?} for {key}: {e}")))
}

fn parse_mode(value: &str) -> Result<TrainMode, CliError> {
    match value {
        "id_classification" => Ok(TrainMode::IdClassification),
        "mixup_kl" => Ok(TrainMode::MixupKl),
        _ => Err(CliError::Config(format!(
            "bad value {value:?} for mode: expected id_classification or mixup_kl"
        ))),
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(path.display().to_string(), e))?;
        let mut config = Self::default();
        config.apply_text(&text)?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::from_file)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!(
                    "line {}: expected key = value, got {line:?}",
                    n + 1
                ))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let model = &mut self.train.model;
        match key {
            "epochs" => self.train.epochs = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "lr" => self.train.lr = parse(key, value)?,
            "seed" => {
                self.train.seed = parse(key, value)?;
                self.synth.seed = self.train.seed;
            }
            "mode" => self.train.mode = parse_mode(value)?,
            "input_feature" => model.input_feature = parse(key, value)?,
            "attention" => model.attention = parse(key, value)?,
            "num_classes" => {
                model.num_classes = parse(key, value)?;
                self.classes_fixed = true;
            }
            "frames" => model.frames = parse(key, value)?,
            "n_mels" => model.n_mels = parse(key, value)?,
            "fft_size" => {
                model.stft.fft_size = parse(key, value)?;
                model.freq_bins = model.stft.fft_size / 2 + 1;
            }
            "win_len" => model.stft.win_len = parse(key, value)?,
            "hop" => model.stft.hop = parse(key, value)?,
            "sample_rate" => {
                model.sample_rate = parse(key, value)?;
                self.synth.sample_rate = model.sample_rate;
            }
            "attention_expansion" => model.attention_expansion = parse(key, value)?,
            "fundamentals" => {
                self.synth.fundamentals = value
                    .split(',')
                    .map(|v| parse(key, v.trim()))
                    .collect::<Result<_, _>>()?
            }
            "duration_secs" => self.synth.duration_secs = parse(key, value)?,
            "anomaly_kind" => {
                let kind: AnomalyKind = parse(key, value)?;
                self.synth = std::mem::take(&mut self.synth).with_anomaly(kind);
            }
            "anomaly_strength" => self.synth.anomaly_strength = parse(key, value)?,
            "machine_type" => self.synth.machine_type = value.to_string(),
            "clips_per_id" => self.clips_per_id = parse(key, value)?,
            "test_clips_per_id" => self.test_clips_per_id = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            _ => return Err(CliError::UnknownKey(key.to_string())),
        }
        Ok(())
    }
}
