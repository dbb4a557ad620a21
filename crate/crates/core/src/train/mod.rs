//! Training loop and checkpoint persistence.

mod checkpoint;

use std::collections::BTreeSet;

use csad_tensor::{adam_step, AdamState, Tape};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, FORMAT_VERSION, MAGIC,
};

use crate::data::{make_batch, make_mixup_batch, ClipRecord, Condition, FeatureExtractor};
use crate::error::{invalid, Error, Result};
use crate::model::{training_loss, Mode, Model, ModelConfig, ModelInput, Targets};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Cross-entropy against the machine id, summed over heads.
    IdClassification,
    /// KL divergence to the mixing weights of simplex-weighted mixtures.
    MixupKl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub mode: TrainMode,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 16,
            lr: 1e-4,
            seed: 0,
            mode: TrainMode::IdClassification,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(invalid("epochs and batch_size must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(invalid(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        self.model.validate()
    }
}

/// Trained (or partially trained) state, as persisted on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Model,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    /// Loss of every optimiser step, in order.
    pub loss_history: Vec<f64>,
}

/// Progress notifications from [`train`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainEvent {
    Step {
        epoch: usize,
        step: usize,
        loss: f64,
    },
    Epoch {
        epoch: usize,
        mean_loss: f64,
    },
}

fn check_records(records: &[ClipRecord], classes: usize) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    if let Some(r) = records.iter().find(|r| r.condition != Condition::Normal) {
        return Err(invalid(format!(
            "training uses normal clips only, but {} is labelled {}",
            r.source, r.condition
        )));
    }
    if let Some(r) = records.iter().find(|r| r.machine_id >= classes) {
        return Err(invalid(format!(
            "{} has machine id {} but the model has {classes} classes",
            r.source, r.machine_id
        )));
    }
    let present: BTreeSet<usize> = records.iter().map(|r| r.machine_id).collect();
    if let Some(missing) = (0..classes).find(|i| !present.contains(i)) {
        return Err(Error::Dataset(format!(
            "no training clip for machine id {missing}"
        )));
    }
    Ok(())
}

/// One optimiser step; returns the loss before the update.
fn step(
    model: &mut Model,
    adam: &mut AdamState,
    input: &ModelInput,
    targets: Targets<'_>,
) -> Result<f64> {
    let tape = Tape::new();
    let pass = model.forward(&tape, input, Mode::Train)?;
    let loss = training_loss(&pass.output, targets)?;
    let value = loss.item();
    if !value.is_finite() {
        return Ok(value);
    }
    let grads = tape.backward(loss)?;
    model.accumulate_grads(&grads)?;
    model.apply_batch_stats(&pass.batch_stats)?;
    adam_step(model.params_mut(), adam)?;
    Ok(value)
}

/// Trains a fresh model on normal clips. Identical inputs give bitwise
/// identical checkpoints.
pub fn train(
    records: &[ClipRecord],
    config: &TrainConfig,
    mut observer: impl FnMut(&TrainEvent),
) -> Result<Checkpoint> {
    config.validate()?;
    let classes = config.model.num_classes;
    check_records(records, classes)?;
    let extractor = FeatureExtractor::new(&config.model)?;
    let mut model = Model::new(config.model.clone(), config.seed)?;
    let mut adam = AdamState::new(config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_da7a);
    let mut history = Vec::new();

    let by_id: Vec<Vec<&ClipRecord>> = (0..classes)
        .map(|id| records.iter().filter(|r| r.machine_id == id).collect())
        .collect();
    let mut order: Vec<usize> = (0..records.len()).collect();
    let batches_per_epoch = records.len().div_ceil(config.batch_size);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for b in 0..batches_per_epoch {
            let global = history.len();
            let loss = match config.mode {
                TrainMode::IdClassification => {
                    let chunk = &order
                        [b * config.batch_size..((b + 1) * config.batch_size).min(order.len())];
                    let refs: Vec<&ClipRecord> = chunk.iter().map(|&i| &records[i]).collect();
                    let batch = make_batch(&refs, &extractor, &mut rng)?;
                    step(
                        &mut model,
                        &mut adam,
                        &batch.features,
                        Targets::Ids(&batch.targets),
                    )?
                }
                TrainMode::MixupKl => {
                    let batch = make_mixup_batch(&by_id, config.batch_size, &extractor, &mut rng)?;
                    step(
                        &mut model,
                        &mut adam,
                        &batch.features,
                        Targets::Mixture(&batch.alpha),
                    )?
                }
            };
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss became {loss} at step {global} (epoch {}, batch {b})",
                    epoch + 1
                )));
            }
            history.push(loss);
            epoch_loss += loss;
            observer(&TrainEvent::Step {
                epoch: epoch + 1,
                step: global,
                loss,
            });
        }
        observer(&TrainEvent::Epoch {
            epoch: epoch + 1,
            mean_loss: epoch_loss / batches_per_epoch as f64,
        });
    }
    Ok(Checkpoint {
        config: config.clone(),
        model,
        adam,
        epoch: config.epochs,
        loss_history: history,
    })
}
