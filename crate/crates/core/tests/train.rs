use csad_core::data::{synth_generate, ClipRecord, Condition, SynthSpec};
use csad_core::model::{Mode, ModelConfig, ModelInput};
use csad_core::train::{
    load_checkpoint, read_checkpoint, save_checkpoint, train, write_checkpoint, Checkpoint,
    TrainConfig, TrainEvent, TrainMode,
};
use csad_core::{CheckpointError, Error};
use csad_tensor::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        lr: 1e-3,
        seed: 5,
        mode: TrainMode::IdClassification,
        model: ModelConfig::reduced(),
    }
}

fn records(count: usize) -> Vec<ClipRecord> {
    let spec = SynthSpec {
        seed: 2,
        duration_secs: 0.1,
        ..SynthSpec::default()
    };
    synth_generate(&spec, count, Condition::Normal).unwrap()
}

fn trained() -> Checkpoint {
    train(&records(3), &small_config(2), |_| {}).unwrap()
}

#[test]
fn training_is_bitwise_reproducible() {
    let a = trained();
    let b = trained();
    assert_eq!(a.loss_history.len(), 6);
    assert_eq!(
        a.loss_history
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>(),
        b.loss_history
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    );
    assert_eq!(write_checkpoint(&a).unwrap(), write_checkpoint(&b).unwrap());
}

#[test]
fn observer_sees_every_step_and_epoch() {
    let mut steps = 0;
    let mut epochs = Vec::new();
    let ckpt = train(&records(3), &small_config(2), |e| match e {
        TrainEvent::Step { .. } => steps += 1,
        TrainEvent::Epoch { epoch, mean_loss } => {
            assert!(mean_loss.is_finite());
            epochs.push(*epoch);
        }
    })
    .unwrap();
    assert_eq!(steps, ckpt.loss_history.len());
    assert_eq!(epochs, vec![1, 2]);
    assert_eq!(ckpt.epoch, 2);
    assert_eq!(ckpt.adam.t, 6);
}

#[test]
fn loss_falls_with_training() {
    let ckpt = train(&records(4), &small_config(10), |_| {}).unwrap();
    let h = &ckpt.loss_history;
    let head: f64 = h[..4].iter().sum::<f64>() / 4.0;
    let tail: f64 = h[h.len() - 4..].iter().sum::<f64>() / 4.0;
    assert!(tail < head, "loss went from {head} to {tail}");
}

#[test]
fn mixup_mode_trains() {
    let config = TrainConfig {
        mode: TrainMode::MixupKl,
        ..small_config(1)
    };
    let ckpt = train(&records(2), &config, |_| {}).unwrap();
    assert_eq!(ckpt.loss_history.len(), 2);
    assert!(ckpt.loss_history.iter().all(|l| l.is_finite() && *l >= 0.0));
}

#[test]
fn anomalous_clips_are_refused() {
    let mut recs = records(1);
    recs[0].condition = Condition::Anomaly;
    assert!(matches!(
        train(&recs, &small_config(1), |_| {}),
        Err(Error::InvalidArgument(_))
    ));
    let recs = records(1);
    assert!(matches!(
        train(&recs[..3], &small_config(1), |_| {}),
        Err(Error::Dataset(_))
    ));
}

#[test]
fn divergence_reports_the_step() {
    let config = TrainConfig {
        lr: 1e300,
        epochs: 20,
        ..small_config(1)
    };
    match train(&records(2), &config, |_| {}) {
        Err(Error::Numeric(msg)) => assert!(msg.contains("step"), "{msg}"),
        other => panic!(
            "expected a numeric failure, got {:?}",
            other.map(|c| c.loss_history)
        ),
    }
}

fn eval_logits(ckpt: &Checkpoint) -> Vec<u64> {
    let config = &ckpt.config.model;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let shape = [3, 1, config.input_height(), config.frames];
    let input = ModelInput::Complex {
        re: Tensor::uniform(&shape, -1.0, 1.0, &mut rng),
        im: Tensor::uniform(&shape, -1.0, 1.0, &mut rng),
    };
    let tape = Tape::new();
    let out = ckpt
        .model
        .forward(&tape, &input, Mode::Eval)
        .unwrap()
        .output;
    out.heads()
        .iter()
        .flat_map(|h| h.value().data().to_vec())
        .map(f64::to_bits)
        .collect()
}

#[test]
fn checkpoint_round_trip_is_lossless() {
    let ckpt = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&ckpt, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(eval_logits(&back), eval_logits(&ckpt));
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"CSAD");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
}

fn checkpoint_error(bytes: &[u8]) -> CheckpointError {
    match read_checkpoint(bytes) {
        Err(Error::Checkpoint(e)) => e,
        other => panic!("expected a checkpoint error, got {:?}", other.err()),
    }
}

/// Offset of the tensor-count field.
fn count_offset(bytes: &[u8]) -> usize {
    12 + u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize
}

#[test]
fn corrupt_checkpoints_fail_distinctly() {
    let good = write_checkpoint(&trained()).unwrap();

    let mut magic = good.clone();
    magic[0] = b'X';
    assert!(matches!(
        checkpoint_error(&magic),
        CheckpointError::BadMagic(_)
    ));

    let mut version = good.clone();
    version[4..8].copy_from_slice(&2u32.to_le_bytes());
    assert_eq!(
        checkpoint_error(&version),
        CheckpointError::VersionMismatch {
            found: 2,
            expected: 1
        }
    );

    assert!(matches!(
        checkpoint_error(&good[..good.len() - 3]),
        CheckpointError::Truncated(_)
    ));
    assert!(matches!(
        checkpoint_error(&good[..6]),
        CheckpointError::Truncated(_)
    ));

    // Append a second copy of the first tensor record.
    let start = count_offset(&good) + 4;
    let name_len = u16::from_le_bytes(good[start..start + 2].try_into().unwrap()) as usize;
    let ndim = good[start + 2 + name_len + 1] as usize;
    let dims_at = start + 2 + name_len + 2;
    let numel: usize = (0..ndim)
        .map(|i| {
            u32::from_le_bytes(
                good[dims_at + 4 * i..dims_at + 4 * i + 4]
                    .try_into()
                    .unwrap(),
            ) as usize
        })
        .product();
    let end = dims_at + 4 * ndim + 8 * numel;
    let mut dup = good.clone();
    dup.extend_from_slice(&good[start..end]);
    let at = count_offset(&good);
    let count = u32::from_le_bytes(good[at..at + 4].try_into().unwrap());
    dup[at..at + 4].copy_from_slice(&(count + 1).to_le_bytes());
    assert!(matches!(
        checkpoint_error(&dup),
        CheckpointError::DuplicateName(_)
    ));

    let mut dtype = good.clone();
    dtype[start + 2 + name_len] = 7;
    assert_eq!(
        checkpoint_error(&dtype),
        CheckpointError::UnsupportedDtype(7)
    );

    let mut missing = good.clone();
    missing[at..at + 4].copy_from_slice(&0u32.to_le_bytes());
    missing.truncate(at + 4);
    assert!(matches!(
        checkpoint_error(&missing),
        CheckpointError::MissingTensor(_)
    ));
}
