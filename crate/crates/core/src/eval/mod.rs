//! Anomaly scores, ROC-AUC and embedding export.

mod auc;
mod io;

use std::thread;

use csad_tensor::Tape;

pub use auc::{roc_auc, AucReport, AucRow};
pub use io::{read_scores, write_embeddings, write_scores};

use crate::data::{stack_features, ClipRecord, Condition, FeatureExtractor, FeatureSample};
use crate::error::{invalid, Error, Result};
use crate::model::{Mode, Model};

/// Anomaly score of one clip; higher is more anomalous.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub source: String,
    pub machine_type: String,
    pub machine_id: usize,
    pub condition: Condition,
    /// Mean of `segment_scores`.
    pub score: f64,
    pub segment_scores: Vec<f64>,
}

/// `−ln softmax(logits)[id]`, via log-sum-exp.
pub fn score_from_logits(logits: &[f64], id: usize) -> Result<f64> {
    if id >= logits.len() {
        return Err(invalid(format!(
            "machine id {id} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    // Clamp rounding noise at a one-hot head.
    Ok((lse - logits[id]).max(0.0))
}

/// Total-head logits `[N × I]` for a list of segments, in eval mode.
pub fn total_logits(model: &Model, segments: &[FeatureSample]) -> Result<Vec<Vec<f64>>> {
    let input = stack_features(segments, model.config())?;
    let tape = Tape::new();
    let out = model.forward(&tape, &input, Mode::Eval)?.output;
    let logits = out.logits_t.value();
    if !logits.is_finite() {
        return Err(Error::Numeric("non-finite logits while scoring".into()));
    }
    let k = model.config().num_classes;
    Ok(logits.data().chunks(k).map(<[f64]>::to_vec).collect())
}

/// Score of a single segment against its true machine id.
pub fn segment_score(model: &Model, segment: &FeatureSample, true_id: usize) -> Result<f64> {
    let logits = total_logits(model, std::slice::from_ref(segment))?;
    score_from_logits(&logits[0], true_id)
}

/// Tiles the clip into non-overlapping segments, scores each and averages.
pub fn clip_score(
    model: &Model,
    extractor: &FeatureExtractor,
    record: &ClipRecord,
) -> Result<ScoreRecord> {
    let segments = extractor.tile(record.clip.samples()).map_err(|e| match e {
        Error::TooShort { needed, got, .. } => Error::TooShort {
            what: record.source.clone(),
            needed,
            got,
        },
        other => other,
    })?;
    let segment_scores = total_logits(model, &segments)?
        .iter()
        .map(|l| score_from_logits(l, record.machine_id))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreRecord {
        source: record.source.clone(),
        machine_type: record.machine_type.clone(),
        machine_id: record.machine_id,
        condition: record.condition,
        score: segment_scores.iter().sum::<f64>() / segment_scores.len() as f64,
        segment_scores,
    })
}

/// Scores every record, splitting the list over `threads` workers. Output
/// order and values do not depend on the thread count.
pub fn score_records(
    model: &Model,
    records: &[ClipRecord],
    threads: usize,
) -> Result<Vec<ScoreRecord>> {
    let extractor = FeatureExtractor::new(model.config())?;
    let threads = threads.clamp(1, records.len().max(1));
    if threads == 1 {
        return records
            .iter()
            .map(|r| clip_score(model, &extractor, r))
            .collect();
    }
    let chunk = records.len().div_ceil(threads);
    thread::scope(|s| {
        let handles: Vec<_> = records
            .chunks(chunk)
            .map(|part| {
                let extractor = &extractor;
                s.spawn(move || {
                    part.iter()
                        .map(|r| clip_score(model, extractor, r))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(records.len());
        for h in handles {
            out.extend(h.join().expect("scoring thread panicked")?);
        }
        Ok(out)
    })
}

/// Mean pooled Total-head embedding over the clip's segments.
pub fn clip_embedding(
    model: &Model,
    extractor: &FeatureExtractor,
    record: &ClipRecord,
) -> Result<Vec<f64>> {
    let logits = total_logits(model, &extractor.tile(record.clip.samples())?)?;
    let mut mean = vec![0.0; model.config().num_classes];
    for row in &logits {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / logits.len() as f64;
        }
    }
    Ok(mean)
}
