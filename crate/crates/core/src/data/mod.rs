//! Clip records, the synthetic machine-sound generator, MIMII directory
//! ingestion and batch construction.

mod batch;
mod manifest;
mod mimii;
mod synth;

use std::fmt;
use std::str::FromStr;

pub use batch::{
    dirichlet, make_batch, make_mixup_batch, mix_features, stack_features, Batch, FeatureExtractor,
    FeatureSample, MixupBatch,
};
pub use manifest::{load_dataset, load_manifest, write_dataset, MANIFEST_FILE};
pub use mimii::mimii_scan;
pub use synth::{
    clip_seed, synth_clip, synth_generate, synth_generate_range, AnomalyKind, SynthSpec,
};

use crate::dsp::AudioClip;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    Normal,
    Anomaly,
    Unknown,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Normal => "normal",
            Condition::Anomaly => "anomaly",
            Condition::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Condition::Normal),
            "anomaly" | "abnormal" => Ok(Condition::Anomaly),
            "unknown" => Ok(Condition::Unknown),
            other => Err(invalid(format!("unknown condition {other:?}"))),
        }
    }
}

/// One labelled clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub clip: AudioClip,
    pub machine_type: String,
    pub machine_id: usize,
    pub condition: Condition,
    pub anomaly_kind: Option<AnomalyKind>,
    /// File path or synthesis descriptor.
    pub source: String,
}

/// Distinct machine ids present, sorted.
pub fn machine_ids(records: &[ClipRecord]) -> Vec<usize> {
    let mut ids: Vec<usize> = records.iter().map(|r| r.machine_id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}
