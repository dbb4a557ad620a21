use csad_tensor::Tensor;
use rand::Rng;

use super::ClipRecord;
use crate::dsp::{log_mel, stft_samples, MelFilterbank, LOG_FLOOR};
use crate::error::{invalid, Error, Result};
use crate::model::{InputFeature, ModelConfig, ModelInput};

/// Feature of one segment, laid out `[F × T]` (frequency rows).
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureSample {
    Complex { re: Vec<f64>, im: Vec<f64> },
    Real(Vec<f64>),
}

impl FeatureSample {
    fn parts(&self) -> Vec<&[f64]> {
        match self {
            FeatureSample::Complex { re, im } => vec![re, im],
            FeatureSample::Real(x) => vec![x],
        }
    }
}

/// Turns raw segments into network features for one model configuration.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    config: ModelConfig,
    mel: Option<MelFilterbank>,
}

impl FeatureExtractor {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let mel = match config.input_feature {
            InputFeature::LogMel => Some(MelFilterbank::htk(
                config.n_mels,
                config.stft.fft_size,
                config.sample_rate,
            )?),
            _ => None,
        };
        Ok(Self {
            config: config.clone(),
            mel,
        })
    }

    pub fn segment_len(&self) -> usize {
        self.config.segment_len()
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Feature of `samples[..segment_len]`.
    pub fn extract(&self, samples: &[f64]) -> Result<FeatureSample> {
        let need = self.segment_len();
        if samples.len() < need {
            return Err(Error::TooShort {
                what: "segment".into(),
                needed: need,
                got: samples.len(),
            });
        }
        let spec = stft_samples(&samples[..need], &self.config.stft)?;
        debug_assert_eq!(spec.frames(), self.config.frames);
        Ok(match self.config.input_feature {
            InputFeature::Complex => FeatureSample::Complex {
                re: spec.real.data,
                im: spec.imag.data,
            },
            InputFeature::Magnitude => FeatureSample::Real(crate::dsp::magnitude(&spec).data),
            InputFeature::LogMel => {
                let fb = self
                    .mel
                    .as_ref()
                    .expect("log-mel extractor has a filterbank");
                FeatureSample::Real(log_mel(&spec, fb, LOG_FLOOR)?.data)
            }
        })
    }

    /// Consecutive non-overlapping segments; a trailing partial segment is
    /// dropped.
    pub fn tile(&self, samples: &[f64]) -> Result<Vec<FeatureSample>> {
        let need = self.segment_len();
        if samples.len() < need {
            return Err(Error::TooShort {
                what: "clip".into(),
                needed: need,
                got: samples.len(),
            });
        }
        samples
            .chunks_exact(need)
            .map(|s| self.extract(s))
            .collect()
    }
}

/// Stacks features into a `[N, 1, F, T]` network input.
pub fn stack_features(features: &[FeatureSample], config: &ModelConfig) -> Result<ModelInput> {
    if features.is_empty() {
        return Err(invalid("cannot stack an empty feature list"));
    }
    let shape = [features.len(), 1, config.input_height(), config.frames];
    let per = shape[2] * shape[3];
    let width = features[0].parts().len();
    let mut parts = vec![Vec::with_capacity(features.len() * per); width];
    for f in features {
        let p = f.parts();
        if p.len() != width || p.iter().any(|x| x.len() != per) {
            return Err(invalid("features in a batch must share kind and size"));
        }
        for (dst, src) in parts.iter_mut().zip(p) {
            dst.extend_from_slice(src);
        }
    }
    let mut tensors = parts.into_iter().map(|d| Tensor::new(&shape, d));
    Ok(if width == 2 {
        ModelInput::Complex {
            re: tensors.next().expect("re")?,
            im: tensors.next().expect("im")?,
        }
    } else {
        ModelInput::Real(tensors.next().expect("real")?)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: ModelInput,
    pub targets: Vec<usize>,
}

fn random_crop<'a>(record: &'a ClipRecord, len: usize, rng: &mut impl Rng) -> Result<&'a [f64]> {
    let samples = record.clip.samples();
    if samples.len() < len {
        return Err(Error::TooShort {
            what: record.source.clone(),
            needed: len,
            got: samples.len(),
        });
    }
    let start = rng.random_range(0..=samples.len() - len);
    Ok(&samples[start..start + len])
}

/// One uniformly placed segment per record, in record order.
pub fn make_batch(
    records: &[&ClipRecord],
    extractor: &FeatureExtractor,
    rng: &mut impl Rng,
) -> Result<Batch> {
    if records.is_empty() {
        return Err(invalid("a batch needs at least one record"));
    }
    let len = extractor.segment_len();
    let features = records
        .iter()
        .map(|r| extractor.extract(random_crop(r, len, rng)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(Batch {
        features: stack_features(&features, extractor.config())?,
        targets: records.iter().map(|r| r.machine_id).collect(),
    })
}

/// A draw from the flat Dirichlet on `k` categories (normalised Exp(1)
/// variables).
pub fn dirichlet(k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// `Σ alpha[i] · features[i]`; needs one feature per weight.
pub fn mix_features(features: &[FeatureSample], alpha: &[f64]) -> Result<FeatureSample> {
    if features.len() != alpha.len() || features.is_empty() {
        return Err(invalid(format!(
            "mixing needs one feature per id: {} features for {} weights",
            features.len(),
            alpha.len()
        )));
    }
    let combine = |get: &dyn Fn(&FeatureSample) -> Option<&[f64]>| -> Result<Vec<f64>> {
        let first = get(&features[0]).ok_or_else(|| invalid("mixed features differ in kind"))?;
        let mut out = vec![0.0; first.len()];
        for (f, &a) in features.iter().zip(alpha) {
            let x = get(f).ok_or_else(|| invalid("mixed features differ in kind"))?;
            if x.len() != out.len() {
                return Err(invalid("mixed features differ in size"));
            }
            for (o, v) in out.iter_mut().zip(x) {
                *o += a * v;
            }
        }
        Ok(out)
    };
    Ok(match &features[0] {
        FeatureSample::Complex { .. } => FeatureSample::Complex {
            re: combine(&|f| match f {
                FeatureSample::Complex { re, .. } => Some(re),
                _ => None,
            })?,
            im: combine(&|f| match f {
                FeatureSample::Complex { im, .. } => Some(im),
                _ => None,
            })?,
        },
        FeatureSample::Real(_) => FeatureSample::Real(combine(&|f| match f {
            FeatureSample::Real(x) => Some(x),
            _ => None,
        })?),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixupBatch {
    pub features: ModelInput,
    /// Mixing weights `[N, I]`, rows on the simplex.
    pub alpha: Tensor,
}

/// `batch_size` mixtures; each draws a weight vector and one random segment
/// from a random clip of every id. `by_id[i]` lists the clips of id `i`.
pub fn make_mixup_batch(
    by_id: &[Vec<&ClipRecord>],
    batch_size: usize,
    extractor: &FeatureExtractor,
    rng: &mut impl Rng,
) -> Result<MixupBatch> {
    if let Some(id) = by_id.iter().position(|v| v.is_empty()) {
        return Err(invalid(format!(
            "mixup needs clips of every id; id {id} has none"
        )));
    }
    let k = by_id.len();
    let len = extractor.segment_len();
    let mut features = Vec::with_capacity(batch_size);
    let mut alpha = Vec::with_capacity(batch_size * k);
    for _ in 0..batch_size {
        let a = dirichlet(k, rng);
        let parts = by_id
            .iter()
            .map(|clips| {
                let record = clips[rng.random_range(0..clips.len())];
                extractor.extract(random_crop(record, len, rng)?)
            })
            .collect::<Result<Vec<_>>>()?;
        features.push(mix_features(&parts, &a)?);
        alpha.extend(a);
    }
    Ok(MixupBatch {
        features: stack_features(&features, extractor.config())?,
        alpha: Tensor::new(&[batch_size, k], alpha)?,
    })
}
