//! The anomaly-detection network: a five-block complex encoder, magnitude
//! and complex branches, channel attention fusion and three pooled heads,
//! plus the real-input ablation variants.

mod layers;

use std::collections::BTreeMap;

use csad_tensor::{BatchStats, Gradients, Param, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use layers::{
    Attention, AttentionOutput, BatchNorm, ComplexBlock, ComplexConv2d, ComplexVar, Conv2d, Ctx,
    Linear, Mode, PRelu, RealBlock, BN_EPS, BN_MOMENTUM, PRELU_INIT,
};

use crate::dsp::StftConfig;
use crate::error::{invalid, CheckpointError, Error, Result};

/// Which spectral representation the network consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputFeature {
    Complex,
    Magnitude,
    LogMel,
}

impl InputFeature {
    pub fn name(self) -> &'static str {
        match self {
            InputFeature::Complex => "complex",
            InputFeature::Magnitude => "magnitude",
            InputFeature::LogMel => "log-mel",
        }
    }
}

impl std::str::FromStr for InputFeature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complex" => Ok(InputFeature::Complex),
            "magnitude" => Ok(InputFeature::Magnitude),
            "log-mel" => Ok(InputFeature::LogMel),
            other => Err(invalid(format!(
                "unknown feature {other:?}; expected complex, magnitude or log-mel"
            ))),
        }
    }
}

/// Kernel and stride as (frequency, time), plus output channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub channels: usize,
}

const fn layer(kernel: (usize, usize), stride: (usize, usize), channels: usize) -> LayerSpec {
    LayerSpec {
        kernel,
        stride,
        channels,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_feature: InputFeature,
    pub attention: bool,
    /// Number of machine ids; also the channel count of every head.
    pub num_classes: usize,
    pub encoder: Vec<LayerSpec>,
    pub branch_kernel: (usize, usize),
    pub branch_stride: (usize, usize),
    pub attention_kernel: (usize, usize),
    pub attention_stride: (usize, usize),
    /// Hidden width of the attention MLP relative to its input.
    pub attention_expansion: usize,
    pub freq_bins: usize,
    pub n_mels: usize,
    pub frames: usize,
    pub sample_rate: u32,
    pub stft: StftConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_feature: InputFeature::Complex,
            attention: true,
            num_classes: 4,
            encoder: vec![
                layer((7, 5), (2, 2), 45),
                layer((7, 5), (2, 2), 90),
                layer((5, 3), (2, 2), 90),
                layer((5, 3), (2, 2), 90),
                layer((5, 2), (2, 1), 45),
            ],
            branch_kernel: (5, 1),
            branch_stride: (2, 1),
            attention_kernel: (3, 1),
            attention_stride: (2, 1),
            attention_expansion: 4,
            freq_bins: 513,
            n_mels: 128,
            frames: 64,
            sample_rate: 16000,
            stft: StftConfig::default(),
        }
    }
}

impl ModelConfig {
    /// A small network on 33 × 8 spectrograms, used for gradient checks.
    pub fn reduced() -> Self {
        let base = Self::default();
        let channels = [6, 12, 12, 12, 6];
        Self {
            encoder: base
                .encoder
                .iter()
                .zip(channels)
                .map(|(l, c)| LayerSpec { channels: c, ..*l })
                .collect(),
            freq_bins: 33,
            n_mels: 16,
            frames: 8,
            stft: StftConfig {
                fft_size: 64,
                win_len: 64,
                hop: 32,
            },
            ..base
        }
    }

    pub fn with_feature(mut self, feature: InputFeature) -> Self {
        self.input_feature = feature;
        self
    }

    /// Frequency size of the network input.
    pub fn input_height(&self) -> usize {
        match self.input_feature {
            InputFeature::LogMel => self.n_mels,
            _ => self.freq_bins,
        }
    }

    /// Samples needed for one input segment of `frames` STFT frames.
    pub fn segment_len(&self) -> usize {
        self.stft.span(self.frames)
    }

    pub fn num_heads(&self) -> usize {
        match self.input_feature {
            InputFeature::Complex => 3,
            _ => 1,
        }
    }

    /// Spatial size after each encoder block.
    pub fn encoder_shapes(&self) -> Result<Vec<(usize, usize)>> {
        let mut size = (self.input_height(), self.frames);
        let mut out = Vec::with_capacity(self.encoder.len());
        for (i, l) in self.encoder.iter().enumerate() {
            size = conv_size(size, l.kernel, l.stride).ok_or_else(|| {
                invalid(format!(
                    "encoder block {} does not fit input {size:?}",
                    i + 1
                ))
            })?;
            out.push(size);
        }
        Ok(out)
    }

    /// Spatial size of the branch outputs `F_m`, `F_c`, `F_t` and `T`.
    pub fn branch_shape(&self) -> Result<(usize, usize)> {
        let last = *self
            .encoder_shapes()?
            .last()
            .ok_or_else(|| invalid("encoder has no blocks"))?;
        conv_size(last, self.branch_kernel, self.branch_stride).ok_or_else(|| {
            invalid(format!(
                "branch kernel does not fit encoder output {last:?}"
            ))
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(invalid(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.encoder.iter().any(|l| l.channels == 0) || self.attention_expansion == 0 {
            return Err(invalid("channel counts must be positive"));
        }
        if self.stft.freq_bins() != self.freq_bins {
            return Err(invalid(format!(
                "freq_bins {} does not match fft_size {}",
                self.freq_bins, self.stft.fft_size
            )));
        }
        if self.frames == 0 || self.sample_rate == 0 {
            return Err(invalid("frames and sample_rate must be positive"));
        }
        let branch = self.branch_shape()?;
        if self.attention && self.input_feature == InputFeature::Complex {
            conv_size(branch, self.attention_kernel, self.attention_stride)
                .ok_or_else(|| invalid(format!("attention kernel does not fit {branch:?}")))?;
        }
        Ok(())
    }
}

fn conv_size(
    input: (usize, usize),
    kernel: (usize, usize),
    stride: (usize, usize),
) -> Option<(usize, usize)> {
    csad_tensor::conv2d_output_size(input, kernel, stride, csad_tensor::Padding::same(kernel))
}

/// Network input, each part `[N, 1, F, T]`.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelInput {
    Complex { re: Tensor, im: Tensor },
    Real(Tensor),
}

impl ModelInput {
    pub fn batch_size(&self) -> usize {
        match self {
            ModelInput::Complex { re, .. } => re.shape()[0],
            ModelInput::Real(x) => x.shape()[0],
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            ModelInput::Complex { re, .. } => re.shape(),
            ModelInput::Real(x) => x.shape(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            ModelInput::Complex { re, im } => re.is_finite() && im.is_finite(),
            ModelInput::Real(x) => x.is_finite(),
        }
    }

    /// Selects samples `start..start + len` of the batch.
    pub fn slice(&self, start: usize, len: usize) -> ModelInput {
        let cut = |t: &Tensor| {
            let per: usize = t.shape()[1..].iter().product();
            let mut shape = t.shape().to_vec();
            shape[0] = len;
            Tensor::new(&shape, t.data()[start * per..(start + len) * per].to_vec())
                .expect("slice shape")
        };
        match self {
            ModelInput::Complex { re, im } => ModelInput::Complex {
                re: cut(re),
                im: cut(im),
            },
            ModelInput::Real(x) => ModelInput::Real(cut(x)),
        }
    }
}

/// Logits and intermediate feature maps of one forward pass. In the real
/// ablation modes the single head is copied into all three logit slots and
/// the complex-only intermediates are `None`.
pub struct ModelOutput<'t> {
    pub logits_m: Var<'t>,
    pub logits_c: Var<'t>,
    pub logits_t: Var<'t>,
    /// Pooled Total features `[N, I]`; identical to `logits_t`.
    pub embedding_t: Var<'t>,
    pub encoded: Option<ComplexVar<'t>>,
    pub f_m: Option<Var<'t>>,
    pub f_c: Option<Var<'t>>,
    pub f_t: Option<Var<'t>>,
    pub attention_weights: Option<Var<'t>>,
    pub f_out: Option<Var<'t>>,
    pub total: Option<Var<'t>>,
    /// Output of the real trunk, before the head conv.
    pub trunk: Option<Var<'t>>,
    pub num_heads: usize,
}

impl<'t> ModelOutput<'t> {
    /// The distinct heads that enter the training loss.
    pub fn heads(&self) -> Vec<Var<'t>> {
        if self.num_heads == 3 {
            vec![self.logits_m, self.logits_c, self.logits_t]
        } else {
            vec![self.logits_t]
        }
    }
}

/// Training targets: machine ids, or mixing weights `[N, I]` for mixup.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Ids(&'a [usize]),
    Mixture(&'a Tensor),
}

/// Sum over heads of cross-entropy against the ids, or of KL divergence
/// against the mixing weights.
pub fn training_loss<'t>(output: &ModelOutput<'t>, targets: Targets<'_>) -> Result<Var<'t>> {
    let mut total: Option<Var<'t>> = None;
    for head in output.heads() {
        let loss = match targets {
            Targets::Ids(ids) => head.cross_entropy(ids)?,
            Targets::Mixture(alpha) => head.kl_div(alpha)?,
        };
        total = Some(match total {
            Some(t) => t.add(&loss)?,
            None => loss,
        });
    }
    Ok(total.expect("at least one head"))
}

#[derive(Debug, Clone, PartialEq)]
enum Trunk {
    Complex {
        encoder: Vec<ComplexBlock>,
        branch_m: Conv2d,
        branch_c: Conv2d,
        attention: Option<Attention>,
        total: Conv2d,
    },
    Real {
        encoder: Vec<RealBlock>,
        head: Conv2d,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    trunk: Trunk,
}

/// Result of [`Model::forward`]: the outputs plus the batch statistics to
/// feed to [`Model::apply_batch_stats`] after a training step.
pub struct ForwardPass<'t> {
    pub output: ModelOutput<'t>,
    pub batch_stats: Vec<(String, BatchStats)>,
}

impl Model {
    /// Freshly initialised network; `seed` fixes every initial weight.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = config.num_classes;
        let trunk = match config.input_feature {
            InputFeature::Complex => {
                let mut encoder = Vec::new();
                let mut in_ch = 1;
                for (i, l) in config.encoder.iter().enumerate() {
                    let name = format!("enc{}", i + 1);
                    encoder.push(ComplexBlock {
                        conv: ComplexConv2d::new(
                            &format!("{name}.conv"),
                            in_ch,
                            l.channels,
                            l.kernel,
                            l.stride,
                            &mut rng,
                        ),
                        bn: BatchNorm::new(&format!("{name}.bn"), 2 * l.channels),
                        act: PRelu::new(&format!("{name}.prelu"), 2 * l.channels),
                    });
                    in_ch = l.channels;
                }
                let (k, s) = (config.branch_kernel, config.branch_stride);
                let branch_m = Conv2d::new("branch_m", in_ch, classes, k, s, true, &mut rng);
                let branch_c = Conv2d::new("branch_c", 2 * in_ch, classes, k, s, true, &mut rng);
                let fused = 2 * classes;
                let attention = config.attention.then(|| Attention {
                    conv: Conv2d::new(
                        "attention.conv",
                        fused,
                        fused,
                        config.attention_kernel,
                        config.attention_stride,
                        true,
                        &mut rng,
                    ),
                    fc1: Linear::new(
                        "attention.fc1",
                        fused,
                        fused * config.attention_expansion,
                        &mut rng,
                    ),
                    fc2: Linear::new(
                        "attention.fc2",
                        fused * config.attention_expansion,
                        fused,
                        &mut rng,
                    ),
                });
                let total = Conv2d::new("total", fused, classes, (1, 1), (1, 1), true, &mut rng);
                Trunk::Complex {
                    encoder,
                    branch_m,
                    branch_c,
                    attention,
                    total,
                }
            }
            InputFeature::Magnitude | InputFeature::LogMel => {
                let mut encoder = Vec::new();
                let mut in_ch = 1;
                for (i, l) in config.encoder.iter().enumerate() {
                    let name = format!("enc{}", i + 1);
                    encoder.push(RealBlock {
                        conv: Conv2d::new(
                            &format!("{name}.conv"),
                            in_ch,
                            l.channels,
                            l.kernel,
                            l.stride,
                            false,
                            &mut rng,
                        ),
                        bn: BatchNorm::new(&format!("{name}.bn"), l.channels),
                        act: PRelu::new(&format!("{name}.prelu"), l.channels),
                    });
                    in_ch = l.channels;
                }
                let head = Conv2d::new(
                    "head",
                    in_ch,
                    classes,
                    config.branch_kernel,
                    config.branch_stride,
                    true,
                    &mut rng,
                );
                Trunk::Real { encoder, head }
            }
        };
        Ok(Self { config, trunk })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        input: &ModelInput,
        mode: Mode,
    ) -> Result<ForwardPass<'t>> {
        let ctx = Ctx::new(tape, mode);
        let output = self.forward_ctx(&ctx, input)?;
        Ok(ForwardPass {
            output,
            batch_stats: ctx.into_stats(),
        })
    }

    /// Forward pass with caller-managed context, e.g. to substitute
    /// parameter values for gradient checking.
    pub fn forward_ctx<'t>(
        &self,
        ctx: &Ctx<'t, '_>,
        input: &ModelInput,
    ) -> Result<ModelOutput<'t>> {
        let tape = ctx.tape;
        let expected_hw = [self.config.input_height(), self.config.frames];
        let check = |t: &Tensor| -> Result<()> {
            let s = t.shape();
            if s.len() != 4 || s[0] == 0 || s[1] != 1 || s[2..] != expected_hw {
                return Err(invalid(format!(
                    "{} model expects input [N, 1, {}, {}], got {:?}",
                    self.config.input_feature.name(),
                    expected_hw[0],
                    expected_hw[1],
                    s
                )));
            }
            Ok(())
        };
        match (&self.trunk, input) {
            (
                Trunk::Complex {
                    encoder,
                    branch_m,
                    branch_c,
                    attention,
                    total,
                },
                ModelInput::Complex { re, im },
            ) => {
                check(re)?;
                check(im)?;
                let mut z =
                    ComplexVar::from_parts(tape.constant(re.clone()), tape.constant(im.clone()))?;
                for block in encoder {
                    z = block.forward(ctx, &z)?;
                }
                let f_m = branch_m.forward(ctx, &z.abs()?)?;
                let f_c = branch_c.forward(ctx, &z.stacked)?;
                let f_t = Var::concat(&[f_m, f_c], 1)?;
                let (attention_weights, f_out) = match attention {
                    Some(att) => {
                        let a = att.forward(ctx, &f_t)?;
                        (Some(a.weights), a.output)
                    }
                    None => (None, f_t),
                };
                let t = total.forward(ctx, &f_out)?;
                let logits_t = t.global_avg_pool()?;
                Ok(ModelOutput {
                    logits_m: f_m.global_avg_pool()?,
                    logits_c: f_c.global_avg_pool()?,
                    logits_t,
                    embedding_t: logits_t,
                    encoded: Some(z),
                    f_m: Some(f_m),
                    f_c: Some(f_c),
                    f_t: Some(f_t),
                    attention_weights,
                    f_out: Some(f_out),
                    total: Some(t),
                    trunk: None,
                    num_heads: 3,
                })
            }
            (Trunk::Real { encoder, head }, ModelInput::Real(x)) => {
                check(x)?;
                let mut h = tape.constant(x.clone());
                for block in encoder {
                    h = block.forward(ctx, &h)?;
                }
                let logits = head.forward(ctx, &h)?.global_avg_pool()?;
                Ok(ModelOutput {
                    logits_m: logits,
                    logits_c: logits,
                    logits_t: logits,
                    embedding_t: logits,
                    encoded: None,
                    f_m: None,
                    f_c: None,
                    f_t: None,
                    attention_weights: None,
                    f_out: None,
                    total: None,
                    trunk: Some(h),
                    num_heads: 1,
                })
            }
            _ => Err(invalid(format!(
                "{} model cannot take a {} input",
                self.config.input_feature.name(),
                match input {
                    ModelInput::Complex { .. } => "complex",
                    ModelInput::Real(_) => "real",
                }
            ))),
        }
    }

    fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm> {
        match &mut self.trunk {
            Trunk::Complex { encoder, .. } => encoder.iter_mut().map(|b| &mut b.bn).collect(),
            Trunk::Real { encoder, .. } => encoder.iter_mut().map(|b| &mut b.bn).collect(),
        }
    }

    fn batch_norms(&self) -> Vec<&BatchNorm> {
        match &self.trunk {
            Trunk::Complex { encoder, .. } => encoder.iter().map(|b| &b.bn).collect(),
            Trunk::Real { encoder, .. } => encoder.iter().map(|b| &b.bn).collect(),
        }
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn apply_batch_stats(&mut self, stats: &[(String, BatchStats)]) -> Result<()> {
        let mut norms = self.batch_norms_mut();
        for (name, s) in stats {
            let bn = norms
                .iter_mut()
                .find(|bn| &bn.name == name)
                .ok_or_else(|| invalid(format!("no batch norm named {name}")))?;
            bn.update(s);
        }
        Ok(())
    }

    /// Learnable parameters in a fixed order.
    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        match &self.trunk {
            Trunk::Complex {
                encoder,
                branch_m,
                branch_c,
                attention,
                total,
            } => {
                for b in encoder {
                    out.extend(b.conv.params());
                    out.extend([&b.bn.gamma, &b.bn.beta, &b.act.slope]);
                }
                out.extend(branch_m.params());
                out.extend(branch_c.params());
                if let Some(a) = attention {
                    out.extend(a.conv.params());
                    out.extend([&a.fc1.weight, &a.fc1.bias, &a.fc2.weight, &a.fc2.bias]);
                }
                out.extend(total.params());
            }
            Trunk::Real { encoder, head } => {
                for b in encoder {
                    out.extend(b.conv.params());
                    out.extend([&b.bn.gamma, &b.bn.beta, &b.act.slope]);
                }
                out.extend(head.params());
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        match &mut self.trunk {
            Trunk::Complex {
                encoder,
                branch_m,
                branch_c,
                attention,
                total,
            } => {
                for b in encoder {
                    out.extend(b.conv.params_mut());
                    out.extend([&mut b.bn.gamma, &mut b.bn.beta, &mut b.act.slope]);
                }
                out.extend(branch_m.params_mut());
                out.extend(branch_c.params_mut());
                if let Some(a) = attention {
                    out.extend(a.conv.params_mut());
                    out.extend([
                        &mut a.fc1.weight,
                        &mut a.fc1.bias,
                        &mut a.fc2.weight,
                        &mut a.fc2.bias,
                    ]);
                }
                out.extend(total.params_mut());
            }
            Trunk::Real { encoder, head } => {
                for b in encoder {
                    out.extend(b.conv.params_mut());
                    out.extend([&mut b.bn.gamma, &mut b.bn.beta, &mut b.act.slope]);
                }
                out.extend(head.params_mut());
            }
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.value.numel()).sum()
    }

    /// Adds the gradient of every parameter from a backward pass. Every
    /// parameter must have been used.
    pub fn accumulate_grads(&mut self, grads: &Gradients) -> Result<()> {
        for p in self.params_mut() {
            if !grads.accumulate_into(p)? {
                return Err(Error::Numeric(format!(
                    "parameter {} received no gradient",
                    p.name
                )));
            }
        }
        Ok(())
    }

    /// Parameters followed by batch-norm running statistics.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .params()
            .into_iter()
            .map(|p| (p.name.clone(), &p.value))
            .collect();
        for bn in self.batch_norms() {
            out.extend(bn.buffers());
        }
        out
    }

    /// Overwrites every named tensor from `tensors`; shapes must match.
    pub fn load_tensors(&mut self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let fetch = |name: &str, current: &Tensor| -> Result<Tensor> {
            let t = tensors
                .get(name)
                .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))?;
            if t.shape() != current.shape() {
                return Err(CheckpointError::TensorShape {
                    name: name.to_string(),
                    expected: current.shape().to_vec(),
                    got: t.shape().to_vec(),
                }
                .into());
            }
            Ok(t.clone())
        };
        for p in self.params_mut() {
            p.value = fetch(&p.name, &p.value)?;
            p.grad = None;
        }
        for bn in self.batch_norms_mut() {
            for (name, t) in bn.buffers_mut() {
                *t = fetch(&name, t)?;
            }
        }
        Ok(())
    }
}
