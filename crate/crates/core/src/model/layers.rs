//! Parameterised layers. Every layer owns its [`Param`]s and binds them to a
//! tape through a [`Ctx`].

use std::cell::RefCell;
use std::collections::BTreeMap;

use csad_tensor::{BatchNormMode, BatchStats, Padding, Param, Tape, Tensor, Var};
use rand::Rng;

use crate::error::Result;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const PRELU_INIT: f64 = 0.25;

/// Whether batch norm uses batch statistics and parameters are recorded as
/// gradient leaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-forward state: the tape, the mode, optional parameter overrides and
/// the batch statistics gathered by training-mode batch norms.
pub struct Ctx<'t, 'o> {
    pub tape: &'t Tape,
    pub mode: Mode,
    overrides: Option<&'o BTreeMap<String, Var<'t>>>,
    stats: RefCell<Vec<(String, BatchStats)>>,
}

impl<'t, 'o> Ctx<'t, 'o> {
    pub fn new(tape: &'t Tape, mode: Mode) -> Self {
        Self {
            tape,
            mode,
            overrides: None,
            stats: RefCell::new(Vec::new()),
        }
    }

    /// Parameters named in `overrides` are read from the given vars instead
    /// of their stored values.
    pub fn with_overrides(
        tape: &'t Tape,
        mode: Mode,
        overrides: &'o BTreeMap<String, Var<'t>>,
    ) -> Self {
        Self {
            overrides: Some(overrides),
            ..Self::new(tape, mode)
        }
    }

    pub fn bind(&self, p: &Param) -> Var<'t> {
        if let Some(v) = self.overrides.and_then(|o| o.get(&p.name)) {
            return *v;
        }
        match self.mode {
            Mode::Train => self.tape.param(p),
            Mode::Eval => self.tape.constant(p.value.clone()),
        }
    }

    pub fn into_stats(self) -> Vec<(String, BatchStats)> {
        self.stats.into_inner()
    }
}

/// Complex activation stored as one real tensor `[N, 2C, H, W]`: channels
/// `0..C` hold the real part, `C..2C` the imaginary part.
#[derive(Clone, Copy)]
pub struct ComplexVar<'t> {
    pub stacked: Var<'t>,
}

impl<'t> ComplexVar<'t> {
    pub fn from_parts(re: Var<'t>, im: Var<'t>) -> Result<Self> {
        Ok(Self {
            stacked: Var::concat(&[re, im], 1)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.stacked.shape()[1] / 2
    }

    pub fn re(&self) -> Result<Var<'t>> {
        Ok(self.stacked.narrow(1, 0, self.channels())?)
    }

    pub fn im(&self) -> Result<Var<'t>> {
        let c = self.channels();
        Ok(self.stacked.narrow(1, c, c)?)
    }

    pub fn abs(&self) -> Result<Var<'t>> {
        Ok(self.re()?.complex_abs(&self.im()?)?)
    }

    pub fn shape(&self) -> Vec<usize> {
        let mut s = self.stacked.shape();
        s[1] /= 2;
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub stride: (usize, usize),
    pub pad: Padding,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let area = kernel.0 * kernel.1;
        let weight = Tensor::xavier_uniform(
            &[out_ch, in_ch, kernel.0, kernel.1],
            in_ch * area,
            out_ch * area,
            rng,
        );
        Self {
            weight: Param::new(format!("{name}.weight"), weight),
            bias: bias.then(|| Param::new(format!("{name}.bias"), Tensor::zeros(&[out_ch]))),
            stride,
            pad: Padding::same(kernel),
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: &Var<'t>) -> Result<Var<'t>> {
        let w = ctx.bind(&self.weight);
        let b = self.bias.as_ref().map(|b| ctx.bind(b));
        Ok(x.conv2d(&w, b.as_ref(), self.stride, self.pad)?)
    }

    pub fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight).chain(&self.bias).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight)
            .chain(&mut self.bias)
            .collect()
    }
}

/// Bias-free complex convolution with kernel `A + iB`, evaluated as one real
/// convolution of `[X; Y]` with the block kernel `[[A, −B], [B, A]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexConv2d {
    pub re: Param,
    pub im: Param,
    pub stride: (usize, usize),
    pub pad: Padding,
}

impl ComplexConv2d {
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        rng: &mut impl Rng,
    ) -> Self {
        let area = kernel.0 * kernel.1;
        let shape = [out_ch, in_ch, kernel.0, kernel.1];
        let re = Tensor::xavier_uniform(&shape, in_ch * area, out_ch * area, rng);
        let im = Tensor::xavier_uniform(&shape, in_ch * area, out_ch * area, rng);
        Self {
            re: Param::new(format!("{name}.re"), re),
            im: Param::new(format!("{name}.im"), im),
            stride,
            pad: Padding::same(kernel),
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, z: &ComplexVar<'t>) -> Result<ComplexVar<'t>> {
        let a = ctx.bind(&self.re);
        let b = ctx.bind(&self.im);
        let top = Var::concat(&[a, b.neg()], 1)?;
        let bottom = Var::concat(&[b, a], 1)?;
        let block = Var::concat(&[top, bottom], 0)?;
        Ok(ComplexVar {
            stacked: z.stacked.conv2d(&block, None, self.stride, self.pad)?,
        })
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.re, &self.im]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.re, &mut self.im]
    }
}

/// Per-channel batch norm with running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub name: String,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            gamma: Param::new(format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: &Var<'t>) -> Result<Var<'t>> {
        let gamma = ctx.bind(&self.gamma);
        let beta = ctx.bind(&self.beta);
        let mode = match ctx.mode {
            Mode::Train => BatchNormMode::Train { eps: BN_EPS },
            Mode::Eval => BatchNormMode::Eval {
                running_mean: self.running_mean.data(),
                running_var: self.running_var.data(),
                eps: BN_EPS,
            },
        };
        let (y, stats) = x.batchnorm2d(&gamma, &beta, mode)?;
        if let Some(stats) = stats {
            ctx.stats.borrow_mut().push((self.name.clone(), stats));
        }
        Ok(y)
    }

    /// Momentum update of the running estimates. The running variance uses
    /// the unbiased batch variance.
    pub fn update(&mut self, stats: &BatchStats) {
        let m = BN_MOMENTUM;
        let correction = stats.count as f64 / (stats.count as f64 - 1.0);
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = (1.0 - m) * *r + m * b * correction;
        }
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor)> {
        vec![
            (format!("{}.running_mean", self.name), &self.running_mean),
            (format!("{}.running_var", self.name), &self.running_var),
        ]
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            (
                format!("{}.running_mean", self.name),
                &mut self.running_mean,
            ),
            (format!("{}.running_var", self.name), &mut self.running_var),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PRelu {
    pub slope: Param,
}

impl PRelu {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            slope: Param::new(
                format!("{name}.slope"),
                Tensor::full(&[channels], PRELU_INIT),
            ),
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: &Var<'t>) -> Result<Var<'t>> {
        Ok(x.prelu(&ctx.bind(&self.slope))?)
    }
}

/// Conv → batch norm → PReLU block on real input.
#[derive(Debug, Clone, PartialEq)]
pub struct RealBlock {
    pub conv: Conv2d,
    pub bn: BatchNorm,
    pub act: PRelu,
}

impl RealBlock {
    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: &Var<'t>) -> Result<Var<'t>> {
        let y = self.conv.forward(ctx, x)?;
        let y = self.bn.forward(ctx, &y)?;
        self.act.forward(ctx, &y)
    }
}

/// Complex conv followed by batch norm and PReLU applied separately to the
/// real and imaginary parts. Norm and activation parameters have `2C`
/// entries laid out `[real; imag]`, matching [`ComplexVar`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexBlock {
    pub conv: ComplexConv2d,
    pub bn: BatchNorm,
    pub act: PRelu,
}

impl ComplexBlock {
    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, z: &ComplexVar<'t>) -> Result<ComplexVar<'t>> {
        let y = self.conv.forward(ctx, z)?;
        let y = self.bn.forward(ctx, &y.stacked)?;
        Ok(ComplexVar {
            stacked: self.act.forward(ctx, &y)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                Tensor::xavier_uniform(&[d_out, d_in], d_in, d_out, rng),
            ),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[d_out])),
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: &Var<'t>) -> Result<Var<'t>> {
        Ok(x.linear(&ctx.bind(&self.weight), Some(&ctx.bind(&self.bias)))?)
    }
}

/// Channel attention over `F_t`: conv → global pool → FC → ReLU → FC →
/// softmax over channels, then `F_out = A ⊙ F_t + F_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub conv: Conv2d,
    pub fc1: Linear,
    pub fc2: Linear,
}

pub struct AttentionOutput<'t> {
    /// `[N, 2C]`, each row sums to one.
    pub weights: Var<'t>,
    pub output: Var<'t>,
}

impl Attention {
    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, f_t: &Var<'t>) -> Result<AttentionOutput<'t>> {
        let h = self.conv.forward(ctx, f_t)?.global_avg_pool()?;
        let h = self.fc1.forward(ctx, &h)?.relu();
        let weights = self.fc2.forward(ctx, &h)?.softmax(1)?;
        let output = f_t.scale_channels(&weights)?.add(f_t)?;
        Ok(AttentionOutput { weights, output })
    }
}
