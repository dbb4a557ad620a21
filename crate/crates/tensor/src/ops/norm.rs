use crate::error::{invalid, Result};
use crate::tape::Var;
use crate::tensor::Tensor;

/// How [`Var::batchnorm2d`] obtains its normalisation statistics.
#[derive(Debug, Clone, Copy)]
pub enum BatchNormMode<'a> {
    /// Batch mean and biased batch variance, per channel.
    Train { eps: f64 },
    /// Frozen running statistics.
    Eval {
        running_mean: &'a [f64],
        running_var: &'a [f64],
        eps: f64,
    },
}

/// Per-channel statistics of one training-mode batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (divide-by-count) variance.
    pub var: Vec<f64>,
    /// Elements per channel (`N · H · W`).
    pub count: usize,
}

impl<'t> Var<'t> {
    /// Per-channel normalisation of `[N, C, ...]` followed by the affine
    /// `gamma · x̂ + beta`. Training mode also returns the batch statistics so
    /// the caller can update its running estimates.
    pub fn batchnorm2d(
        &self,
        gamma: &Var<'t>,
        beta: &Var<'t>,
        mode: BatchNormMode<'_>,
    ) -> Result<(Var<'t>, Option<BatchStats>)> {
        let x = self.value();
        if x.ndim() < 2 {
            return Err(invalid(format!(
                "batchnorm2d needs [N, C, ...], got {:?}",
                x.shape()
            )));
        }
        let (n, c) = (x.shape()[0], x.shape()[1]);
        let inner: usize = x.shape()[2..].iter().product();
        let count = n * inner;
        let (gamma_v, beta_v) = (gamma.value(), beta.value());
        gamma_v.expect_shape("batchnorm2d gamma", &[c])?;
        beta_v.expect_shape("batchnorm2d beta", &[c])?;

        let channel = move |ch: usize| {
            (0..n).flat_map(move |s| {
                let start = (s * c + ch) * inner;
                start..start + inner
            })
        };

        let (mean, var, eps, stats) = match mode {
            BatchNormMode::Train { eps } => {
                if count < 2 {
                    return Err(invalid(format!(
                        "batchnorm2d in train mode needs N·H·W >= 2 per channel, got {count}"
                    )));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let m = channel(ch).map(|i| x.data()[i]).sum::<f64>() / count as f64;
                    let v =
                        channel(ch).map(|i| (x.data()[i] - m).powi(2)).sum::<f64>() / count as f64;
                    mean[ch] = m;
                    var[ch] = v;
                }
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                    count,
                };
                (mean, var, eps, Some(stats))
            }
            BatchNormMode::Eval {
                running_mean,
                running_var,
                eps,
            } => {
                if running_mean.len() != c || running_var.len() != c {
                    return Err(invalid(format!(
                        "running statistics hold {} / {} channels, input has {c}",
                        running_mean.len(),
                        running_var.len()
                    )));
                }
                (running_mean.to_vec(), running_var.to_vec(), eps, None)
            }
        };
        let train = stats.is_some();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; x.numel()];
        let mut out = vec![0.0; x.numel()];
        for ch in 0..c {
            let (g, b) = (gamma_v.data()[ch], beta_v.data()[ch]);
            for i in channel(ch) {
                let xh = (x.data()[i] - mean[ch]) * inv_std[ch];
                xhat[i] = xh;
                out[i] = g * xh + b;
            }
        }
        let out = Tensor::new(x.shape(), out)?;
        let var_out = self
            .tape()
            .record(out, &[*self, *gamma, *beta], move |grad, needs| {
                let mut sum_dy = vec![0.0; c];
                let mut sum_dy_xhat = vec![0.0; c];
                for ch in 0..c {
                    for i in channel(ch) {
                        sum_dy[ch] += grad[i];
                        sum_dy_xhat[ch] += grad[i] * xhat[i];
                    }
                }
                let gx = needs[0].then(|| {
                    let mut gx = vec![0.0; xhat.len()];
                    for ch in 0..c {
                        let scale = gamma_v.data()[ch] * inv_std[ch];
                        for i in channel(ch) {
                            gx[i] = if train {
                                scale
                                    * (grad[i]
                                        - sum_dy[ch] / count as f64
                                        - xhat[i] * sum_dy_xhat[ch] / count as f64)
                            } else {
                                scale * grad[i]
                            };
                        }
                    }
                    gx
                });
                vec![
                    gx,
                    needs[1].then_some(sum_dy_xhat),
                    needs[2].then_some(sum_dy),
                ]
            });
        Ok((var_out, stats))
    }
}
