use crate::error::{invalid, Result, TensorError};
use crate::gemm::gemm;
use crate::tape::Var;
use crate::tensor::Tensor;

impl<'t> Var<'t> {
    /// Mean over the spatial axes: `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&self) -> Result<Var<'t>> {
        let x = self.value();
        if x.ndim() != 4 {
            return Err(invalid(format!(
                "global_avg_pool needs [N, C, H, W], got {:?}",
                x.shape()
            )));
        }
        let (n, c) = (x.shape()[0], x.shape()[1]);
        let area = x.shape()[2] * x.shape()[3];
        if area == 0 {
            return Err(invalid("global_avg_pool over an empty spatial extent"));
        }
        let out: Vec<f64> = x
            .data()
            .chunks(area)
            .map(|plane| plane.iter().sum::<f64>() / area as f64)
            .collect();
        let out = Tensor::new(&[n, c], out)?;
        Ok(self.tape().record(out, &[*self], move |g, _| {
            let share = 1.0 / area as f64;
            vec![Some(
                g.iter()
                    .flat_map(|&v| std::iter::repeat_n(v * share, area))
                    .collect(),
            )]
        }))
    }

    /// Multiplies every `[H, W]` plane of `[N, C, H, W]` by the matching
    /// entry of `weights: [N, C]`.
    pub fn scale_channels(&self, weights: &Var<'t>) -> Result<Var<'t>> {
        let x = self.value();
        let w = weights.value();
        if x.ndim() != 4 || w.shape() != &x.shape()[..2] {
            return Err(TensorError::ShapeMismatch {
                op: "scale_channels",
                expected: x.shape()[..2.min(x.ndim())].to_vec(),
                got: w.shape().to_vec(),
            });
        }
        let area = x.shape()[2] * x.shape()[3];
        let out = Tensor::from_fn(x.shape(), |i| x.data()[i] * w.data()[i / area]);
        Ok(self
            .tape()
            .record(out, &[*self, *weights], move |g, needs| {
                let gx = needs[0].then(|| {
                    g.iter()
                        .enumerate()
                        .map(|(i, g)| g * w.data()[i / area])
                        .collect()
                });
                let gw = needs[1].then(|| {
                    g.chunks(area)
                        .zip(x.data().chunks(area))
                        .map(|(gp, xp)| gp.iter().zip(xp).map(|(a, b)| a * b).sum())
                        .collect()
                });
                vec![gx, gw]
            }))
    }

    /// Affine map `x · Wᵀ + b` for `x: [N, D_in]`, `W: [D_out, D_in]`, `b: [D_out]`.
    pub fn linear(&self, weight: &Var<'t>, bias: Option<&Var<'t>>) -> Result<Var<'t>> {
        let x = self.value();
        let w = weight.value();
        if x.ndim() != 2 || w.ndim() != 2 || x.shape()[1] != w.shape()[1] {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                expected: vec![
                    w.shape().first().copied().unwrap_or(0),
                    x.shape().last().copied().unwrap_or(0),
                ],
                got: w.shape().to_vec(),
            });
        }
        let (n, din, dout) = (x.shape()[0], x.shape()[1], w.shape()[0]);
        let bias_value = bias.map(|b| b.value());
        let mut out = vec![0.0; n * dout];
        if let Some(b) = &bias_value {
            b.expect_shape("linear bias", &[dout])?;
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(b.data());
            }
        }
        gemm(
            n,
            din,
            dout,
            1.0,
            x.data(),
            false,
            w.data(),
            true,
            1.0,
            &mut out,
        );
        let out = Tensor::new(&[n, dout], out)?;
        let mut parents = vec![*self, *weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        Ok(self.tape().record(out, &parents, move |g, needs| {
            let gx = needs[0].then(|| {
                let mut gx = vec![0.0; n * din];
                gemm(n, dout, din, 1.0, g, false, w.data(), false, 0.0, &mut gx);
                gx
            });
            let gw = needs[1].then(|| {
                let mut gw = vec![0.0; dout * din];
                gemm(dout, n, din, 1.0, g, true, x.data(), false, 0.0, &mut gw);
                gw
            });
            let mut grads = vec![gx, gw];
            if has_bias {
                grads.push(needs[2].then(|| {
                    let mut gb = vec![0.0; dout];
                    for row in g.chunks(dout) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    gb
                }));
            }
            grads
        }))
    }
}
