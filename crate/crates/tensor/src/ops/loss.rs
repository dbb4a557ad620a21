use crate::error::{invalid, Result, TensorError};
use crate::tape::Var;
use crate::tensor::Tensor;

/// Numerically stable log-softmax of one row.
pub(crate) fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for (o, v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}

fn rows_of(x: &Tensor, op: &str) -> Result<(usize, usize)> {
    if x.ndim() != 2 || x.shape()[1] == 0 {
        return Err(invalid(format!(
            "{op} expects [N, K] with K >= 1, got {:?}",
            x.shape()
        )));
    }
    Ok((x.shape()[0], x.shape()[1]))
}

fn log_softmax_rows(x: &Tensor, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.numel()];
    for (row, dst) in x.data().chunks(k).zip(out.chunks_mut(k)) {
        log_softmax_row(row, dst);
    }
    out
}

impl<'t> Var<'t> {
    /// Softmax along `axis` of an `[N, K]` tensor. Only the class axis
    /// (`axis = 1`) is supported.
    pub fn softmax(&self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (_, k) = rows_of(&x, "softmax")?;
        if axis != 1 {
            return Err(invalid(format!("softmax supports axis 1 only, got {axis}")));
        }
        let probs: Vec<f64> = log_softmax_rows(&x, k).into_iter().map(f64::exp).collect();
        let out = Tensor::new(x.shape(), probs.clone())?;
        Ok(self.tape().record(out, &[*self], move |g, _| {
            let mut gx = vec![0.0; probs.len()];
            for ((p, gr), dst) in probs.chunks(k).zip(g.chunks(k)).zip(gx.chunks_mut(k)) {
                let dot: f64 = p.iter().zip(gr).map(|(a, b)| a * b).sum();
                for ((d, pi), gi) in dst.iter_mut().zip(p).zip(gr) {
                    *d = pi * (gi - dot);
                }
            }
            vec![Some(gx)]
        }))
    }

    pub fn log_softmax(&self) -> Result<Var<'t>> {
        let x = self.value();
        let (_, k) = rows_of(&x, "log_softmax")?;
        let logp = log_softmax_rows(&x, k);
        let out = Tensor::new(x.shape(), logp.clone())?;
        Ok(self.tape().record(out, &[*self], move |g, _| {
            let mut gx = vec![0.0; logp.len()];
            for ((lp, gr), dst) in logp.chunks(k).zip(g.chunks(k)).zip(gx.chunks_mut(k)) {
                let total: f64 = gr.iter().sum();
                for ((d, l), gi) in dst.iter_mut().zip(lp).zip(gr) {
                    *d = gi - l.exp() * total;
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Batch mean of `-ln softmax(logits)[n, targets[n]]`.
    pub fn cross_entropy(&self, targets: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let (n, k) = rows_of(&x, "cross_entropy")?;
        if targets.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy targets",
                expected: vec![n],
                got: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(invalid(format!(
                "target index {bad} out of range for {k} classes"
            )));
        }
        let logp = log_softmax_rows(&x, k);
        let loss = -targets
            .iter()
            .enumerate()
            .map(|(row, &t)| logp[row * k + t])
            .sum::<f64>()
            / n as f64;
        let targets = targets.to_vec();
        Ok(self
            .tape()
            .record(Tensor::scalar(loss), &[*self], move |g, _| {
                let scale = g[0] / n as f64;
                let mut gx: Vec<f64> = logp.iter().map(|l| l.exp() * scale).collect();
                for (row, &t) in targets.iter().enumerate() {
                    gx[row * k + t] -= scale;
                }
                vec![Some(gx)]
            }))
    }

    /// Batch mean of `Σ_k p·(ln p − ln softmax(logits))` against constant
    /// target distributions `p: [N, K]`, with `0·ln 0 = 0`.
    pub fn kl_div(&self, target: &Tensor) -> Result<Var<'t>> {
        let x = self.value();
        let (n, k) = rows_of(&x, "kl_div")?;
        target.expect_shape("kl_div target", x.shape())?;
        for (row, p) in target.data().chunks(k).enumerate() {
            let sum: f64 = p.iter().sum();
            if p.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(invalid(format!(
                    "kl_div target row {row} is not a distribution (sum {sum})"
                )));
            }
        }
        let logp = log_softmax_rows(&x, k);
        let loss = target
            .data()
            .iter()
            .zip(&logp)
            .map(|(&p, &l)| if p > 0.0 { p * (p.ln() - l) } else { 0.0 })
            .sum::<f64>()
            / n as f64;
        let target = target.clone();
        Ok(self
            .tape()
            .record(Tensor::scalar(loss), &[*self], move |g, _| {
                let scale = g[0] / n as f64;
                let mut gx = vec![0.0; logp.len()];
                for ((d, l), p_row) in gx
                    .chunks_mut(k)
                    .zip(logp.chunks(k))
                    .zip(target.data().chunks(k))
                {
                    let mass: f64 = p_row.iter().sum();
                    for ((di, li), pi) in d.iter_mut().zip(l).zip(p_row) {
                        *di = scale * (li.exp() * mass - pi);
                    }
                }
                vec![Some(gx)]
            }))
    }
}
