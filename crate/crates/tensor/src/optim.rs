//! Named parameters and the Adam optimiser.

use std::collections::BTreeMap;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// A learnable tensor with an accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value,
            grad: None,
        }
    }

    /// `grad += g`; gradients are never overwritten.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        assert_eq!(
            g.len(),
            self.value.numel(),
            "gradient length for {}",
            self.name
        );
        match &mut self.grad {
            Some(acc) => {
                for (a, v) in acc.data_mut().iter_mut().zip(g) {
                    *a += v;
                }
            }
            None => {
                self.grad = Some(Tensor::new(self.value.shape(), g.to_vec()).expect("shape"));
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

/// First and second moment estimates of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of completed steps.
    pub t: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl AdamState {
    /// `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: BTreeMap::new(),
        }
    }
}

/// One bias-corrected Adam update over `params`, after which their gradients
/// are cleared. Fails without touching anything if a gradient is missing.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = &'a mut Param>,
    state: &mut AdamState,
) -> Result<()> {
    let params: Vec<&mut Param> = params.into_iter().collect();
    if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
        return Err(TensorError::InvalidState(format!(
            "parameter {} has no gradient",
            p.name
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bias1 = 1.0 - b1.powi(t);
    let bias2 = 1.0 - b2.powi(t);
    for p in params {
        let grad = p.grad.take().expect("checked above");
        let moments = state
            .moments
            .entry(p.name.clone())
            .or_insert_with(|| Moments {
                m: Tensor::zeros(p.value.shape()),
                v: Tensor::zeros(p.value.shape()),
            });
        if moments.m.shape() != p.value.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "adam moments",
                expected: p.value.shape().to_vec(),
                got: moments.m.shape().to_vec(),
            });
        }
        let iter = p
            .value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(moments.m.data_mut().iter_mut().zip(moments.v.data_mut()));
        for ((theta, &g), (m, v)) in iter {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *theta -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}
