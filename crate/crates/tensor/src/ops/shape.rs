use crate::error::{invalid, Result, TensorError};
use crate::tape::Var;
use crate::tensor::Tensor;

/// (outer, axis length, inner) split of a shape around `axis`.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'t> Var<'t> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let a = self.value();
        let out = (*a).clone().reshape(shape)?;
        Ok(self
            .tape()
            .record(out, &[*self], |g, _| vec![Some(g.to_vec())]))
    }

    /// Concatenates `parts` along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("concat of zero tensors"))?;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        if axis >= base.len() {
            return Err(invalid(format!(
                "concat axis {axis} out of range for {base:?}"
            )));
        }
        for v in &values[1..] {
            let s = v.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    expected: base.clone(),
                    got: s.to_vec(),
                });
            }
        }
        let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = split_at_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &len) in values.iter().zip(&lens) {
                let chunk = len * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let out = Tensor::new(&out_shape, data)?;
        Ok(first.tape().record(out, parts, move |g, needs| {
            let mut grads: Vec<Option<Vec<f64>>> = lens
                .iter()
                .zip(needs)
                .map(|(&len, &need)| need.then(|| Vec::with_capacity(outer * len * inner)))
                .collect();
            for o in 0..outer {
                let mut offset = o * total * inner;
                for (grad, &len) in grads.iter_mut().zip(&lens) {
                    let chunk = len * inner;
                    if let Some(grad) = grad {
                        grad.extend_from_slice(&g[offset..offset + chunk]);
                    }
                    offset += chunk;
                }
            }
            grads
        }))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let a = self.value();
        let shape = a.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(invalid(format!(
                "narrow(axis={axis}, start={start}, len={len}) out of range for {shape:?}"
            )));
        }
        let (outer, axis_len, inner) = split_at_axis(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * axis_len + start) * inner;
            data.extend_from_slice(&a.data()[from..from + len * inner]);
        }
        let out = Tensor::new(&out_shape, data)?;
        let numel = a.numel();
        Ok(self.tape().record(out, &[*self], move |g, _| {
            let mut grad = vec![0.0; numel];
            for o in 0..outer {
                let from = (o * axis_len + start) * inner;
                grad[from..from + len * inner]
                    .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(grad)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use crate::tape::{Tape, Var};
    use crate::tensor::Tensor;

    #[test]
    fn concat_then_narrow_recovers_parts() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::from_fn(&[2, 1, 3], |i| i as f64));
        let b = tape.leaf(Tensor::from_fn(&[2, 2, 3], |i| 100.0 + i as f64));
        let c = Var::concat(&[a, b], 1).unwrap();
        assert_eq!(c.shape(), vec![2, 3, 3]);
        let back_a = c.narrow(1, 0, 1).unwrap();
        let back_b = c.narrow(1, 1, 2).unwrap();
        assert_eq!(*back_a.value(), *a.value());
        assert_eq!(*back_b.value(), *b.value());
    }

    #[test]
    fn concat_rejects_mismatched_dims() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 1, 3]));
        let b = tape.leaf(Tensor::zeros(&[2, 1, 4]));
        assert!(Var::concat(&[a, b], 1).is_err());
    }
}
