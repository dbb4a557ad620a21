use crate::error::{Result, TensorError};
use crate::tape::Var;
use crate::tensor::Tensor;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            expected: a.shape().to_vec(),
            got: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl<'t> Var<'t> {
    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        same_shape("add", &a, &b)?;
        let out = Tensor::from_fn(a.shape(), |i| a.data()[i] + b.data()[i]);
        Ok(self.tape().record(out, &[*self, *other], |g, _| {
            vec![Some(g.to_vec()), Some(g.to_vec())]
        }))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        same_shape("sub", &a, &b)?;
        let out = Tensor::from_fn(a.shape(), |i| a.data()[i] - b.data()[i]);
        Ok(self.tape().record(out, &[*self, *other], |g, _| {
            vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]
        }))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        same_shape("mul", &a, &b)?;
        let out = Tensor::from_fn(a.shape(), |i| a.data()[i] * b.data()[i]);
        Ok(self.tape().record(out, &[*self, *other], move |g, needs| {
            let ga = needs[0].then(|| g.iter().zip(b.data()).map(|(g, b)| g * b).collect());
            let gb = needs[1].then(|| g.iter().zip(a.data()).map(|(g, a)| g * a).collect());
            vec![ga, gb]
        }))
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn scale(&self, factor: f64) -> Var<'t> {
        let a = self.value();
        let out = Tensor::from_fn(a.shape(), |i| a.data()[i] * factor);
        self.tape().record(out, &[*self], move |g, _| {
            vec![Some(g.iter().map(|v| v * factor).collect())]
        })
    }

    pub fn relu(&self) -> Var<'t> {
        let a = self.value();
        let out = Tensor::from_fn(a.shape(), |i| a.data()[i].max(0.0));
        self.tape().record(out, &[*self], move |g, _| {
            vec![Some(
                g.iter()
                    .zip(a.data())
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect(),
            )]
        })
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&self) -> Var<'t> {
        let a = self.value();
        let n = a.numel();
        let out = Tensor::scalar(a.data().iter().sum());
        self.tape()
            .record(out, &[*self], move |g, _| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.value().numel();
        self.sum().scale(1.0 / n as f64)
    }

    /// `sqrt(re² + im²)` elementwise. The gradient at the origin is taken
    /// as zero.
    pub fn complex_abs(&self, imag: &Var<'t>) -> Result<Var<'t>> {
        let (re, im) = (self.value(), imag.value());
        same_shape("complex_abs", &re, &im)?;
        let out = Tensor::from_fn(re.shape(), |i| re.data()[i].hypot(im.data()[i]));
        let modulus = out.clone();
        Ok(self.tape().record(out, &[*self, *imag], move |g, needs| {
            let part = |src: &Tensor| -> Vec<f64> {
                g.iter()
                    .zip(src.data())
                    .zip(modulus.data())
                    .map(|((g, x), m)| if *m > 0.0 { g * x / m } else { 0.0 })
                    .collect()
            };
            vec![needs[0].then(|| part(&re)), needs[1].then(|| part(&im))]
        }))
    }
}
