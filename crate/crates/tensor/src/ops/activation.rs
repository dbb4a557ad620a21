use crate::error::{invalid, Result};
use crate::tape::Var;
use crate::tensor::Tensor;

impl<'t> Var<'t> {
    /// Parametric ReLU with one learnable slope per channel (axis 1):
    /// `x` where `x > 0`, otherwise `slope · x`.
    pub fn prelu(&self, slope: &Var<'t>) -> Result<Var<'t>> {
        let x = self.value();
        let a = slope.value();
        if x.ndim() < 2 {
            return Err(invalid(format!(
                "prelu needs [N, C, ...], got {:?}",
                x.shape()
            )));
        }
        let (n, c) = (x.shape()[0], x.shape()[1]);
        a.expect_shape("prelu slope", &[c])?;
        let inner: usize = x.shape()[2..].iter().product();
        let channel_of = move |i: usize| (i / inner) % c;
        let out = Tensor::from_fn(x.shape(), |i| {
            let v = x.data()[i];
            if v > 0.0 {
                v
            } else {
                a.data()[channel_of(i)] * v
            }
        });
        debug_assert_eq!(out.numel(), n * c * inner);
        Ok(self.tape().record(out, &[*self, *slope], move |g, needs| {
            let gx = needs[0].then(|| {
                g.iter()
                    .zip(x.data())
                    .enumerate()
                    .map(|(i, (g, &v))| {
                        if v > 0.0 {
                            *g
                        } else {
                            g * a.data()[channel_of(i)]
                        }
                    })
                    .collect()
            });
            let ga = needs[1].then(|| {
                let mut ga = vec![0.0; c];
                for (i, (g, &v)) in g.iter().zip(x.data()).enumerate() {
                    if v <= 0.0 {
                        ga[channel_of(i)] += g * v;
                    }
                }
                ga
            });
            vec![gx, ga]
        }))
    }
}
