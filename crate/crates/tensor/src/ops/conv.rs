//! 2-D cross-correlation via im2col + GEMM.

use crate::error::{invalid, Result, TensorError};
use crate::gemm::gemm;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Zero padding applied to the two spatial axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn symmetric(height: usize, width: usize) -> Self {
        Self {
            top: height,
            bottom: height,
            left: width,
            right: width,
        }
    }

    /// `floor(k/2)` on both sides for odd kernels. Even kernels put the extra
    /// row/column at the end, so stride-1 layers keep their input size.
    pub fn same(kernel: (usize, usize)) -> Self {
        let (kh, kw) = kernel;
        Self {
            top: kh.saturating_sub(1) / 2,
            bottom: kh / 2,
            left: kw.saturating_sub(1) / 2,
            right: kw / 2,
        }
    }
}

/// Output spatial size, or `None` when the kernel does not fit.
pub fn conv2d_output_size(
    input: (usize, usize),
    kernel: (usize, usize),
    stride: (usize, usize),
    pad: Padding,
) -> Option<(usize, usize)> {
    let h = input.0 + pad.top + pad.bottom;
    let w = input.1 + pad.left + pad.right;
    if stride.0 == 0 || stride.1 == 0 || kernel.0 == 0 || kernel.1 == 0 {
        return None;
    }
    if kernel.0 > h || kernel.1 > w {
        return None;
    }
    Some(((h - kernel.0) / stride.0 + 1, (w - kernel.1) / stride.1 + 1))
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    pad: Padding,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn input_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Source column for output column `ow` and kernel column `kj`.
    fn src_col(&self, ow: usize, kj: usize) -> Option<usize> {
        (ow * self.sw + kj)
            .checked_sub(self.pad.left)
            .filter(|&iw| iw < self.width)
    }

    fn src_row(&self, oh: usize, ki: usize) -> Option<usize> {
        (oh * self.sh + ki)
            .checked_sub(self.pad.top)
            .filter(|&ih| ih < self.height)
    }
}

/// Unfolds one sample `[C, H, W]` into `[C·kh·kw, out_h·out_w]`.
fn im2col(x: &[f64], g: &Geometry, cols: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.channels {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oh in 0..g.out_h {
                    let drow = &mut dst[oh * g.out_w..(oh + 1) * g.out_w];
                    let Some(ih) = g.src_row(oh, ki) else {
                        drow.fill(0.0);
                        continue;
                    };
                    let src = &x[(c * g.height + ih) * g.width..][..g.width];
                    for (ow, d) in drow.iter_mut().enumerate() {
                        *d = g.src_col(ow, kj).map_or(0.0, |iw| src[iw]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into `[C, H, W]`.
fn col2im(cols: &[f64], g: &Geometry, x: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.channels {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oh in 0..g.out_h {
                    let Some(ih) = g.src_row(oh, ki) else {
                        continue;
                    };
                    let dst = &mut x[(c * g.height + ih) * g.width..][..g.width];
                    for (ow, s) in src[oh * g.out_w..(oh + 1) * g.out_w].iter().enumerate() {
                        if let Some(iw) = g.src_col(ow, kj) {
                            dst[iw] += s;
                        }
                    }
                }
            }
        }
    }
}

impl<'t> Var<'t> {
    /// Cross-correlation of `[N, C_in, H, W]` with `[C_out, C_in, kH, kW]`,
    /// plus an optional `[C_out]` bias.
    pub fn conv2d(
        &self,
        kernel: &Var<'t>,
        bias: Option<&Var<'t>>,
        stride: (usize, usize),
        pad: Padding,
    ) -> Result<Var<'t>> {
        let x = self.value();
        let k = kernel.value();
        if x.ndim() != 4 || k.ndim() != 4 {
            return Err(invalid(format!(
                "conv2d expects 4-d input and kernel, got {:?} and {:?}",
                x.shape(),
                k.shape()
            )));
        }
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (o, kc, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
        if kc != c {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d channels",
                expected: vec![o, c, kh, kw],
                got: k.shape().to_vec(),
            });
        }
        let bias_value = bias.map(|b| b.value());
        if let Some(b) = &bias_value {
            b.expect_shape("conv2d bias", &[o])?;
        }
        let (out_h, out_w) = conv2d_output_size((h, w), (kh, kw), stride, pad).ok_or_else(|| {
            invalid(format!(
                "conv2d kernel ({kh},{kw}) stride {stride:?} does not fit input ({h},{w}) with {pad:?}"
            ))
        })?;
        let g = Geometry {
            channels: c,
            height: h,
            width: w,
            kh,
            kw,
            sh: stride.0,
            sw: stride.1,
            pad,
            out_h,
            out_w,
        };
        let (patch, p) = (g.patch_len(), g.positions());
        let mut out = vec![0.0; n * o * p];
        let mut cols = vec![0.0; patch * p];
        for s in 0..n {
            im2col(
                &x.data()[s * g.input_len()..(s + 1) * g.input_len()],
                &g,
                &mut cols,
            );
            let dst = &mut out[s * o * p..(s + 1) * o * p];
            if let Some(b) = &bias_value {
                for (row, &bv) in dst.chunks_mut(p).zip(b.data()) {
                    row.fill(bv);
                }
            }
            gemm(o, patch, p, 1.0, k.data(), false, &cols, false, 1.0, dst);
        }
        let out = Tensor::new(&[n, o, out_h, out_w], out)?;

        let mut parents = vec![*self, *kernel];
        parents.extend(bias);
        let has_bias = bias.is_some();
        Ok(self.tape().record(out, &parents, move |grad, needs| {
            let mut gx = needs[0].then(|| vec![0.0; x.numel()]);
            let mut gk = needs[1].then(|| vec![0.0; k.numel()]);
            let gb = (has_bias && needs[2]).then(|| {
                let mut gb = vec![0.0; o];
                for s in 0..n {
                    for (acc, row) in gb.iter_mut().zip(grad[s * o * p..].chunks(p).take(o)) {
                        *acc += row.iter().sum::<f64>();
                    }
                }
                gb
            });
            let mut cols = vec![0.0; patch * p];
            for s in 0..n {
                let gout = &grad[s * o * p..(s + 1) * o * p];
                if let Some(gk) = gk.as_mut() {
                    im2col(
                        &x.data()[s * g.input_len()..(s + 1) * g.input_len()],
                        &g,
                        &mut cols,
                    );
                    gemm(o, p, patch, 1.0, gout, false, &cols, true, 1.0, gk);
                }
                if let Some(gx) = gx.as_mut() {
                    gemm(
                        patch,
                        o,
                        p,
                        1.0,
                        k.data(),
                        true,
                        gout,
                        false,
                        0.0,
                        &mut cols,
                    );
                    col2im(
                        &cols,
                        &g,
                        &mut gx[s * g.input_len()..(s + 1) * g.input_len()],
                    );
                }
            }
            let mut grads = vec![gx, gk];
            if has_bias {
                grads.push(gb);
            }
            grads
        }))
    }
}
