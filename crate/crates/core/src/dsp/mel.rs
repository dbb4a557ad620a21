use super::{ComplexSpectrogram, Matrix};
use crate::error::{invalid, Result};

/// Floor applied before taking logarithms of power or magnitude.
pub const LOG_FLOOR: f64 = 1e-10;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters on the HTK mel scale between 0 Hz and Nyquist,
/// without area normalisation. `weights` is `[n_mels × freq_bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub weights: Matrix,
    pub sample_rate: u32,
}

impl MelFilterbank {
    pub fn htk(n_mels: usize, fft_size: usize, sample_rate: u32) -> Result<Self> {
        if n_mels == 0 || fft_size < 2 || sample_rate == 0 {
            return Err(invalid(format!(
                "mel filterbank needs n_mels >= 1, fft_size >= 2, sample_rate > 0 (got {n_mels}, {fft_size}, {sample_rate})"
            )));
        }
        let bins = fft_size / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / fft_size as f64;
        let mut weights = Matrix::zeros(n_mels, bins);
        for m in 0..n_mels {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..bins {
                let f = k as f64 * bin_hz;
                let w = ((f - lo) / (mid - lo)).min((hi - f) / (hi - mid));
                if w > 0.0 {
                    weights.set(m, k, w);
                }
            }
            if weights.row(m).iter().all(|&w| w == 0.0) {
                return Err(invalid(format!(
                    "mel filter {m} ({lo:.1}-{hi:.1} Hz) covers no FFT bin; use fewer mels or a longer FFT"
                )));
            }
        }
        Ok(Self {
            weights,
            sample_rate,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.weights.rows
    }

    pub fn freq_bins(&self) -> usize {
        self.weights.cols
    }

    /// `weights · input` for a `[freq_bins × frames]` matrix.
    pub fn apply(&self, input: &Matrix) -> Result<Matrix> {
        if input.rows != self.freq_bins() {
            return Err(invalid(format!(
                "filterbank expects {} frequency bins, got {}",
                self.freq_bins(),
                input.rows
            )));
        }
        let mut out = Matrix::zeros(self.n_mels(), input.cols);
        for m in 0..self.n_mels() {
            for (k, &w) in self.weights.row(m).iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for (o, v) in out.data[m * input.cols..(m + 1) * input.cols]
                    .iter_mut()
                    .zip(input.row(k))
                {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }
}

/// `ln(max(filterbank · |X|², floor))`, shape `[n_mels × frames]`.
pub fn log_mel(spec: &ComplexSpectrogram, fb: &MelFilterbank, floor: f64) -> Result<Matrix> {
    if !(floor > 0.0) {
        return Err(invalid(format!("log floor must be positive, got {floor}")));
    }
    let power = Matrix {
        rows: spec.real.rows,
        cols: spec.real.cols,
        data: spec
            .real
            .data
            .iter()
            .zip(&spec.imag.data)
            .map(|(re, im)| re * re + im * im)
            .collect(),
    };
    let mut mel = fb.apply(&power)?;
    for v in &mut mel.data {
        *v = v.max(floor).ln();
    }
    Ok(mel)
}
