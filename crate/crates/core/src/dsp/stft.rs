use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{AudioClip, Matrix};
use crate::error::{invalid, Error, Result};

/// Periodic Hann window `0.5·(1 − cos(2πn/len))`.
pub fn hann_window(length: usize) -> Result<Vec<f64>> {
    if length < 2 {
        return Err(invalid(format!("window length must be >= 2, got {length}")));
    }
    Ok((0..length)
        .map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / length as f64).cos()))
        .collect())
}

/// Analysis parameters, in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub win_len: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    /// 64 ms frames with a 32 ms hop at 16 kHz, 1024-point FFT.
    fn default() -> Self {
        Self {
            fft_size: 1024,
            win_len: 1024,
            hop: 512,
        }
    }
}

impl StftConfig {
    pub fn freq_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Samples spanned by `frames` consecutive frames.
    pub fn span(&self, frames: usize) -> usize {
        self.win_len + frames.saturating_sub(1) * self.hop
    }

    fn validate(&self) -> Result<()> {
        if self.win_len < 2 || self.win_len > self.fft_size || self.hop == 0 {
            return Err(invalid(format!(
                "invalid STFT parameters {self:?}: need 2 <= win_len <= fft_size and hop >= 1"
            )));
        }
        Ok(())
    }
}

/// Frames that fit without padding: `floor((len − win_len)/hop) + 1`.
pub fn frame_count(len: usize, win_len: usize, hop: usize) -> Option<usize> {
    (len >= win_len && hop > 0).then(|| (len - win_len) / hop + 1)
}

/// Complex STFT laid out `[freq_bins × frames]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub real: Matrix,
    pub imag: Matrix,
    pub hop: usize,
    pub win_len: usize,
}

impl ComplexSpectrogram {
    pub fn freq_bins(&self) -> usize {
        self.real.rows
    }

    pub fn frames(&self) -> usize {
        self.real.cols
    }
}

pub fn stft(clip: &AudioClip, config: &StftConfig) -> Result<ComplexSpectrogram> {
    stft_samples(clip.samples(), config)
}

/// STFT of raw samples; frames start at sample 0 with no centring.
pub fn stft_samples(samples: &[f64], config: &StftConfig) -> Result<ComplexSpectrogram> {
    config.validate()?;
    stft_windowed(samples, config, &hann_window(config.win_len)?)
}

/// STFT with a caller-supplied analysis window of length `win_len`.
pub fn stft_windowed(
    samples: &[f64],
    config: &StftConfig,
    window: &[f64],
) -> Result<ComplexSpectrogram> {
    config.validate()?;
    if window.len() != config.win_len {
        return Err(invalid(format!(
            "window has {} samples, expected {}",
            window.len(),
            config.win_len
        )));
    }
    let frames =
        frame_count(samples.len(), config.win_len, config.hop).ok_or_else(|| Error::TooShort {
            what: "signal".into(),
            needed: config.win_len,
            got: samples.len(),
        })?;
    let bins = config.freq_bins();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(config.fft_size);
    let mut buffer = vec![Complex::new(0.0, 0.0); config.fft_size];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut real = Matrix::zeros(bins, frames);
    let mut imag = Matrix::zeros(bins, frames);
    for f in 0..frames {
        let frame = &samples[f * config.hop..f * config.hop + config.win_len];
        for (slot, (x, w)) in buffer.iter_mut().zip(frame.iter().zip(window)) {
            *slot = Complex::new(x * w, 0.0);
        }
        buffer[config.win_len..].fill(Complex::new(0.0, 0.0));
        fft.process_with_scratch(&mut buffer, &mut scratch);
        for (k, value) in buffer.iter().take(bins).enumerate() {
            real.set(k, f, value.re);
            imag.set(k, f, value.im);
        }
    }
    Ok(ComplexSpectrogram {
        real,
        imag,
        hop: config.hop,
        win_len: config.win_len,
    })
}

/// Elementwise modulus `sqrt(re² + im²)`.
pub fn magnitude(spec: &ComplexSpectrogram) -> Matrix {
    Matrix {
        rows: spec.real.rows,
        cols: spec.real.cols,
        data: spec
            .real
            .data
            .iter()
            .zip(&spec.imag.data)
            .map(|(re, im)| re.hypot(*im))
            .collect(),
    }
}
