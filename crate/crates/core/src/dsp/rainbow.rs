use std::f64::consts::PI;
use std::io::Write;

use super::{stft, AudioClip, Matrix, StftConfig, LOG_FLOOR};
use crate::error::{Error, Result};

/// Principal value of an angle, in `(−π, π]`.
pub fn wrap_phase(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(2.0 * PI);
    if wrapped > PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// STFT-based rainbowgram: log magnitude per bin and frame, and the
/// frame-to-frame phase advance per bin (radians/frame).
#[derive(Debug, Clone, PartialEq)]
pub struct Rainbowgram {
    /// `[freq_bins × frames]`, `ln(max(|X|, 1e-10))`.
    pub log_magnitude: Matrix,
    /// `[freq_bins × (frames − 1)]`; column `f` is the advance from frame
    /// `f` to frame `f + 1`.
    pub phase_derivative: Matrix,
}

pub fn rainbowgram(clip: &AudioClip) -> Result<Rainbowgram> {
    rainbowgram_with(clip, &StftConfig::default())
}

pub fn rainbowgram_with(clip: &AudioClip, config: &StftConfig) -> Result<Rainbowgram> {
    let spec = stft(clip, config)?;
    let (bins, frames) = (spec.freq_bins(), spec.frames());
    if frames < 2 {
        return Err(Error::TooShort {
            what: "rainbowgram input".into(),
            needed: config.span(2),
            got: clip.len(),
        });
    }
    let mut log_magnitude = Matrix::zeros(bins, frames);
    let mut phase_derivative = Matrix::zeros(bins, frames - 1);
    for k in 0..bins {
        let mut previous = None;
        for f in 0..frames {
            let (re, im) = (spec.real.get(k, f), spec.imag.get(k, f));
            log_magnitude.set(k, f, re.hypot(im).max(LOG_FLOOR).ln());
            let phase = im.atan2(re);
            if let Some(prev) = previous {
                phase_derivative.set(k, f - 1, wrap_phase(phase - prev));
            }
            previous = Some(phase);
        }
    }
    Ok(Rainbowgram {
        log_magnitude,
        phase_derivative,
    })
}

fn hsv_to_rgb(hue_deg: f64, value: f64) -> [u8; 3] {
    let c = value;
    let h = (hue_deg.rem_euclid(360.0)) / 60.0;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r, g, b].map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
}

impl Rainbowgram {
    /// Binary PPM (P6): brightness from log magnitude, hue from phase
    /// advance. Low frequencies at the bottom; one column per phase step.
    pub fn write_ppm(&self, out: &mut impl Write) -> std::io::Result<()> {
        let (bins, cols) = (self.phase_derivative.rows, self.phase_derivative.cols);
        let lm = &self.log_magnitude;
        let (lo, hi) = lm
            .data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let span = hi - lo;
        write!(out, "P6\n{cols} {bins}\n255\n")?;
        let mut pixels = Vec::with_capacity(bins * cols * 3);
        for row in 0..bins {
            let k = bins - 1 - row;
            for f in 0..cols {
                let value = if span > 0.0 {
                    (lm.get(k, f + 1) - lo) / span
                } else {
                    0.0
                };
                let hue = (self.phase_derivative.get(k, f) + PI) / (2.0 * PI) * 360.0;
                pixels.extend_from_slice(&hsv_to_rgb(hue, value));
            }
        }
        out.write_all(&pixels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_stays_in_half_open_interval() {
        assert_eq!(wrap_phase(PI), PI);
        assert_eq!(wrap_phase(-PI), PI);
        assert!((wrap_phase(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_phase(0.25) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn zero_signal_sits_at_log_floor() {
        let clip = AudioClip::new(vec![0.0; 4096], 16000).unwrap();
        let rg = rainbowgram(&clip).unwrap();
        assert!(rg.log_magnitude.data.iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn single_frame_is_too_short() {
        let clip = AudioClip::new(vec![0.0; 1100], 16000).unwrap();
        assert!(matches!(rainbowgram(&clip), Err(Error::TooShort { .. })));
    }

    #[test]
    fn ppm_has_header_and_pixel_count() {
        let samples: Vec<f64> = (0..8192).map(|n| 0.5 * (n as f64 * 0.3).sin()).collect();
        let rg = rainbowgram(&AudioClip::new(samples, 16000).unwrap()).unwrap();
        let mut buf = Vec::new();
        rg.write_ppm(&mut buf).unwrap();
        let header = format!("P6\n{} {}\n255\n", rg.phase_derivative.cols, 513);
        assert!(buf.starts_with(header.as_bytes()));
        assert_eq!(buf.len(), header.len() + 3 * 513 * rg.phase_derivative.cols);
    }
}
