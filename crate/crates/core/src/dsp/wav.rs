use std::path::Path;

use super::AudioClip;
use crate::error::{Error, Result};

/// Reads a 16-bit PCM RIFF/WAVE file; multi-channel files keep channel 0.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(source) => Error::io(path, source),
        hound::Error::Unsupported => Error::UnsupportedFormat {
            path: path.into(),
            msg: "unsupported WAV encoding".into(),
        },
        other => Error::Parse {
            path: path.into(),
            msg: other.to_string(),
        },
    })?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat {
            path: path.into(),
            msg: format!(
                "{:?} {}-bit samples; only 16-bit PCM is accepted",
                spec.sample_format, spec.bits_per_sample
            ),
        });
    }
    let channels = spec.channels.max(1) as usize;
    let mut samples = Vec::with_capacity(reader.len() as usize / channels);
    for (i, s) in reader.into_samples::<i16>().enumerate() {
        let s = s.map_err(|e| Error::Parse {
            path: path.into(),
            msg: e.to_string(),
        })?;
        if i % channels == 0 {
            samples.push(s as f64 / 32768.0);
        }
    }
    if samples.is_empty() {
        return Err(Error::TooShort {
            what: path.display().to_string(),
            needed: 1,
            got: 0,
        });
    }
    AudioClip::new(samples, spec.sample_rate)
}

/// Writes a mono 16-bit PCM file; samples are scaled by 32768 and saturated.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::Parse {
            path: path.into(),
            msg: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in clip.samples() {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}
