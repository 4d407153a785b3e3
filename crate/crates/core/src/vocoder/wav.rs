use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Float sample in `[-1, 1]` to 16-bit PCM, clamping out-of-range values.
pub fn to_pcm16(v: f32) -> i16 {
    (v.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16
}

pub fn from_pcm16(v: i16) -> f32 {
    v as f32 / i16::MAX as f32
}

/// Writes mono 16-bit PCM.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample(to_pcm16(s))?;
    }
    w.finalize()?;
    Ok(())
}

/// Reads a mono WAV (16-bit PCM or 32-bit float) as floats plus its rate.
pub fn read_wav(path: impl AsRef<Path>) -> Result<(Vec<f32>, u32)> {
    let reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Domain(format!("expected mono audio, got {} channels", spec.channels)));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(from_pcm16))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader.into_samples::<f32>().collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::Domain(format!("unsupported WAV sample format {fmt:?} at {bits} bits")));
        }
    };
    Ok((samples, spec.sample_rate))
}
