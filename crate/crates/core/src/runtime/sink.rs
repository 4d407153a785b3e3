use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::vocoder::to_pcm16;

/// Ordered consumer of synthesized audio.
pub trait AudioSink {
    fn push_pcm(&mut self, pcm: &[i16]) -> Result<()>;

    /// Float samples in `[-1, 1]`; converted to PCM unless overridden.
    fn push_samples(&mut self, samples: &[f32]) -> Result<()> {
        let pcm: Vec<i16> = samples.iter().map(|&s| to_pcm16(s)).collect();
        self.push_pcm(&pcm)
    }

    /// Called once after the last chunk.
    fn finish(&mut self) -> Result<()> {
        Ok(())
    }
}

impl<S: AudioSink + ?Sized> AudioSink for &mut S {
    fn push_pcm(&mut self, pcm: &[i16]) -> Result<()> {
        (**self).push_pcm(pcm)
    }

    fn push_samples(&mut self, samples: &[f32]) -> Result<()> {
        (**self).push_samples(samples)
    }

    fn finish(&mut self) -> Result<()> {
        (**self).finish()
    }
}

/// Keeps every chunk in memory, both as floats and as PCM.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemorySink {
    pub samples: Vec<f32>,
    pub pcm: Vec<i16>,
    /// Length of every delivered chunk, in order.
    pub chunks: Vec<usize>,
    pub finished: bool,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }
}

impl AudioSink for MemorySink {
    fn push_pcm(&mut self, pcm: &[i16]) -> Result<()> {
        self.pcm.extend_from_slice(pcm);
        self.chunks.push(pcm.len());
        Ok(())
    }

    fn push_samples(&mut self, samples: &[f32]) -> Result<()> {
        self.samples.extend_from_slice(samples);
        self.pcm.extend(samples.iter().map(|&s| to_pcm16(s)));
        self.chunks.push(samples.len());
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        self.finished = true;
        Ok(())
    }
}

/// Streams mono 16-bit PCM into a WAV file.
pub struct WavSink {
    writer: Option<WavWriter<BufWriter<File>>>,
}

impl WavSink {
    pub fn create(path: impl AsRef<Path>, sample_rate: u32) -> Result<Self> {
        let spec = WavSpec {
            channels: 1,
            sample_rate,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        Ok(Self {
            writer: Some(WavWriter::create(path, spec)?),
        })
    }
}

impl AudioSink for WavSink {
    fn push_pcm(&mut self, pcm: &[i16]) -> Result<()> {
        let w = self
            .writer
            .as_mut()
            .ok_or_else(|| Error::State("WAV sink already finished".into()))?;
        for &s in pcm {
            w.write_sample(s)?;
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        match self.writer.take() {
            Some(w) => Ok(w.finalize()?),
            None => Err(Error::State("WAV sink already finished".into())),
        }
    }
}
