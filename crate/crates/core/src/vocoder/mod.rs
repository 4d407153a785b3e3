//! Spectrogram-to-waveform synthesis: streaming and offline Griffin-Lim and
//! a causal MelGAN-style generator.

mod gl;
mod melgan;
mod stft;
mod wav;

pub use gl::{
    gl_offline, gl_offline_traced, spectral_snr, GlOutput, GlState, OFFLINE_ITERS, STREAM_EMIT_INDEX, STREAM_ITERS, STREAM_WINDOW,
};
pub use melgan::{upsample_total, MelGan, MgState, CHANNELS, DILATIONS, UPSAMPLE_FACTORS};
pub use stft::{hann, join_polar, split_polar, OverlapAdd, Stft, StftConfig};
pub use wav::{from_pcm16, read_wav, to_pcm16, write_wav};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layout::seeded_store;
use crate::nncore::Tensor;
use crate::quant::WeightStore;

pub const SEED_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocoderKind {
    /// Streaming Griffin-Lim.
    Gl,
    /// Offline Griffin-Lim over the whole utterance.
    Ngl,
    /// Streaming MelGAN.
    Mg,
}

impl VocoderKind {
    /// Frames between a spectrogram frame arriving and its samples leaving;
    /// `None` when the vocoder needs the whole utterance.
    pub fn delay_frames(self) -> Option<usize> {
        match self {
            VocoderKind::Gl => Some(STREAM_WINDOW - 1 - STREAM_EMIT_INDEX),
            VocoderKind::Mg => Some(1),
            VocoderKind::Ngl => None,
        }
    }

    pub fn is_streaming(self) -> bool {
        self.delay_frames().is_some()
    }
}

impl FromStr for VocoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gl" => Ok(VocoderKind::Gl),
            "ngl" => Ok(VocoderKind::Ngl),
            "mg" => Ok(VocoderKind::Mg),
            other => Err(Error::Config(format!("unknown vocoder {other:?} (expected gl, ngl or mg)"))),
        }
    }
}

impl fmt::Display for VocoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VocoderKind::Gl => "GL",
            VocoderKind::Ngl => "nGL",
            VocoderKind::Mg => "MG",
        })
    }
}

/// Griffin-Lim reads the spectrogram as linear magnitudes; negative values
/// from an untrained decoder are clipped to zero.
fn magnitudes(row: &[f32]) -> Vec<f32> {
    row.iter().map(|v| v.max(0.0)).collect()
}

#[derive(Debug, Clone)]
pub struct Vocoder {
    kind: VocoderKind,
    stft: Stft,
    melgan: Option<MelGan>,
}

/// Per-utterance streaming state of a [`Vocoder`].
#[derive(Debug, Clone)]
pub enum VocoderStream {
    Gl(GlState),
    Ngl { frames: Tensor, finished: bool },
    Mg(MgState),
}

impl Vocoder {
    pub fn layout(kind: VocoderKind, config: &StftConfig) -> Vec<crate::layout::TensorSpec> {
        match kind {
            VocoderKind::Mg => MelGan::layout(config.bins()),
            VocoderKind::Gl | VocoderKind::Ngl => Vec::new(),
        }
    }

    pub fn seeded_store(kind: VocoderKind, config: &StftConfig, seed: u64) -> Result<WeightStore> {
        seeded_store(&Self::layout(kind, config), seed, SEED_STREAM)
    }

    /// MelGAN weights are read from `voc.mg.*`; Griffin-Lim ignores the store.
    pub fn from_store(kind: VocoderKind, config: StftConfig, store: &WeightStore) -> Result<Self> {
        let stft = Stft::new(config)?;
        let melgan = match kind {
            VocoderKind::Mg => {
                if config.hop != upsample_total() {
                    return Err(Error::Config(format!(
                        "MelGAN upsamples by {} but hop is {}",
                        upsample_total(),
                        config.hop
                    )));
                }
                Some(MelGan::from_store(store, config.bins())?)
            }
            VocoderKind::Gl | VocoderKind::Ngl => None,
        };
        Ok(Self { kind, stft, melgan })
    }

    pub fn seeded(kind: VocoderKind, config: StftConfig, seed: u64) -> Result<Self> {
        Self::from_store(kind, config, &Self::seeded_store(kind, &config, seed)?)
    }

    pub fn kind(&self) -> VocoderKind {
        self.kind
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    pub fn config(&self) -> &StftConfig {
        self.stft.config()
    }

    pub fn param_count(&self) -> usize {
        self.melgan.as_ref().map_or(0, MelGan::param_count)
    }

    pub fn stream(&self) -> VocoderStream {
        match (&self.kind, &self.melgan) {
            (VocoderKind::Mg, Some(mg)) => VocoderStream::Mg(mg.stream_state()),
            (VocoderKind::Ngl, _) => VocoderStream::Ngl {
                frames: Tensor::zeros(&[0, self.config().bins()]),
                finished: false,
            },
            _ => VocoderStream::Gl(GlState::new(self.stft.clone())),
        }
    }

    /// Feeds decoder frames (normally one pair) and returns the samples
    /// that became final.
    pub fn push_frames(&self, state: &mut VocoderStream, frames: &Tensor) -> Result<Vec<f32>> {
        let bins = self.config().bins();
        if frames.rank() != 2 || frames.row_width() != bins {
            return Err(Error::dim("vocoder", format!("frames {:?}, expected [T, {bins}]", frames.shape())));
        }
        match state {
            VocoderStream::Gl(gl) => {
                let mut out = Vec::with_capacity(frames.rows() * self.config().hop);
                for f in 0..frames.rows() {
                    out.extend(gl.push(&magnitudes(frames.row(f)))?);
                }
                Ok(out)
            }
            VocoderStream::Ngl { frames: all, finished } => {
                if *finished {
                    return Err(Error::State("vocoder stream already finished".into()));
                }
                *all = all.concat_rows(frames)?;
                Ok(Vec::new())
            }
            VocoderStream::Mg(mg_state) => self.generator()?.push(mg_state, frames),
        }
    }

    /// Flushes the stream; for offline Griffin-Lim this is where all the
    /// audio is produced.
    pub fn finish(&self, state: &mut VocoderStream) -> Result<Vec<f32>> {
        match state {
            VocoderStream::Gl(gl) => gl.flush(),
            VocoderStream::Ngl { frames, finished } => {
                if *finished {
                    return Err(Error::State("vocoder stream already finished".into()));
                }
                *finished = true;
                let mags = frames.clone().map(|v| v.max(0.0));
                gl_offline(&self.stft, &mags, OFFLINE_ITERS)
            }
            VocoderStream::Mg(mg_state) => self.generator()?.flush(mg_state),
        }
    }

    fn generator(&self) -> Result<&MelGan> {
        self.melgan
            .as_ref()
            .ok_or_else(|| Error::State("MelGAN state used with a Griffin-Lim vocoder".into()))
    }

    /// Whole-spectrogram synthesis through the same path as streaming.
    pub fn vocode(&self, spectrogram: &Tensor) -> Result<Vec<f32>> {
        let mut state = self.stream();
        let mut out = Vec::new();
        let mut f = 0;
        while f < spectrogram.rows() {
            let end = (f + 2).min(spectrogram.rows());
            out.extend(self.push_frames(&mut state, &spectrogram.slice_rows(f, end))?);
            f = end;
        }
        out.extend(self.finish(&mut state)?);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine_mags(n: usize) -> Tensor {
        let x: Vec<f32> = (0..n).map(|i| (2.0 * PI * 440.0 * i as f64 / 16_000.0).sin() as f32).collect();
        Stft::new(StftConfig::default()).unwrap().stft(&x).0
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("gl".parse::<VocoderKind>().unwrap(), VocoderKind::Gl);
        assert_eq!("nGL".parse::<VocoderKind>().unwrap(), VocoderKind::Ngl);
        assert_eq!("mg".parse::<VocoderKind>().unwrap(), VocoderKind::Mg);
        assert!("wavernn".parse::<VocoderKind>().is_err());
        assert_eq!(VocoderKind::Gl.delay_frames(), Some(1));
        assert_eq!(VocoderKind::Ngl.delay_frames(), None);
    }

    #[test]
    fn empty_spectrogram_gives_empty_wave() {
        let v = Vocoder::seeded(VocoderKind::Gl, StftConfig::default(), 0).unwrap();
        assert!(v.vocode(&Tensor::zeros(&[0, 513])).unwrap().is_empty());
    }

    #[test]
    fn gl_wrapper_equals_manual_loop() {
        let v = Vocoder::seeded(VocoderKind::Gl, StftConfig::default(), 0).unwrap();
        let mags = sine_mags(3000);
        let mut st = GlState::new(v.stft().clone());
        let mut manual = Vec::new();
        for f in 0..mags.rows() {
            manual.extend(st.push(mags.row(f)).unwrap());
        }
        manual.extend(st.flush().unwrap());
        assert_eq!(v.vocode(&mags).unwrap(), manual);
    }

    #[test]
    fn ngl_reconstructs_sine() {
        let v = Vocoder::seeded(VocoderKind::Ngl, StftConfig::default(), 0).unwrap();
        let n = 16_000;
        let y = v.vocode(&sine_mags(n)).unwrap();
        assert_eq!(y.len(), n);
        let snr = spectral_snr(v.stft(), &sine_mags(n), &y, 4).unwrap();
        assert!(snr >= 20.0, "snr {snr}");
    }

    #[test]
    fn mg_wrapper_matches_generator_and_onset_is_one_hop_late() {
        let config = StftConfig::default();
        let store = Vocoder::seeded_store(VocoderKind::Mg, &config, 4).unwrap();
        let v = Vocoder::from_store(VocoderKind::Mg, config, &store).unwrap();
        let mg = MelGan::from_store(&store, 513).unwrap();
        let spec = crate::nncore::seeded_tensor(&[7, 513], 1, 1.0);
        assert_eq!(v.vocode(&spec).unwrap(), mg.generate(&spec).unwrap());

        // the first pair call only releases its first frame
        let mut st = v.stream();
        assert_eq!(v.push_frames(&mut st, &spec.slice_rows(0, 2)).unwrap().len(), 200);
        assert_eq!(v.push_frames(&mut st, &spec.slice_rows(2, 4)).unwrap().len(), 400);
    }

    #[test]
    fn mg_requires_two_hundred_sample_hop() {
        let config = StftConfig {
            hop: 160,
            ..StftConfig::default()
        };
        assert!(Vocoder::seeded(VocoderKind::Mg, config, 0).is_err());
        assert!(Vocoder::seeded(VocoderKind::Gl, config, 0).is_ok());
    }

    #[test]
    fn wrong_bin_count_is_rejected() {
        let v = Vocoder::seeded(VocoderKind::Gl, StftConfig::default(), 0).unwrap();
        assert!(v.push_frames(&mut v.stream(), &Tensor::zeros(&[2, 80])).is_err());
    }
}
