//! End-to-end orchestration: encode while audio arrives, then run the
//! decoder and vocoder in streaming mode once the speaker stops.

mod frontend;
mod lookahead;
mod sink;

pub use frontend::{mel_filterbank, FrontEnd, FrontEndConfig, FrontEndStream};
pub use lookahead::{measure_lookahead, perceived_delay, probe_encoder};
pub use sink::{AudioSink, MemorySink, WavSink};

use crate::archdsl::ArchSpec;
use crate::decoder::{Decoder, DecoderConfig, DecoderState, DecodeMode, NullFrameSink, FRAMES_PER_STEP};
use crate::encoder::{Encoder, EncoderConfig, EncoderStreamState};
use crate::error::{Error, Result};
use crate::layout::TensorSpec;
use crate::nncore::{ActivationProbe, NoProbe, Tensor};
use crate::quant::WeightStore;
use crate::vocoder::{StftConfig, Vocoder, VocoderKind, VocoderStream};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub vocoder: VocoderKind,
    pub stft: StftConfig,
    pub frontend: FrontEndConfig,
}

impl PipelineConfig {
    /// Toy encoder and decoder sizes around `arch`, with matching shapes.
    pub fn new(arch: ArchSpec, vocoder: VocoderKind) -> Self {
        let encoder = EncoderConfig::new(arch);
        let stft = StftConfig::default();
        let decoder = DecoderConfig {
            out_dim: stft.bins(),
            ..DecoderConfig::new(encoder.d_model)
        };
        Self {
            encoder,
            decoder,
            vocoder,
            stft,
            frontend: FrontEndConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.stft.validate()?;
        self.frontend.validate()?;
        if self.decoder.memory_dim != self.encoder.d_model {
            return Err(Error::Config(format!(
                "decoder memory dim {} != encoder width {}",
                self.decoder.memory_dim, self.encoder.d_model
            )));
        }
        if self.decoder.out_dim != self.stft.bins() {
            return Err(Error::Config(format!(
                "decoder emits {} bins, vocoder expects {}",
                self.decoder.out_dim,
                self.stft.bins()
            )));
        }
        if self.encoder.input_dim != self.frontend.n_mels {
            return Err(Error::Config(format!(
                "encoder input dim {} != {} mel bands",
                self.encoder.input_dim, self.frontend.n_mels
            )));
        }
        if (self.encoder.hop_ms - self.frontend.hop_ms()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "encoder hop {} ms != front-end hop {} ms",
                self.encoder.hop_ms,
                self.frontend.hop_ms()
            )));
        }
        if self.stft.sample_rate != self.frontend.sample_rate {
            return Err(Error::Config("front-end and vocoder sample rates differ".into()));
        }
        Ok(())
    }

    /// Every weight tensor of the three networks.
    pub fn layout(&self) -> Vec<TensorSpec> {
        let mut out = self.encoder.layout();
        out.extend(self.decoder.layout());
        out.extend(Vocoder::layout(self.vocoder, &self.stft));
        out
    }
}

/// Everything the batch reference path produces.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub features: Tensor,
    pub memory: Tensor,
    pub spectrogram: Tensor,
    pub stop_probs: Vec<f32>,
    pub steps: usize,
    pub truncated: bool,
    pub wave: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    frontend: FrontEnd,
    encoder: Encoder,
    decoder: Decoder,
    vocoder: Vocoder,
}

impl Pipeline {
    pub fn seeded_store(config: &PipelineConfig, seed: u64) -> Result<WeightStore> {
        config.validate()?;
        let mut store = Encoder::seeded_store(&config.encoder, seed)?;
        store.merge(Decoder::seeded_store(&config.decoder, seed)?)?;
        store.merge(Vocoder::seeded_store(config.vocoder, &config.stft, seed)?)?;
        Ok(store)
    }

    pub fn seeded(config: PipelineConfig, seed: u64) -> Result<Self> {
        let store = Self::seeded_store(&config, seed)?;
        Self::from_store(config, &store)
    }

    pub fn from_store(config: PipelineConfig, store: &WeightStore) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            frontend: FrontEnd::new(config.frontend)?,
            encoder: Encoder::from_store(config.encoder.clone(), store)?,
            decoder: Decoder::from_store(config.decoder.clone(), store)?,
            vocoder: Vocoder::from_store(config.vocoder, config.stft, store)?,
            config,
        })
    }

    /// Same configuration, weights from `store`.
    pub fn with_weights(&self, store: &WeightStore) -> Result<Self> {
        Self::from_store(self.config.clone(), store)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn frontend(&self) -> &FrontEnd {
        &self.frontend
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn vocoder(&self) -> &Vocoder {
        &self.vocoder
    }

    pub fn reference_run(&self, audio: &[f32]) -> Result<PipelineOutput> {
        self.reference_run_probed(audio, &mut NoProbe)
    }

    /// Whole-utterance path: features, full encode, batch decode, vocode.
    /// `probe` sees every encoder and decoder activation site.
    pub fn reference_run_probed(&self, audio: &[f32], probe: &mut dyn ActivationProbe) -> Result<PipelineOutput> {
        let features = self.frontend.features(audio)?;
        if features.rows() == 0 {
            return Err(Error::Domain(format!(
                "empty memory: {} samples is shorter than one {}-sample hop",
                audio.len(),
                self.config.frontend.hop
            )));
        }
        let memory = self.encoder.encode_full_probed(&features, probe)?;
        let options = self.decoder.options(DecodeMode::Batch);
        let decoded = self.decoder.decode_with(&memory, &options, &mut NullFrameSink, probe)?;
        let wave = self.vocoder.vocode(&decoded.spectrogram)?;
        Ok(PipelineOutput {
            features,
            memory,
            spectrogram: decoded.spectrogram,
            stop_probs: decoded.stop_probs,
            steps: decoded.steps,
            truncated: decoded.truncated,
            wave,
        })
    }

    pub fn session<S: AudioSink>(&self, sink: S) -> StreamSession<'_, S> {
        StreamSession {
            pipeline: self,
            frontend: self.frontend.stream(),
            encoder: self.encoder.stream_state(),
            memory: Tensor::zeros(&[0, self.encoder.output_dim()]),
            phase: Phase::Listening,
            decoder: None,
            vocoder: self.vocoder.stream(),
            sink,
            samples_out: 0,
            stop_probs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Audio is arriving and being encoded.
    Listening,
    /// End of speech seen; decoder and vocoder are producing audio.
    Generating,
    Done,
}

/// One utterance through the streaming pipeline.
pub struct StreamSession<'p, S: AudioSink> {
    pipeline: &'p Pipeline,
    frontend: FrontEndStream,
    encoder: EncoderStreamState,
    memory: Tensor,
    phase: Phase,
    decoder: Option<DecoderState>,
    vocoder: VocoderStream,
    sink: S,
    samples_out: usize,
    stop_probs: Vec<f32>,
}

impl<S: AudioSink> StreamSession<'_, S> {
    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn memory(&self) -> &Tensor {
        &self.memory
    }

    pub fn sink(&self) -> &S {
        &self.sink
    }

    pub fn into_sink(self) -> S {
        self.sink
    }

    pub fn samples_out(&self) -> usize {
        self.samples_out
    }

    pub fn stop_probs(&self) -> &[f32] {
        &self.stop_probs
    }

    pub fn decoder_steps(&self) -> usize {
        self.decoder.as_ref().map_or(0, |d| d.steps)
    }

    fn expect(&self, phase: Phase, op: &str) -> Result<()> {
        if self.phase != phase {
            return Err(Error::State(format!("{op} needs phase {phase:?}, session is {:?}", self.phase)));
        }
        Ok(())
    }

    /// Encodes whatever the new samples complete; returns the number of
    /// memory frames added.
    pub fn feed_audio(&mut self, samples: &[f32]) -> Result<usize> {
        self.expect(Phase::Listening, "feed_audio")?;
        let feats = self.pipeline.frontend.push(&mut self.frontend, samples)?;
        let out = self.pipeline.encoder.encode_stream(&mut self.encoder, &feats, false)?;
        self.memory = self.memory.concat_rows(&out)?;
        Ok(out.rows())
    }

    /// Flushes the encoder and switches to generation.
    pub fn end_of_speech(&mut self) -> Result<()> {
        self.expect(Phase::Listening, "end_of_speech")?;
        let width = self.pipeline.encoder.config().input_dim;
        let out = self
            .pipeline
            .encoder
            .encode_stream(&mut self.encoder, &Tensor::zeros(&[0, width]), true)?;
        self.memory = self.memory.concat_rows(&out)?;
        if self.memory.rows() == 0 {
            self.phase = Phase::Done;
            return Err(Error::Domain("empty memory: no complete audio frame before end of speech".into()));
        }
        self.decoder = Some(self.pipeline.decoder.init_state(&self.memory)?);
        self.phase = Phase::Generating;
        Ok(())
    }

    /// One decoder step: two frames through the causal PostNet and the
    /// vocoder, 25 ms of audio to the sink. Returns `false` once done.
    pub fn generate_step(&mut self) -> Result<bool> {
        self.expect(Phase::Generating, "generate_step")?;
        let p = self.pipeline;
        let state = self.decoder.as_mut().expect("set when generating");
        let step = p.decoder.decode_step(&self.memory, state, &mut NoProbe)?;
        self.stop_probs.push(step.stop_prob);
        let frames = p.decoder.postnet_step(state, &step.frames, &mut NoProbe)?;
        let max_steps = p.decoder.config().max_frames.div_ceil(FRAMES_PER_STEP);
        let done = state.stopped || state.steps >= max_steps;
        let audio = p.vocoder.push_frames(&mut self.vocoder, &frames)?;
        self.emit(&audio)?;
        if done {
            let tail = p.vocoder.finish(&mut self.vocoder)?;
            self.emit(&tail)?;
            self.sink.finish()?;
            self.phase = Phase::Done;
            return Ok(false);
        }
        Ok(true)
    }

    /// Runs generation to completion.
    pub fn generate(&mut self) -> Result<()> {
        while self.generate_step()? {}
        Ok(())
    }

    fn emit(&mut self, audio: &[f32]) -> Result<()> {
        if !audio.is_empty() {
            self.sink.push_samples(audio)?;
            self.samples_out += audio.len();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archdsl::{named_config, parse_arch};
    use crate::quant::StoreEntry;

    fn small(arch: &str, vocoder: VocoderKind) -> PipelineConfig {
        let mut c = PipelineConfig::new(parse_arch(arch).unwrap(), vocoder);
        c.encoder.d_model = 16;
        c.encoder.n_heads = 2;
        c.encoder.conv_kernel = 5;
        c.encoder.ffn_expansion = 2;
        c.decoder = DecoderConfig {
            prenet_units: 32,
            lstm_units: 24,
            postnet_channels: 16,
            att_filters: 8,
            att_dim: 16,
            max_frames: 40,
            ..DecoderConfig::new(16)
        };
        c
    }

    /// Seeded pipeline whose stop token never fires, so decoding runs to
    /// the frame cap.
    fn never_stopping(config: PipelineConfig, seed: u64) -> Pipeline {
        let mut store = Pipeline::seeded_store(&config, seed).unwrap();
        for name in ["dec.stop.w", "dec.stop.b"] {
            let shape = store.get(name).unwrap().shape().to_vec();
            store.replace(name, StoreEntry::F32(Tensor::zeros(&shape))).unwrap();
        }
        Pipeline::from_store(config, &store).unwrap()
    }

    fn audio(n: usize, seed: u64) -> Vec<f32> {
        crate::nncore::seeded_tensor(&[n], seed, 0.3).into_data()
    }

    #[test]
    fn inconsistent_configs_are_rejected() {
        let mut c = small("CB SL CB", VocoderKind::Gl);
        c.decoder.memory_dim = 7;
        assert!(c.validate().is_err());
        let mut c = small("CB SL CB", VocoderKind::Gl);
        c.decoder.out_dim = 100;
        assert!(c.validate().is_err());
        let mut c = small("CB SL CB", VocoderKind::Gl);
        c.frontend.n_mels = 40;
        assert!(c.validate().is_err());
    }

    #[test]
    fn short_feeds_add_no_memory_and_causal_80ms_gives_two_frames() {
        let mut c = PipelineConfig::new(named_config("causal").unwrap(), VocoderKind::Gl);
        c.encoder.d_model = 16;
        c.encoder.n_heads = 2;
        c.decoder.memory_dim = 16;
        let p = Pipeline::seeded(c, 1).unwrap();
        let mut s = p.session(MemorySink::new());
        assert_eq!(s.feed_audio(&audio(100, 1)).unwrap(), 0);
        let mut s = p.session(MemorySink::new());
        assert_eq!(s.feed_audio(&audio(1280, 1)).unwrap(), 2);
    }

    #[test]
    fn split_feeds_equal_one_feed() {
        let p = Pipeline::seeded(small("CB_R2 SL CB_R1", VocoderKind::Gl), 3).unwrap();
        let x = audio(4000, 2);
        let mut one = p.session(MemorySink::new());
        one.feed_audio(&x).unwrap();
        one.end_of_speech().unwrap();
        let mut two = p.session(MemorySink::new());
        two.feed_audio(&x[..1234]).unwrap();
        two.feed_audio(&x[1234..]).unwrap();
        two.end_of_speech().unwrap();
        assert!(one.memory().max_abs_diff(two.memory()) <= 1e-4);
        assert_eq!(one.memory().rows(), 25usize.div_ceil(2));
    }

    #[test]
    fn phase_errors() {
        let p = Pipeline::seeded(small("CB SL CB", VocoderKind::Gl), 3).unwrap();
        let mut s = p.session(MemorySink::new());
        assert!(s.generate_step().is_err());
        let err = s.end_of_speech().unwrap_err();
        assert!(err.to_string().contains("empty memory"));
        assert!(s.end_of_speech().is_err());
        assert!(s.feed_audio(&[0.0; 10]).is_err());

        let mut s = p.session(MemorySink::new());
        s.feed_audio(&audio(800, 1)).unwrap();
        s.end_of_speech().unwrap();
        assert!(s.end_of_speech().is_err());
        assert!(s.feed_audio(&[0.0]).is_err());
        s.generate().unwrap();
        assert_eq!(s.phase(), Phase::Done);
        assert!(s.generate_step().is_err());
        assert!(p.reference_run(&[0.0; 100]).is_err());
    }

    fn stream_vs_reference(vocoder: VocoderKind) {
        let p = never_stopping(small("CB_R1 SL CB", vocoder), 5);
        let x = audio(16_000, 6);
        let reference = p.reference_run(&x).unwrap();
        let mut s = p.session(MemorySink::new());
        for chunk in x.chunks(1280) {
            s.feed_audio(chunk).unwrap();
        }
        s.end_of_speech().unwrap();
        s.generate().unwrap();
        assert_eq!(reference.steps, 20);
        assert_eq!(s.decoder_steps(), reference.steps);
        let sink = s.into_sink();
        assert!(sink.finished);
        assert_eq!(sink.samples.len(), reference.wave.len());
        let diff = sink
            .samples
            .iter()
            .zip(&reference.wave)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(diff <= 1e-3, "{vocoder}: max diff {diff}");
    }

    #[test]
    fn streaming_gl_matches_reference() {
        stream_vs_reference(VocoderKind::Gl);
    }

    #[test]
    fn streaming_mg_matches_reference() {
        stream_vs_reference(VocoderKind::Mg);
    }

    #[test]
    fn generation_chunks_are_one_step_of_audio() {
        let p = never_stopping(small("CB SL CB", VocoderKind::Mg), 8);
        let mut s = p.session(MemorySink::new());
        s.feed_audio(&audio(3200, 1)).unwrap();
        s.end_of_speech().unwrap();
        let mut sizes = Vec::new();
        while s.generate_step().unwrap() {
            sizes.push(*s.sink().chunks.last().unwrap());
        }
        // first call releases one frame, then 25 ms per step
        assert_eq!(sizes[0], 200);
        assert_eq!(sizes.len(), 19);
        assert!(sizes[1..].iter().all(|&n| n == 400));
    }
}
