//! Autoregressive spectrogram decoder: PreNet, location-sensitive attention,
//! two LSTM layers, a projection emitting two frames per step, and a
//! residual PostNet.

mod attention;
mod postnet;

pub use attention::LocationAttention;
pub use postnet::{PostNet, POSTNET_LAYERS};

use crate::encoder::load_linear;
use crate::error::{Error, Result};
use crate::layout::{seeded_store, TensorSpec};
use crate::nncore::{
    lstm_step, observe_tensor, relu, sigmoid, ActivationProbe, ConvState, Linear, LstmParams, LstmState, NoProbe,
    SitePoint, Tensor,
};
use crate::quant::WeightStore;

pub const SEED_STREAM: u64 = 2;
/// Frames produced by every decoder step.
pub const FRAMES_PER_STEP: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub memory_dim: usize,
    pub prenet_units: usize,
    pub lstm_units: usize,
    pub out_dim: usize,
    pub frame_ms: f64,
    pub postnet_channels: usize,
    pub postnet_kernel: usize,
    pub causal_postnet: bool,
    pub att_filters: usize,
    pub att_kernel: usize,
    pub att_dim: usize,
    pub max_frames: usize,
}

impl DecoderConfig {
    /// Toy sizes: PreNet 256, LSTM 128, 513 bins, causal PostNet.
    pub fn new(memory_dim: usize) -> Self {
        Self {
            memory_dim,
            prenet_units: 256,
            lstm_units: 128,
            out_dim: 513,
            frame_ms: 12.5,
            postnet_channels: 64,
            postnet_kernel: 5,
            causal_postnet: true,
            att_filters: 32,
            att_kernel: 31,
            att_dim: 128,
            max_frames: 1000,
        }
    }

    pub fn layout(&self) -> Vec<TensorSpec> {
        let (p, h, d, o) = (self.prenet_units, self.lstm_units, self.memory_dim, self.out_dim);
        let mut out = vec![
            TensorSpec::uniform("dec.prenet.1.w", &[FRAMES_PER_STEP * o, p]),
            TensorSpec::uniform("dec.prenet.1.b", &[p]),
            TensorSpec::uniform("dec.prenet.2.w", &[p, p]),
            TensorSpec::uniform("dec.prenet.2.b", &[p]),
        ];
        out.extend(LocationAttention::layout(h, d, self.att_dim, self.att_filters, self.att_kernel));
        for (name, din) in [("dec.lstm1", p + d), ("dec.lstm2", h)] {
            out.push(TensorSpec::uniform(format!("{name}.w_ih"), &[din, 4 * h]));
            out.push(TensorSpec::uniform(format!("{name}.w_hh"), &[h, 4 * h]));
            out.push(TensorSpec::uniform(format!("{name}.b"), &[4 * h]));
        }
        out.push(TensorSpec::uniform("dec.proj.w", &[h + d, FRAMES_PER_STEP * o]));
        out.push(TensorSpec::uniform("dec.proj.b", &[FRAMES_PER_STEP * o]));
        out.push(TensorSpec::uniform("dec.stop.w", &[h + d, 1]));
        out.push(TensorSpec::uniform("dec.stop.b", &[1]));
        out.extend(PostNet::layout(o, self.postnet_channels, self.postnet_kernel));
        out
    }
}

/// Per-utterance decoder state.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub lstm1: LstmState,
    pub lstm2: LstmState,
    /// Previous projection output `[2, out_dim]`; zeros before the first step.
    pub prev_frames: Tensor,
    pub cumulative: Tensor,
    pub alignment: Tensor,
    pub postnet: Option<Vec<ConvState>>,
    pub steps: usize,
    pub stopped: bool,
    processed_memory: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Projection output before the PostNet, `[2, out_dim]`.
    pub frames: Tensor,
    pub stop_prob: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    /// PostNet over the whole sequence once decoding ends.
    Batch,
    /// Causal PostNet per step; every frame pair goes to the sink at once.
    Stream,
}

/// Receives PostNet-processed frames in order.
pub trait FrameSink {
    fn push_frames(&mut self, frames: &Tensor) -> Result<()>;
}

/// Discards frames.
#[derive(Debug, Default)]
pub struct NullFrameSink;

impl FrameSink for NullFrameSink {
    fn push_frames(&mut self, _frames: &Tensor) -> Result<()> {
        Ok(())
    }
}

/// Collects every pushed block.
#[derive(Debug, Default)]
pub struct CollectFrames {
    pub blocks: Vec<Tensor>,
}

impl FrameSink for CollectFrames {
    fn push_frames(&mut self, frames: &Tensor) -> Result<()> {
        self.blocks.push(frames.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    /// Final spectrogram `[2N, out_dim]` after the PostNet.
    pub spectrogram: Tensor,
    pub stop_probs: Vec<f32>,
    pub steps: usize,
    /// Decoding hit `max_frames` (or the forced length) without a stop.
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeOptions {
    pub mode: DecodeMode,
    pub max_frames: usize,
    /// Run exactly this many steps, ignoring the stop token.
    pub forced_steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    config: DecoderConfig,
    prenet1: Linear,
    prenet2: Linear,
    attention: LocationAttention,
    lstm1: LstmParams,
    lstm2: LstmParams,
    proj: Linear,
    stop: Linear,
    postnet: PostNet,
}

fn load_lstm(store: &WeightStore, name: &str, din: usize, h: usize) -> Result<LstmParams> {
    LstmParams::new(
        name,
        store.tensor(&format!("{name}.w_ih"), &[din, 4 * h])?,
        store.tensor(&format!("{name}.w_hh"), &[h, 4 * h])?,
        store.tensor(&format!("{name}.b"), &[4 * h])?,
    )
}

fn concat(a: &[f32], b: &[f32]) -> Tensor {
    Tensor::vector([a, b].concat())
}

impl Decoder {
    pub fn seeded_store(config: &DecoderConfig, seed: u64) -> Result<WeightStore> {
        seeded_store(&config.layout(), seed, SEED_STREAM)
    }

    pub fn seeded(config: DecoderConfig, seed: u64) -> Result<Self> {
        let store = Self::seeded_store(&config, seed)?;
        Self::from_store(config, &store)
    }

    pub fn from_store(config: DecoderConfig, store: &WeightStore) -> Result<Self> {
        let (p, h, d, o) = (config.prenet_units, config.lstm_units, config.memory_dim, config.out_dim);
        let two = FRAMES_PER_STEP * o;
        Ok(Self {
            prenet1: load_linear(store, "dec.prenet.1.w", "dec.prenet.1.b", two, p)?,
            prenet2: load_linear(store, "dec.prenet.2.w", "dec.prenet.2.b", p, p)?,
            attention: LocationAttention::from_store(store, h, d, config.att_dim, config.att_filters, config.att_kernel)?,
            lstm1: load_lstm(store, "dec.lstm1", p + d, h)?,
            lstm2: load_lstm(store, "dec.lstm2", h, h)?,
            proj: load_linear(store, "dec.proj.w", "dec.proj.b", h + d, two)?,
            stop: load_linear(store, "dec.stop.w", "dec.stop.b", h + d, 1)?,
            postnet: PostNet::from_store(store, o, config.postnet_channels, config.postnet_kernel, config.causal_postnet)?,
            config,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn postnet(&self) -> &PostNet {
        &self.postnet
    }

    pub fn attention(&self) -> &LocationAttention {
        &self.attention
    }

    /// Two ReLU layers over the flattened previous frame pair.
    pub fn prenet(&self, prev_frames: &Tensor, probe: &mut dyn ActivationProbe) -> Result<Tensor> {
        let flat = Tensor::vector(prev_frames.data().to_vec());
        let h = self.prenet1.forward(&flat, probe)?.map(relu);
        Ok(self.prenet2.forward(&h, probe)?.map(relu))
    }

    pub fn init_state(&self, memory: &Tensor) -> Result<DecoderState> {
        self.init_state_probed(memory, &mut NoProbe)
    }

    pub fn init_state_probed(&self, memory: &Tensor, probe: &mut dyn ActivationProbe) -> Result<DecoderState> {
        if memory.rank() != 2 || memory.rows() == 0 || memory.row_width() != self.config.memory_dim {
            return Err(Error::dim(
                "decoder memory",
                format!("{:?}, expected non-empty [M, {}]", memory.shape(), self.config.memory_dim),
            ));
        }
        let m = memory.rows();
        let h = self.config.lstm_units;
        Ok(DecoderState {
            lstm1: LstmState::zeros(h),
            lstm2: LstmState::zeros(h),
            prev_frames: Tensor::zeros(&[FRAMES_PER_STEP, self.config.out_dim]),
            cumulative: Tensor::zeros(&[m]),
            alignment: Tensor::zeros(&[m]),
            postnet: self.config.causal_postnet.then(|| self.postnet.stream_states()),
            steps: 0,
            stopped: false,
            processed_memory: self.attention.process_memory(memory, probe)?,
        })
    }

    fn lstm(&self, params: &LstmParams, x: Tensor, state: &LstmState, probe: &mut dyn ActivationProbe) -> Result<LstmState> {
        let mut x = x;
        observe_tensor(probe, &params.name, SitePoint::Input, &mut x)?;
        let (mut h, mut next) = lstm_step(x.data(), state, params)?;
        if probe.active() {
            observe_tensor(probe, &params.name, SitePoint::Output, &mut h)?;
            next.h = h;
        }
        Ok(next)
    }

    /// One autoregressive step. The attention query is the previous first
    /// LSTM output; the projection output becomes the next step's input.
    pub fn decode_step(
        &self,
        memory: &Tensor,
        state: &mut DecoderState,
        probe: &mut dyn ActivationProbe,
    ) -> Result<StepOutput> {
        if state.stopped {
            return Err(Error::State("decoder already emitted its stop token".into()));
        }
        if memory.rows() != state.cumulative.len() {
            return Err(Error::State(format!(
                "state was initialized for {} memory frames, got {}",
                state.cumulative.len(),
                memory.rows()
            )));
        }
        let (ctx, alignment) = self.attention.attend(
            &state.lstm1.h,
            memory,
            &state.processed_memory,
            &state.alignment,
            &state.cumulative,
            probe,
        )?;
        let pre = self.prenet(&state.prev_frames, probe)?;
        let l1 = self.lstm(&self.lstm1, concat(pre.data(), ctx.data()), &state.lstm1, probe)?;
        let l2 = self.lstm(&self.lstm2, l1.h.clone(), &state.lstm2, probe)?;
        let feat = concat(l2.h.data(), ctx.data());
        let frames = self
            .proj
            .forward(&feat, probe)?
            .reshape(&[FRAMES_PER_STEP, self.config.out_dim])?;
        let stop_prob = sigmoid(self.stop.forward(&feat, probe)?.data()[0]);
        frames.ensure_finite("decoder projection")?;

        state.cumulative = state.cumulative.add(&alignment)?;
        state.alignment = alignment;
        state.lstm1 = l1;
        state.lstm2 = l2;
        state.prev_frames = frames.clone();
        state.steps += 1;
        state.stopped = stop_prob > 0.5;
        Ok(StepOutput { frames, stop_prob })
    }

    /// Causal PostNet over one step's frames, threading the state's conv tails.
    pub fn postnet_step(&self, state: &mut DecoderState, frames: &Tensor, probe: &mut dyn ActivationProbe) -> Result<Tensor> {
        match state.postnet.as_mut() {
            Some(s) => self.postnet.forward(frames, Some(s), probe),
            None => Err(Error::Config("streaming decode needs a causal postnet".into())),
        }
    }

    pub fn options(&self, mode: DecodeMode) -> DecodeOptions {
        DecodeOptions {
            mode,
            max_frames: self.config.max_frames,
            forced_steps: None,
        }
    }

    pub fn decode(&self, memory: &Tensor, mode: DecodeMode, sink: &mut dyn FrameSink) -> Result<DecodeOutput> {
        self.decode_with(memory, &self.options(mode), sink, &mut NoProbe)
    }

    /// Steps until the stop probability exceeds 0.5 or `max_frames` frames
    /// exist (or exactly `forced_steps` steps).
    pub fn decode_with(
        &self,
        memory: &Tensor,
        options: &DecodeOptions,
        sink: &mut dyn FrameSink,
        probe: &mut dyn ActivationProbe,
    ) -> Result<DecodeOutput> {
        if options.mode == DecodeMode::Stream && !self.config.causal_postnet {
            return Err(Error::Config("streaming decode needs a causal postnet".into()));
        }
        let max_steps = options
            .forced_steps
            .unwrap_or(options.max_frames.div_ceil(FRAMES_PER_STEP));
        let mut state = self.init_state_probed(memory, probe)?;
        let out_dim = self.config.out_dim;
        let mut raw = Tensor::zeros(&[0, out_dim]);
        let mut post = Tensor::zeros(&[0, out_dim]);
        let mut stop_probs = Vec::new();
        let mut stopped = false;
        while state.steps < max_steps {
            let step = self.decode_step(memory, &mut state, probe)?;
            stop_probs.push(step.stop_prob);
            if options.mode == DecodeMode::Stream {
                let y = self.postnet_step(&mut state, &step.frames, probe)?;
                sink.push_frames(&y)?;
                post = post.concat_rows(&y)?;
            }
            raw = raw.concat_rows(&step.frames)?;
            if options.forced_steps.is_some() {
                state.stopped = false;
            } else if state.stopped {
                stopped = true;
                break;
            }
        }
        if options.mode == DecodeMode::Batch {
            post = self.postnet.forward(&raw, None, probe)?;
            sink.push_frames(&post)?;
        }
        Ok(DecodeOutput {
            spectrogram: post,
            stop_probs,
            steps: state.steps,
            truncated: !stopped,
        })
    }
}
