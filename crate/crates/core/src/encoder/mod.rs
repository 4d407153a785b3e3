//! Conformer encoder built from an [`ArchSpec`], with a whole-sequence path
//! and a chunked streaming path that produce the same frames.

mod block;
mod stacker;
mod stream;

pub use block::{ConformerBlock, ConvModule, FeedForward};
pub use stacker::Stacker;
pub use stream::EncoderStreamState;

pub(crate) use block::load_linear;

use crate::archdsl::{ArchSpec, LayerSpec};
use crate::error::{Error, Result};
use crate::layout::{seeded_store, TensorSpec};
use crate::nncore::{ActivationProbe, AttentionWindow, Linear, NoProbe, Tensor};
use crate::quant::WeightStore;

/// RNG stream used for seeded encoder weights.
pub const SEED_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub arch: ArchSpec,
    pub d_model: usize,
    pub n_heads: usize,
    pub conv_kernel: usize,
    pub ffn_expansion: usize,
    pub input_dim: usize,
    pub hop_ms: f64,
}

impl EncoderConfig {
    /// Toy dimensions: width 64, 4 heads, kernel 15, 80 input channels, 10 ms hop.
    pub fn new(arch: ArchSpec) -> Self {
        Self {
            arch,
            d_model: 64,
            n_heads: 4,
            conv_kernel: 15,
            ffn_expansion: 4,
            input_dim: 80,
            hop_ms: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.conv_kernel == 0 || self.ffn_expansion == 0 || self.input_dim == 0 {
            return Err(Error::Config("conv_kernel, ffn_expansion and input_dim must be positive".into()));
        }
        if self.arch.cb_count() == 0 {
            return Err(Error::Config("architecture has no conformer block".into()));
        }
        Ok(())
    }

    pub fn subsample_factor(&self) -> usize {
        self.arch.subsample_factor()
    }

    /// Every weight tensor the encoder needs, in initialization order.
    pub fn layout(&self) -> Vec<TensorSpec> {
        let d = self.d_model;
        let mut out = vec![
            TensorSpec::uniform("enc.in_proj.w", &[self.input_dim, d]),
            TensorSpec::uniform("enc.in_proj.b", &[d]),
        ];
        let (mut bi, mut si) = (0, 0);
        for layer in &self.arch.layers {
            match *layer {
                LayerSpec::Conformer { .. } => {
                    out.extend(ConformerBlock::layout(&format!("enc.block{bi}"), d, self.ffn_expansion, self.conv_kernel));
                    bi += 1;
                }
                LayerSpec::Stacker { right } => {
                    out.extend(Stacker::layout(&format!("enc.sl{si}"), d, right));
                    si += 1;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderLayer {
    Conformer(ConformerBlock),
    Stacker(Stacker),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
    in_proj: Linear,
    layers: Vec<EncoderLayer>,
    weights: WeightStore,
}

impl Encoder {
    pub fn seeded_store(config: &EncoderConfig, seed: u64) -> Result<WeightStore> {
        config.validate()?;
        seeded_store(&config.layout(), seed, SEED_STREAM)
    }

    /// Weights drawn uniformly from `[-0.1, 0.1]` (norm gains 1, biases 0).
    pub fn seeded(config: EncoderConfig, seed: u64) -> Result<Self> {
        let store = Self::seeded_store(&config, seed)?;
        Self::from_store(config, &store)
    }

    /// Builds from the `enc.*` tensors of `store`; quantized entries are
    /// dequantized.
    pub fn from_store(config: EncoderConfig, store: &WeightStore) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let in_proj = load_linear(store, "enc.in_proj.w", "enc.in_proj.b", config.input_dim, d)?;
        let (mut bi, mut si) = (0, 0);
        let mut layers = Vec::with_capacity(config.arch.layers.len());
        for layer in &config.arch.layers {
            match *layer {
                LayerSpec::Conformer { left, right } => {
                    layers.push(EncoderLayer::Conformer(ConformerBlock::from_store(
                        store,
                        &format!("enc.block{bi}"),
                        d,
                        config.ffn_expansion,
                        config.conv_kernel,
                        AttentionWindow::new(left, Some(right)),
                        config.n_heads,
                    )?));
                    bi += 1;
                }
                LayerSpec::Stacker { right } => {
                    layers.push(EncoderLayer::Stacker(Stacker::from_store(store, &format!("enc.sl{si}"), d, right)?));
                    si += 1;
                }
            }
        }
        let weights = store.subset("enc.").dequantized();
        Ok(Self {
            config,
            in_proj,
            layers,
            weights,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn layers(&self) -> &[EncoderLayer] {
        &self.layers
    }

    pub fn output_dim(&self) -> usize {
        self.config.d_model
    }

    pub fn subsample_factor(&self) -> usize {
        self.config.subsample_factor()
    }

    /// Output length for `t` input frames.
    pub fn output_len(&self, t: usize) -> usize {
        t.div_ceil(self.subsample_factor())
    }

    /// The `enc.*` weights this encoder was built from, as floats.
    pub fn weights(&self) -> &WeightStore {
        &self.weights
    }

    pub fn param_count(&self) -> usize {
        self.config.layout().iter().map(TensorSpec::numel).sum()
    }

    fn check_input(&self, feats: &Tensor) -> Result<()> {
        if feats.rank() != 2 || feats.shape()[1] != self.config.input_dim {
            return Err(Error::dim(
                "encoder",
                format!("features {:?}, expected [T, {}]", feats.shape(), self.config.input_dim),
            ));
        }
        Ok(())
    }

    pub fn encode_full(&self, feats: &Tensor) -> Result<Tensor> {
        self.encode_full_probed(feats, &mut NoProbe)
    }

    /// Whole-sequence encoding with an activation probe at every site.
    pub fn encode_full_probed(&self, feats: &Tensor, probe: &mut dyn ActivationProbe) -> Result<Tensor> {
        self.check_input(feats)?;
        if feats.rows() == 0 {
            return Err(Error::dim("encode_full", "input has no frames"));
        }
        let mut x = self.in_proj.forward(feats, probe)?;
        for layer in &self.layers {
            x = match layer {
                EncoderLayer::Conformer(b) => b.forward(&x, probe)?,
                EncoderLayer::Stacker(s) => s.forward(&x, probe)?,
            };
        }
        x.ensure_finite("encoder output")?;
        Ok(x)
    }

    pub fn stream_state(&self) -> EncoderStreamState {
        EncoderStreamState::new(self)
    }

    /// Pushes `chunk` through the streaming encoder and returns every frame
    /// whose look-ahead is now satisfied. `last` zero-pads and flushes.
    pub fn encode_stream(&self, state: &mut EncoderStreamState, chunk: &Tensor, last: bool) -> Result<Tensor> {
        self.encode_stream_probed(state, chunk, last, &mut NoProbe)
    }

    pub fn encode_stream_probed(
        &self,
        state: &mut EncoderStreamState,
        chunk: &Tensor,
        last: bool,
        probe: &mut dyn ActivationProbe,
    ) -> Result<Tensor> {
        self.check_input(chunk)?;
        state.push(self, chunk, last, probe)
    }
}
