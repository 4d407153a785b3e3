//! Post-training quantization: per-channel weight quantization, activation
//! calibration, fake-quantized execution, and the weight file format.

mod scheme;
mod store;

pub use scheme::{
    pack_i4, quantize_per_channel, unpack_i4, QuantBits, QuantParams, QuantScheme, QuantizedTensor, AFFINE_MAX,
    AFFINE_MIN, DEGENERATE_RANGE,
};
pub use store::{DType, StoreEntry, WeightStore, HEADER_LEN, MAGIC, VERSION};

use std::str::FromStr;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::nncore::{site_key, ActivationProbe, SitePoint, Tensor};
use crate::runtime::{Pipeline, PipelineOutput};

/// Which tensors `quantize_weights` touches, by name prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Encoder,
    Decoder,
    All,
}

impl Scope {
    pub fn matches(self, name: &str) -> bool {
        match self {
            Scope::Encoder => name.starts_with("enc."),
            Scope::Decoder => name.starts_with("dec."),
            Scope::All => true,
        }
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "enc" => Ok(Scope::Encoder),
            "dec" => Ok(Scope::Decoder),
            "all" => Ok(Scope::All),
            other => Err(Error::Config(format!("unknown scope {other:?} (expected enc, dec or all)"))),
        }
    }
}

/// Width actually used for `name` when `bits` is requested. Int4 is only
/// applied to encoder matrices; everything else in scope falls back to int8.
pub fn effective_bits(name: &str, bits: QuantBits) -> QuantBits {
    if bits == QuantBits::Int4 && !name.starts_with("enc.") {
        QuantBits::Int8
    } else {
        bits
    }
}

/// Quantizes every float matrix/conv kernel (rank ≥ 2) in scope. Vectors
/// (biases, norm parameters) stay float.
pub fn quantize_weights(store: &WeightStore, bits: QuantBits, scope: Scope) -> Result<WeightStore> {
    let mut out = WeightStore::new();
    for (name, entry) in store.iter() {
        let next = match entry {
            StoreEntry::F32(t) if scope.matches(name) && t.rank() >= 2 => {
                StoreEntry::Quantized(quantize_per_channel(t, effective_bits(name, bits)))
            }
            StoreEntry::Quantized(q) if scope.matches(name) => {
                return Err(Error::Quant(format!(
                    "{name} is already quantized to int{}; quantize from a float store",
                    q.params.bits.bits()
                )))
            }
            other => other.clone(),
        };
        out.insert(name, next)?;
    }
    Ok(out)
}

/// Affine int8 parameters per activation site, keyed by [`site_key`].
pub type ActivationParams = IndexMap<String, QuantParams>;

/// Probe recording the running min/max of every site it sees.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActivationRecorder {
    pub ranges: IndexMap<String, (f32, f32)>,
}

impl ActivationRecorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, key: &str, values: &[f32]) {
        let (lo, hi) = values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if lo > hi {
            return;
        }
        let slot = self.ranges.entry(key.to_string()).or_insert((lo, hi));
        slot.0 = slot.0.min(lo);
        slot.1 = slot.1.max(hi);
    }

    /// Union of two recordings, site by site.
    pub fn merge(&mut self, other: &ActivationRecorder) {
        for (key, &(lo, hi)) in &other.ranges {
            self.record(key, &[lo, hi]);
        }
    }

    pub fn params(&self) -> Result<ActivationParams> {
        self.ranges
            .iter()
            .map(|(k, &(lo, hi))| Ok((k.clone(), QuantParams::affine_from_range(lo, hi)?)))
            .collect()
    }
}

impl ActivationProbe for ActivationRecorder {
    fn observe(&mut self, layer: &str, point: SitePoint, values: &mut [f32]) -> Result<()> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite activation at {}", site_key(layer, point))));
        }
        self.record(&site_key(layer, point), values);
        Ok(())
    }
}

/// Probe applying int8 quantize-dequantize at every site.
#[derive(Debug, Clone, Copy)]
pub struct FakeQuantProbe<'a> {
    pub params: &'a ActivationParams,
}

impl ActivationProbe for FakeQuantProbe<'_> {
    fn observe(&mut self, layer: &str, point: SitePoint, values: &mut [f32]) -> Result<()> {
        let key = site_key(layer, point);
        let p = self
            .params
            .get(&key)
            .ok_or_else(|| Error::Quant(format!("no activation parameters for site {key}")))?;
        p.fake_quant(values);
        Ok(())
    }
}

/// Encoder forward pass on features with weights from `store` and optional
/// activation fake quantization.
pub fn fake_quant_encode(
    encoder: &crate::encoder::Encoder,
    store: &WeightStore,
    activations: Option<&ActivationParams>,
    feats: &Tensor,
) -> Result<Tensor> {
    let quantized = crate::encoder::Encoder::from_store(encoder.config().clone(), store)?;
    match activations {
        Some(params) => quantized.encode_full_probed(feats, &mut FakeQuantProbe { params }),
        None => quantized.encode_full(feats),
    }
}

/// Runs the batch reference pipeline over each utterance and turns the
/// observed ranges into affine parameters.
pub fn calibrate_activations(pipeline: &Pipeline, utterances: &[Vec<f32>]) -> Result<ActivationParams> {
    if utterances.is_empty() {
        return Err(Error::Quant("calibration needs at least one utterance".into()));
    }
    let mut recorder = ActivationRecorder::new();
    for audio in utterances {
        pipeline.reference_run_probed(audio, &mut recorder)?;
    }
    recorder.params()
}

/// Batch pipeline run with weights taken from `store` (dequantized from
/// their payloads) and, when given, activation fake quantization.
pub fn fake_quant_run(
    pipeline: &Pipeline,
    store: &WeightStore,
    activations: Option<&ActivationParams>,
    audio: &[f32],
) -> Result<PipelineOutput> {
    let quantized = pipeline.with_weights(store)?;
    match activations {
        Some(params) => quantized.reference_run_probed(audio, &mut FakeQuantProbe { params }),
        None => quantized.reference_run(audio),
    }
}
