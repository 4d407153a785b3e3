use crate::error::{Error, Result};
use crate::nncore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QuantBits {
    Int4,
    Int8,
}

impl QuantBits {
    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            4 => Ok(QuantBits::Int4),
            8 => Ok(QuantBits::Int8),
            other => Err(Error::Quant(format!("unsupported bit width {other} (expected 4 or 8)"))),
        }
    }

    pub fn bits(self) -> u32 {
        match self {
            QuantBits::Int4 => 4,
            QuantBits::Int8 => 8,
        }
    }

    /// Largest magnitude of the symmetric range: `[-7, 7]` or `[-127, 127]`.
    pub fn symmetric_max(self) -> i32 {
        match self {
            QuantBits::Int4 => 7,
            QuantBits::Int8 => 127,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantScheme {
    /// One scale and zero point for the whole tensor; activations.
    PerTensorAffine,
    /// One scale per output channel (last axis), zero point fixed at 0; weights.
    PerChannelSymmetric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantParams {
    pub bits: QuantBits,
    pub scheme: QuantScheme,
    pub scales: Vec<f32>,
    /// Empty for symmetric schemes.
    pub zero_points: Vec<i32>,
}

pub const AFFINE_MIN: i32 = -128;
pub const AFFINE_MAX: i32 = 127;
/// Half-width of the range substituted for an all-zero activation site.
pub const DEGENERATE_RANGE: f32 = 1e-3;

impl QuantParams {
    /// int8 affine parameters covering `[min, max]` (widened to include 0).
    pub fn affine_from_range(min: f32, max: f32) -> Result<Self> {
        if !min.is_finite() || !max.is_finite() || min > max {
            return Err(Error::Quant(format!("invalid activation range [{min}, {max}]")));
        }
        let (mut lo, mut hi) = (min.min(0.0), max.max(0.0));
        if lo == hi {
            lo = -DEGENERATE_RANGE;
            hi = DEGENERATE_RANGE;
        }
        let scale = (hi - lo) / (AFFINE_MAX - AFFINE_MIN) as f32;
        let zp = (AFFINE_MIN as f32 - (lo / scale).round()) as i32;
        Ok(Self {
            bits: QuantBits::Int8,
            scheme: QuantScheme::PerTensorAffine,
            scales: vec![scale],
            zero_points: vec![zp.clamp(AFFINE_MIN, AFFINE_MAX)],
        })
    }

    /// Quantize-dequantize in place with the per-tensor affine mapping.
    pub fn fake_quant(&self, values: &mut [f32]) {
        let scale = self.scales[0];
        let zp = self.zero_points.first().copied().unwrap_or(0);
        for v in values {
            let q = ((*v / scale).round() as i32 + zp).clamp(AFFINE_MIN, AFFINE_MAX);
            *v = (q - zp) as f32 * scale;
        }
    }

    pub fn quantize_value(&self, v: f32) -> i32 {
        let zp = self.zero_points.first().copied().unwrap_or(0);
        ((v / self.scales[0]).round() as i32 + zp).clamp(AFFINE_MIN, AFFINE_MAX)
    }
}

/// Integer payload of a quantized tensor. Int4 values are nibble-packed,
/// element `2i` in the low nibble of byte `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub shape: Vec<usize>,
    pub params: QuantParams,
    pub payload: Vec<u8>,
}

impl QuantizedTensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn values(&self) -> Vec<i8> {
        match self.params.bits {
            QuantBits::Int8 => self.payload.iter().map(|&b| b as i8).collect(),
            QuantBits::Int4 => unpack_i4(&self.payload, self.numel()),
        }
    }

    pub fn dequantize(&self) -> Tensor {
        let channels = channel_count(&self.shape);
        let scales = &self.params.scales;
        let data = self
            .values()
            .into_iter()
            .enumerate()
            .map(|(i, q)| q as f32 * scales[i % channels])
            .collect();
        Tensor::new(&self.shape, data).expect("payload length matches shape")
    }
}

pub(crate) fn channel_count(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1).max(1)
}

pub fn pack_i4(values: &[i8]) -> Vec<u8> {
    values
        .chunks(2)
        .map(|pair| {
            let lo = (pair[0] as u8) & 0x0f;
            let hi = pair.get(1).map_or(0, |&v| (v as u8) & 0x0f);
            lo | (hi << 4)
        })
        .collect()
}

pub fn unpack_i4(bytes: &[u8], n: usize) -> Vec<i8> {
    let sign_extend = |nibble: u8| ((nibble << 4) as i8) >> 4;
    (0..n)
        .map(|i| {
            let b = bytes[i / 2];
            sign_extend(if i % 2 == 0 { b & 0x0f } else { b >> 4 })
        })
        .collect()
}

/// Symmetric per-output-channel quantization along the last axis.
///
/// `scale = max|w| / qmax`; an all-zero channel gets scale 1.
pub fn quantize_per_channel(t: &Tensor, bits: QuantBits) -> QuantizedTensor {
    let channels = channel_count(t.shape());
    let qmax = bits.symmetric_max();
    let mut max_abs = vec![0.0f32; channels];
    for (i, v) in t.data().iter().enumerate() {
        let c = i % channels;
        max_abs[c] = max_abs[c].max(v.abs());
    }
    let scales: Vec<f32> = max_abs
        .iter()
        .map(|&m| if m > 0.0 { m / qmax as f32 } else { 1.0 })
        .collect();
    let q: Vec<i8> = t
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| ((v / scales[i % channels]).round() as i32).clamp(-qmax, qmax) as i8)
        .collect();
    let payload = match bits {
        QuantBits::Int8 => q.iter().map(|&v| v as u8).collect(),
        QuantBits::Int4 => pack_i4(&q),
    };
    QuantizedTensor {
        shape: t.shape().to_vec(),
        params: QuantParams {
            bits,
            scheme: QuantScheme::PerChannelSymmetric,
            scales,
            zero_points: Vec::new(),
        },
        payload,
    }
}
