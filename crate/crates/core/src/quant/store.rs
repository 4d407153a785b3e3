//! Named tensor collection and its binary file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! header   "STSW" | version u32 = 1 | tensor_count u32 | reserved u32 = 0
//! tensor   name_len u16 | name utf-8 | dtype u8 (0 f32, 1 i8, 2 i4) | rank u8
//!          | dims rank x u32 | params_len u32 | params | payload_len u32 | payload
//! params   scales f32 x channels, then zero_points i32 x (0 | channels)
//! ```
//!
//! `channels` is the last dimension (1 for scalars). Float tensors carry no
//! params.

use std::path::Path;

use indexmap::IndexMap;

use super::scheme::{channel_count, QuantBits, QuantParams, QuantScheme, QuantizedTensor};
use crate::error::{Error, Result};
use crate::nncore::Tensor;

pub const MAGIC: &[u8; 4] = b"STSW";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    I8,
    I4,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::I8 => 1,
            DType::I4 => 2,
        }
    }

    fn from_code(code: u8, offset: usize) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::I8),
            2 => Ok(DType::I4),
            other => Err(Error::Format {
                offset,
                message: format!("unknown dtype code {other}"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoreEntry {
    F32(Tensor),
    Quantized(QuantizedTensor),
}

impl StoreEntry {
    pub fn dtype(&self) -> DType {
        match self {
            StoreEntry::F32(_) => DType::F32,
            StoreEntry::Quantized(q) => match q.params.bits {
                QuantBits::Int8 => DType::I8,
                QuantBits::Int4 => DType::I4,
            },
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            StoreEntry::F32(t) => t.shape(),
            StoreEntry::Quantized(q) => &q.shape,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape().iter().product()
    }

    /// Float view; quantized entries are dequantized.
    pub fn to_tensor(&self) -> Tensor {
        match self {
            StoreEntry::F32(t) => t.clone(),
            StoreEntry::Quantized(q) => q.dequantize(),
        }
    }

    fn params_len(&self) -> usize {
        match self {
            StoreEntry::F32(_) => 0,
            StoreEntry::Quantized(q) => 4 * (q.params.scales.len() + q.params.zero_points.len()),
        }
    }

    fn payload_len(&self) -> usize {
        match self {
            StoreEntry::F32(t) => 4 * t.len(),
            StoreEntry::Quantized(q) => q.payload.len(),
        }
    }
}

/// Ordered map from tensor name to entry; names are unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    entries: IndexMap<String, StoreEntry>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, entry: StoreEntry) -> Result<()> {
        let name = name.into();
        if name.len() > u16::MAX as usize {
            return Err(Error::Build(format!("tensor name of {} bytes is too long", name.len())));
        }
        if self.entries.contains_key(&name) {
            return Err(Error::Build(format!("duplicate tensor name {name}")));
        }
        self.entries.insert(name, entry);
        Ok(())
    }

    pub fn insert_f32(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        self.insert(name, StoreEntry::F32(tensor))
    }

    /// Replaces an existing entry, keeping its position.
    pub fn replace(&mut self, name: &str, entry: StoreEntry) -> Result<()> {
        match self.entries.get_mut(name) {
            Some(slot) => {
                *slot = entry;
                Ok(())
            }
            None => Err(Error::Build(format!("missing tensor {name}"))),
        }
    }

    pub fn remove(&mut self, name: &str) -> Option<StoreEntry> {
        self.entries.shift_remove(name)
    }

    pub fn get(&self, name: &str) -> Option<&StoreEntry> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &StoreEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Float tensor `name`, checked against `shape`.
    pub fn tensor(&self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let entry = self
            .get(name)
            .ok_or_else(|| Error::Build(format!("missing tensor {name}")))?;
        if entry.shape() != shape {
            return Err(Error::Build(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                entry.shape(),
                shape
            )));
        }
        Ok(entry.to_tensor())
    }

    pub fn param_count(&self) -> usize {
        self.entries.values().map(StoreEntry::numel).sum()
    }

    /// Copy with every quantized entry replaced by its float dequantization.
    pub fn dequantized(&self) -> WeightStore {
        WeightStore {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), StoreEntry::F32(v.to_tensor())))
                .collect(),
        }
    }

    /// Entries whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> WeightStore {
        WeightStore {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Appends all entries of `other`; fails on a name clash.
    pub fn merge(&mut self, other: WeightStore) -> Result<()> {
        for (k, v) in other.entries {
            self.insert(k, v)?;
        }
        Ok(())
    }

    /// Exact byte length of [`WeightStore::to_bytes`].
    pub fn serialized_size(&self) -> usize {
        HEADER_LEN
            + self
                .entries
                .iter()
                .map(|(name, e)| 2 + name.len() + 2 + 4 * e.shape().len() + 4 + e.params_len() + 4 + e.payload_len())
                .sum::<usize>()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for (name, entry) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(entry.dtype().code());
            out.push(entry.shape().len() as u8);
            for &d in entry.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&(entry.params_len() as u32).to_le_bytes());
            if let StoreEntry::Quantized(q) = entry {
                for s in &q.params.scales {
                    out.extend_from_slice(&s.to_le_bytes());
                }
                for z in &q.params.zero_points {
                    out.extend_from_slice(&z.to_le_bytes());
                }
            }
            out.extend_from_slice(&(entry.payload_len() as u32).to_le_bytes());
            match entry {
                StoreEntry::F32(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                StoreEntry::Quantized(q) => out.extend_from_slice(&q.payload),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "bad magic, expected STSW".into(),
            });
        }
        let version_at = r.pos;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format {
                offset: version_at,
                message: format!("unsupported version {version}"),
            });
        }
        let count = r.u32()?;
        let reserved_at = r.pos;
        if r.u32()? != 0 {
            return Err(Error::Format {
                offset: reserved_at,
                message: "reserved header field must be 0".into(),
            });
        }
        let mut store = WeightStore::new();
        for _ in 0..count {
            let name_at = r.pos;
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format {
                    offset: name_at + 2,
                    message: "tensor name is not UTF-8".into(),
                })?
                .to_string();
            let dtype_at = r.pos;
            let dtype = DType::from_code(r.u8()?, dtype_at)?;
            let rank_at = r.pos;
            let rank = r.u8()? as usize;
            if rank > Tensor::MAX_RANK {
                return Err(Error::Format {
                    offset: rank_at,
                    message: format!("rank {rank} exceeds {}", Tensor::MAX_RANK),
                });
            }
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let channels = channel_count(&shape);

            let params_at = r.pos;
            let params_len = r.u32()? as usize;
            let params = r.take(params_len)?;
            let payload_at = r.pos;
            let payload_len = r.u32()? as usize;
            let payload = r.take(payload_len)?;

            let expected_payload = match dtype {
                DType::F32 => 4 * numel,
                DType::I8 => numel,
                DType::I4 => numel.div_ceil(2),
            };
            if payload_len != expected_payload {
                return Err(Error::Format {
                    offset: payload_at,
                    message: format!("{name}: payload of {payload_len} bytes, expected {expected_payload}"),
                });
            }
            let entry = match dtype {
                DType::F32 => {
                    if params_len != 0 {
                        return Err(Error::Format {
                            offset: params_at,
                            message: format!("{name}: float tensor with quantization params"),
                        });
                    }
                    let data = payload
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                        .collect();
                    StoreEntry::F32(Tensor::new(&shape, data).expect("payload length checked"))
                }
                DType::I8 | DType::I4 => {
                    let scheme = if params_len == 4 * channels {
                        QuantScheme::PerChannelSymmetric
                    } else if params_len == 8 * channels {
                        QuantScheme::PerTensorAffine
                    } else {
                        return Err(Error::Format {
                            offset: params_at,
                            message: format!("{name}: params of {params_len} bytes for {channels} channels"),
                        });
                    };
                    let words: Vec<[u8; 4]> = params
                        .chunks_exact(4)
                        .map(|c| c.try_into().expect("4-byte chunk"))
                        .collect();
                    let scales = words[..channels].iter().map(|w| f32::from_le_bytes(*w)).collect();
                    let zero_points = words[channels..].iter().map(|w| i32::from_le_bytes(*w)).collect();
                    let bits = if dtype == DType::I8 { QuantBits::Int8 } else { QuantBits::Int4 };
                    StoreEntry::Quantized(QuantizedTensor {
                        shape,
                        params: QuantParams {
                            bits,
                            scheme,
                            scales,
                            zero_points,
                        },
                        payload: payload.to_vec(),
                    })
                }
            };
            store.insert(name, entry).map_err(|e| Error::Format {
                offset: name_at,
                message: e.to_string(),
            })?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos,
                message: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos,
                message: format!("truncated: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::seeded_tensor;
    use crate::quant::quantize_per_channel;
    use proptest::prelude::*;

    #[test]
    fn empty_store_is_header_only() {
        let s = WeightStore::new();
        assert_eq!(s.serialized_size(), 16);
        assert_eq!(s.to_bytes(), b"STSW\x01\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00");
    }

    #[test]
    fn payload_arithmetic_per_dtype() {
        let t = seeded_tensor(&[1000, 1], 1, 1.0);
        let mut f = WeightStore::new();
        f.insert_f32("w", t.clone()).unwrap();
        let fixed = 16 + 2 + 1 + 2 + 8 + 4 + 4;
        assert_eq!(f.serialized_size(), fixed + 4000);
        for (bits, payload) in [(QuantBits::Int8, 1000), (QuantBits::Int4, 500)] {
            let mut q = WeightStore::new();
            q.insert("w", StoreEntry::Quantized(quantize_per_channel(&t, bits))).unwrap();
            // one channel -> one f32 scale
            assert_eq!(q.serialized_size(), fixed + payload + 4);
            assert_eq!(q.to_bytes().len(), q.serialized_size());
        }
    }

    #[test]
    fn format_errors_report_offsets() {
        let mut s = WeightStore::new();
        s.insert_f32("a", Tensor::zeros(&[2])).unwrap();
        let bytes = s.to_bytes();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(WeightStore::from_bytes(&bad_magic), Err(Error::Format { offset: 0, .. })));

        let mut bad_version = bytes.clone();
        bad_version[4] = 2;
        assert!(matches!(WeightStore::from_bytes(&bad_version), Err(Error::Format { offset: 4, .. })));

        let truncated = &bytes[..bytes.len() - 3];
        match WeightStore::from_bytes(truncated) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, bytes.len() - 8),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shape_checked_lookup() {
        let mut s = WeightStore::new();
        s.insert_f32("enc.x", Tensor::zeros(&[2, 3])).unwrap();
        assert!(s.tensor("enc.x", &[2, 3]).is_ok());
        assert!(s.tensor("enc.x", &[3, 2]).unwrap_err().to_string().contains("enc.x"));
        assert!(s.tensor("enc.y", &[1]).unwrap_err().to_string().contains("missing tensor enc.y"));
        assert!(s.insert_f32("enc.x", Tensor::zeros(&[1])).is_err());
    }

    fn entry_strategy() -> impl Strategy<Value = StoreEntry> {
        let shape = prop::collection::vec(1usize..6, 0..=3);
        (shape, any::<u64>(), 0u8..3).prop_map(|(shape, seed, kind)| {
            let t = seeded_tensor(&shape, seed, 2.0);
            match kind {
                0 => StoreEntry::F32(t),
                1 => StoreEntry::Quantized(quantize_per_channel(&t, QuantBits::Int8)),
                _ => StoreEntry::Quantized(quantize_per_channel(&t, QuantBits::Int4)),
            }
        })
    }

    proptest! {
        #[test]
        fn save_load_is_bit_identical(entries in prop::collection::vec(entry_strategy(), 0..8)) {
            let mut store = WeightStore::new();
            for (i, e) in entries.into_iter().enumerate() {
                store.insert(format!("t{i}.w"), e).unwrap();
            }
            let bytes = store.to_bytes();
            prop_assert_eq!(bytes.len(), store.serialized_size());
            let back = WeightStore::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            prop_assert_eq!(back, store);
        }
    }
}
