use std::collections::HashMap;
use std::path::Path;

use super::format::{self, FormatError, Reader, Writer};

pub const CACHE_MAGIC: &[u8; 8] = b"RDCACHE\0";
pub const BANK_MAGIC: &[u8; 8] = b"RDBANK\0\0";

/// Precomputed teacher features, one fixed-width record per image.
///
/// Body grammar:
/// ```text
/// n u64 | d u32 | teacher_id (u16 len + utf8) | seed u64
/// n x { image_id u64, d x f32 }
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    pub teacher_id: String,
    pub seed: u64,
    pub dim: usize,
    ids: Vec<u64>,
    features: Vec<f32>,
    index: HashMap<u64, usize>,
}

impl FeatureCache {
    pub fn new(teacher_id: impl Into<String>, seed: u64, dim: usize) -> Self {
        FeatureCache { teacher_id: teacher_id.into(), seed, dim, ids: Vec::new(), features: Vec::new(), index: HashMap::new() }
    }

    pub fn push(&mut self, id: u64, feature: &[f32]) -> Result<(), FormatError> {
        if feature.len() != self.dim {
            return Err(FormatError::Malformed(format!("feature width {} != declared {}", feature.len(), self.dim)));
        }
        if self.index.insert(id, self.ids.len()).is_some() {
            return Err(FormatError::Malformed(format!("duplicate image id {id}")));
        }
        self.ids.push(id);
        self.features.extend_from_slice(feature);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn lookup(&self, id: u64) -> Option<&[f32]> {
        self.index.get(&id).map(|&i| &self.features[i * self.dim..(i + 1) * self.dim])
    }

    pub(crate) fn encode_into(&self, w: &mut Writer) {
        w.u64(self.ids.len() as u64);
        w.u32(self.dim as u32);
        w.short_str(&self.teacher_id);
        w.u64(self.seed);
        for (i, &id) in self.ids.iter().enumerate() {
            w.u64(id);
            for &v in &self.features[i * self.dim..(i + 1) * self.dim] {
                w.f32(v);
            }
        }
    }

    pub(crate) fn decode_from(r: &mut Reader<'_>) -> Result<Self, FormatError> {
        let n = r.u64("record count")?;
        let dim = r.u32("feature width")? as usize;
        let teacher_id = r.short_str("teacher id")?;
        let seed = r.u64("seed")?;
        let record = dim.checked_mul(4).and_then(|b| b.checked_add(8)).ok_or_else(|| FormatError::Malformed("width overflow".into()))?;
        let total = usize::try_from(n)
            .ok()
            .and_then(|n| n.checked_mul(record))
            .ok_or_else(|| FormatError::Malformed("record count overflow".into()))?;
        if total > r.remaining() {
            return Err(FormatError::Malformed(format!("{n} records of {record} bytes exceed body")));
        }
        let mut cache = FeatureCache::new(teacher_id, seed, dim);
        let mut row = vec![0f32; dim];
        for _ in 0..n {
            let id = r.u64("image id")?;
            let raw = r.take(dim * 4, "feature")?;
            for (dst, chunk) in row.iter_mut().zip(raw.chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().expect("4"));
            }
            cache.push(id, &row)?;
        }
        Ok(cache)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        self.encode_into(&mut w);
        format::frame(CACHE_MAGIC, &w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(format::unframe(CACHE_MAGIC, bytes)?);
        let cache = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(cache)
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        format::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&format::read_file(path)?)
    }
}

/// On-disk form of a labelled feature bank: the cache body, then
/// `layer (u16 len + utf8) | normalized u8 | n x label u32`.
#[derive(Debug, Clone, PartialEq)]
pub struct BankFile {
    pub features: FeatureCache,
    pub layer: String,
    pub normalized: bool,
    pub labels: Vec<u32>,
}

impl BankFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        self.features.encode_into(&mut w);
        w.short_str(&self.layer);
        w.u8(self.normalized as u8);
        for &l in &self.labels {
            w.u32(l);
        }
        format::frame(BANK_MAGIC, &w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(format::unframe(BANK_MAGIC, bytes)?);
        let features = FeatureCache::decode_from(&mut r)?;
        let layer = r.short_str("layer name")?;
        let normalized = match r.u8("normalized flag")? {
            0 => false,
            1 => true,
            other => return Err(FormatError::Malformed(format!("normalized flag {other}"))),
        };
        let n = features.len();
        if n.checked_mul(4).is_none_or(|b| b != r.remaining()) {
            return Err(FormatError::Malformed(format!("label block holds {} bytes for {n} labels", r.remaining())));
        }
        let labels = (0..n).map(|_| r.u32("label")).collect::<Result<Vec<_>, _>>()?;
        r.finish()?;
        Ok(BankFile { features, layer, normalized, labels })
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        format::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&format::read_file(path)?)
    }
}
