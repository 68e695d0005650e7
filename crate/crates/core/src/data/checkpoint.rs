use std::collections::BTreeMap;
use std::path::Path;

use super::format::{self, FormatError, Reader, Writer};
use crate::tensor::{Precision, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RDCKPT\0\0";
const MAX_RANK: u8 = 8;

/// Named tensors plus string metadata, stored at one precision.
///
/// Body grammar:
/// ```text
/// precision u8 (4|8)
/// meta_count u32, { key (u16 len + utf8), value (u32 len + utf8) }*
/// record_count u32, { name (u16 len + utf8), rank u8, extents u64*rank, values }*
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub meta: BTreeMap<String, String>,
    pub records: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Default for Checkpoint<T> {
    fn default() -> Self {
        Checkpoint { meta: BTreeMap::new(), records: Vec::new() }
    }
}

/// Precision stored in a checkpoint-grammar file, without decoding records.
pub fn peek_precision(magic: &[u8; 8], bytes: &[u8]) -> Result<Precision, FormatError> {
    let body = format::unframe(magic, bytes)?;
    let tag = Reader::new(body).u8("precision")?;
    Precision::from_tag(tag).ok_or_else(|| FormatError::Malformed(format!("unknown precision tag {tag}")))
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.records.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn encode_body(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.u8(T::PRECISION.tag());
        w.u32(self.meta.len() as u32);
        for (k, v) in &self.meta {
            w.short_str(k);
            w.long_str(v);
        }
        w.u32(self.records.len() as u32);
        for (name, t) in &self.records {
            w.short_str(name);
            w.u8(t.shape().len() as u8);
            for &e in t.shape() {
                w.u64(e as u64);
            }
            for &v in t.data() {
                v.write_le(&mut w.buf);
            }
        }
        w.buf
    }

    pub fn decode_body(body: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(body);
        let tag = r.u8("precision")?;
        let precision =
            Precision::from_tag(tag).ok_or_else(|| FormatError::Malformed(format!("unknown precision tag {tag}")))?;
        if precision != T::PRECISION {
            return Err(FormatError::PrecisionMismatch { file: precision.to_string(), expected: T::PRECISION.to_string() });
        }
        let meta_count = r.u32("meta count")?;
        let mut meta = BTreeMap::new();
        for _ in 0..meta_count {
            let k = r.short_str("meta key")?;
            let v = r.long_str("meta value")?;
            if meta.insert(k.clone(), v).is_some() {
                return Err(FormatError::Malformed(format!("duplicate meta key `{k}`")));
            }
        }
        let count = r.u32("record count")?;
        let width = T::PRECISION.bytes();
        let mut records: Vec<(String, Tensor<T>)> = Vec::new();
        for _ in 0..count {
            let name = r.short_str("record name")?;
            if records.iter().any(|(n, _)| *n == name) {
                return Err(FormatError::Malformed(format!("duplicate record `{name}`")));
            }
            let rank = r.u8("rank")?;
            if rank > MAX_RANK {
                return Err(FormatError::Malformed(format!("record `{name}` has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank as usize);
            let mut numel: usize = 1;
            for _ in 0..rank {
                let e = usize::try_from(r.u64("extent")?).map_err(|_| FormatError::Malformed("extent overflow".into()))?;
                numel = numel.checked_mul(e).ok_or_else(|| FormatError::Malformed("extent overflow".into()))?;
                shape.push(e);
            }
            let nbytes = numel.checked_mul(width).ok_or_else(|| FormatError::Malformed("size overflow".into()))?;
            let raw = r.take(nbytes, &format!("values of `{name}`"))?;
            let data: Vec<T> = raw.chunks_exact(width).map(T::read_le).collect();
            let t = Tensor::new(shape, data).map_err(|e| FormatError::Malformed(e.to_string()))?;
            records.push((name, t));
        }
        r.finish()?;
        Ok(Checkpoint { meta, records })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        format::frame(CHECKPOINT_MAGIC, &self.encode_body())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        Self::decode_body(format::unframe(CHECKPOINT_MAGIC, bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        format::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&format::read_file(path)?)
    }
}
