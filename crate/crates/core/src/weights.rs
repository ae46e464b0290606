//! Binary weight format.
//!
//! Little-endian throughout:
//!
//! ```text
//! "FTHN"  u32 version  u8 variant  u8 head  u32 count
//! count × { u16 name_len, name (utf-8), u8 rank, rank × u32 dim, u8 dtype, f32 values }
//! ```
//!
//! Only dtype 0 (`f32`) exists. Tensors appear in visiting order; the reader
//! matches them by name.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::arch::{ArchSpec, HeadKind, Variant};
use crate::layers::Parameterized;
use crate::model::Model;
use crate::scalar::Scalar;

pub const MAGIC: [u8; 4] = *b"FTHN";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WeightsError {
    #[error("bad magic: not a weight file")]
    BadMagic,
    #[error("unsupported format version {0} (this build reads version 1)")]
    UnsupportedVersion(u32),
    #[error("file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("unknown variant code {0}")]
    UnknownVariant(u8),
    #[error("unknown head code {0}")]
    UnknownHead(u8),
    #[error("unsupported dtype {dtype} for tensor '{name}'")]
    Dtype { name: String, dtype: u8 },
    #[error("tensor '{name}': expected shape {expected:?}, file has {actual:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, actual: Vec<usize> },
    #[error("unknown tensor '{0}'")]
    UnknownTensor(String),
    #[error("missing tensor '{0}'")]
    MissingTensor(String),
    #[error("duplicate tensor '{0}'")]
    DuplicateTensor(String),
    #[error("tensor name is not valid utf-8")]
    BadName,
    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
    #[error("non-finite value in tensor '{0}'")]
    NonFinite(String),
    #[error("model: {0}")]
    Model(#[from] crate::error::Error),
}

/// Serialises every tensor (learned and running statistics) as `f32`.
pub fn encode<T: Scalar>(model: &Model<T>) -> Vec<u8> {
    let mut entries: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    model.visit("", &mut |name, kind, t| {
        let values = t.data().iter().map(|v| v.as_f64() as f32).collect();
        entries.push((name.to_string(), kind.logical_dims(t.shape()), values));
    });
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(model.variant().code());
    out.push(model.head_kind().code());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, dims, values) in entries {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(dims.len() as u8);
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(DTYPE_F32);
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], WeightsError> {
        if self.bytes.len() < n {
            return Err(WeightsError::Truncated(what));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, WeightsError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, WeightsError> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, WeightsError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Rebuilds a model from [`encode`] output.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Model<T>, WeightsError> {
    let mut r = Reader { bytes };
    if r.take(4, "magic").map_err(|_| WeightsError::BadMagic)? != MAGIC {
        return Err(WeightsError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(WeightsError::UnsupportedVersion(version));
    }
    let v = r.u8("variant")?;
    let variant = Variant::from_code(v).ok_or(WeightsError::UnknownVariant(v))?;
    let h = r.u8("head")?;
    let head = HeadKind::from_code(h).ok_or(WeightsError::UnknownHead(h))?;
    let count = r.u32("tensor count")?;

    let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)> = BTreeMap::new();
    for _ in 0..count {
        let len = r.u16("tensor name length")? as usize;
        let name = core::str::from_utf8(r.take(len, "tensor name")?).map_err(|_| WeightsError::BadName)?.to_string();
        let rank = r.u8("tensor rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("tensor dims")? as usize);
        }
        let dtype = r.u8("tensor dtype")?;
        if dtype != DTYPE_F32 {
            return Err(WeightsError::Dtype { name, dtype });
        }
        let bytes_len = dims
            .iter()
            .try_fold(4usize, |a, &d| a.checked_mul(d))
            .ok_or(WeightsError::Truncated("tensor values"))?;
        let raw = r.take(bytes_len, "tensor values")?;
        let values: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(WeightsError::NonFinite(name));
        }
        if tensors.insert(name.clone(), (dims, values)).is_some() {
            return Err(WeightsError::DuplicateTensor(name));
        }
    }
    if !r.bytes.is_empty() {
        return Err(WeightsError::TrailingBytes(r.bytes.len()));
    }

    let mut model = Model::<T>::new(ArchSpec::feathernet(variant, head))?;
    let mut failure = None;
    model.visit_mut("", &mut |name, kind, t| {
        if failure.is_some() {
            return;
        }
        let expected = kind.logical_dims(t.shape());
        match tensors.remove(name) {
            None => failure = Some(WeightsError::MissingTensor(name.to_string())),
            Some((dims, _)) if dims != expected => {
                failure = Some(WeightsError::ShapeMismatch {
                    name: name.to_string(),
                    expected,
                    actual: dims,
                })
            }
            Some((_, values)) => {
                for (d, v) in t.data_mut().iter_mut().zip(values) {
                    *d = T::from_f64(v as f64);
                }
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(name) = tensors.into_keys().next() {
        return Err(WeightsError::UnknownTensor(name));
    }
    Ok(model)
}
