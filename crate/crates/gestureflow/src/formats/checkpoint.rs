//! Parameter checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "GFCK"  u32 version  u32 record count
//! per record (sorted by name):
//!   u32 name length, name (UTF-8), u8 dtype (0 = f32, 1 = f64),
//!   u32 rank, rank x u64 extents, raw scalars
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use gestureflow_core::optim::ParamStore;
use gestureflow_core::{DType, Scalar, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GFCK";
pub const VERSION: u32 = 1;

/// A stored tensor in its on-disk precision.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl StoredTensor {
    pub fn dtype(&self) -> DType {
        match self {
            StoredTensor::F32(_) => DType::F32,
            StoredTensor::F64(_) => DType::F64,
        }
    }

    pub fn cast<S: Scalar>(&self) -> Tensor<S> {
        match self {
            StoredTensor::F32(t) => t.cast(),
            StoredTensor::F64(t) => t.cast(),
        }
    }
}

pub fn encode<S: Scalar>(tensors: &BTreeMap<String, Tensor<S>>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(S::DTYPE.tag());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated while reading {what} at byte {}", self.pos)),
        }
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

fn read_tensor<S: Scalar>(c: &mut Cursor, shape: Vec<usize>, name: &str) -> std::result::Result<Tensor<S>, String> {
    let n: usize = shape.iter().product();
    let bytes = c.take(n * S::DTYPE.size(), name)?;
    let data = bytes.chunks_exact(S::DTYPE.size()).map(S::read_le).collect();
    Tensor::new(shape, data).map_err(|e| e.to_string())
}

fn decode_inner(bytes: &[u8]) -> std::result::Result<BTreeMap<String, StoredTensor>, String> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err("not a GFCK checkpoint (bad magic)".into());
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let count = c.u32("record count")?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| "parameter name is not UTF-8".to_string())?
            .to_string();
        let tag = c.take(1, "dtype")?[0];
        let dtype = DType::from_tag(tag).ok_or_else(|| format!("`{name}`: unknown dtype tag {tag}"))?;
        let rank = c.u32("rank")? as usize;
        let shape = (0..rank)
            .map(|_| c.u64("extent").map(|d| d as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let t = match dtype {
            DType::F32 => StoredTensor::F32(read_tensor(&mut c, shape, &name)?),
            DType::F64 => StoredTensor::F64(read_tensor(&mut c, shape, &name)?),
        };
        if out.insert(name.clone(), t).is_some() {
            return Err(format!("duplicate parameter `{name}`"));
        }
    }
    if c.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - c.pos));
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: impl AsRef<Path>) -> Result<BTreeMap<String, StoredTensor>> {
    decode_inner(bytes).map_err(|d| Error::format(path, d))
}

pub fn save<S: Scalar>(path: impl AsRef<Path>, params: &ParamStore<S>) -> Result<()> {
    let path = path.as_ref();
    let tensors: BTreeMap<String, Tensor<S>> = params.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let mut f = std::fs::File::create(path).map_err(Error::io(path))?;
    f.write_all(&encode(&tensors)).map_err(Error::io(path))
}

pub fn load_stored(path: impl AsRef<Path>) -> Result<BTreeMap<String, StoredTensor>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(Error::io(path))?;
    decode(&bytes, path)
}

/// Loads a checkpoint as a parameter store of precision `S`, converting if
/// it was saved in the other precision.
pub fn load<S: Scalar>(path: impl AsRef<Path>) -> Result<ParamStore<S>> {
    let stored = load_stored(path)?;
    Ok(ParamStore::from_tensors(stored.iter().map(|(k, v)| (k.clone(), v.cast())).collect()))
}
