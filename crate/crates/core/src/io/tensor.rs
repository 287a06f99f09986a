//! Named-tensor container used for every binary artifact.
//!
//! ```text
//! "IRT1" | count: u32
//! per tensor: name_len: u16 | name (utf-8) | dtype: u8 | ndim: u8 |
//!             dims: ndim x u64 | payload, little-endian
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"IRT1";

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U32(Vec<u32>),
    U64(Vec<u64>),
    U8(Vec<u8>),
}

impl TensorData {
    fn dtype(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::U32(_) => 1,
            TensorData::U64(_) => 2,
            TensorData::U8(_) => 3,
        }
    }

    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U32(v) => v.len(),
            TensorData::U64(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn f32(dims: Vec<usize>, v: Vec<f32>) -> Self {
        Self {
            dims,
            data: TensorData::F32(v),
        }
    }

    pub fn u32(dims: Vec<usize>, v: Vec<u32>) -> Self {
        Self {
            dims,
            data: TensorData::U32(v),
        }
    }

    pub fn u64(dims: Vec<usize>, v: Vec<u64>) -> Self {
        Self {
            dims,
            data: TensorData::U64(v),
        }
    }

    pub fn bytes(v: Vec<u8>) -> Self {
        Self {
            dims: vec![v.len()],
            data: TensorData::U8(v),
        }
    }
}

/// Tensors keyed by name, serialised in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorFile {
    pub tensors: BTreeMap<String, Tensor>,
}

impl TensorFile {
    pub fn insert(&mut self, name: &str, t: Tensor) {
        assert_eq!(t.dims.iter().product::<usize>(), t.data.len(), "tensor `{name}` dims disagree with its data");
        self.tensors.insert(name.to_string(), t);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = TENSOR_MAGIC.to_vec();
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.data.dtype());
            out.push(t.dims.len() as u8);
            for &d in &t.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &t.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::U8(v) => out.extend_from_slice(v),
            }
        }
        out
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { path, bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != TENSOR_MAGIC {
            return Err(Error::BadMagic {
                path: path.into(),
                expected: "IRT1".into(),
                found: String::from_utf8_lossy(magic).into_owned(),
            });
        }
        let count = r.u32()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| r.format("tensor name is not utf-8"))?;
            let dtype = r.take(1)?[0];
            let ndim = r.take(1)?[0] as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u64()? as usize);
            }
            let n: usize = dims.iter().product();
            let data = match dtype {
                0 => TensorData::F32(r.chunks(n, 4)?.map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
                1 => TensorData::U32(r.chunks(n, 4)?.map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect()),
                2 => TensorData::U64(r.chunks(n, 8)?.map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect()),
                3 => TensorData::U8(r.take(n)?.to_vec()),
                other => return Err(r.format(&format!("unknown dtype {other} for tensor `{name}`"))),
            };
            tensors.insert(name, Tensor { dims, data });
        }
        if r.pos != bytes.len() {
            return Err(r.format(&format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(path, &bytes)
    }

    fn missing(&self, name: &str, path: &Path, what: &str) -> Error {
        Error::Format {
            path: path.into(),
            reason: format!("tensor `{name}` missing or not {what}"),
        }
    }

    pub fn get_f32(&self, path: &Path, name: &str) -> Result<&[f32]> {
        match self.tensors.get(name).map(|t| &t.data) {
            Some(TensorData::F32(v)) => Ok(v),
            _ => Err(self.missing(name, path, "f32")),
        }
    }

    pub fn get_u32(&self, path: &Path, name: &str) -> Result<&[u32]> {
        match self.tensors.get(name).map(|t| &t.data) {
            Some(TensorData::U32(v)) => Ok(v),
            _ => Err(self.missing(name, path, "u32")),
        }
    }

    pub fn get_u64(&self, path: &Path, name: &str) -> Result<&[u64]> {
        match self.tensors.get(name).map(|t| &t.data) {
            Some(TensorData::U64(v)) => Ok(v),
            _ => Err(self.missing(name, path, "u64")),
        }
    }

    pub fn get_bytes(&self, path: &Path, name: &str) -> Result<&[u8]> {
        match self.tensors.get(name).map(|t| &t.data) {
            Some(TensorData::U8(v)) => Ok(v),
            _ => Err(self.missing(name, path, "u8")),
        }
    }

    /// JSON metadata stored as a byte tensor named `meta`.
    pub fn set_meta<T: serde::Serialize>(&mut self, meta: &T) {
        let json = serde_json::to_vec(meta).expect("serialisable metadata");
        self.insert("meta", Tensor::bytes(json));
    }

    pub fn meta<T: serde::de::DeserializeOwned>(&self, path: &Path) -> Result<T> {
        serde_json::from_slice(self.get_bytes(path, "meta")?).map_err(|e| Error::Format {
            path: path.into(),
            reason: format!("metadata: {e}"),
        })
    }
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Truncated {
            path: self.path.into(),
            expected: (self.pos + n) as u64,
            actual: self.bytes.len() as u64,
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn chunks(&mut self, n: usize, width: usize) -> Result<std::slice::ChunksExact<'a, u8>> {
        Ok(self.take(n * width)?.chunks_exact(width))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn format(&self, reason: &str) -> Error {
        Error::Format {
            path: self.path.into(),
            reason: reason.into(),
        }
    }
}
