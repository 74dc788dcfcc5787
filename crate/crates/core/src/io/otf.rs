//! Flat binary tensor container.
//!
//! Layout: magic `OTF1`, dtype code (u32), rank (u32), each dim (u64),
//! then the row-major payload. Every integer and element is little-endian.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nncore::Dtype;

pub const MAGIC: &[u8; 4] = b"OTF1";
/// Highest rank accepted when reading.
pub const MAX_RANK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OtfTensor {
    dims: Vec<usize>,
    data: TensorData,
}

impl OtfTensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let n = element_count(&dims).ok_or_else(|| Error::shape(format!("dims {dims:?} overflow")))?;
        if n != data.len() {
            return Err(Error::shape(format!(
                "tensor dims {dims:?} need {n} elements, got {}",
                data.len()
            )));
        }
        Ok(OtfTensor { dims, data })
    }

    pub fn f32(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(dims, TensorData::F32(data))
    }

    pub fn f64(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(dims, TensorData::F64(data))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dtype(&self) -> Dtype {
        match self.data {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
        }
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    /// Elements widened to f64.
    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dt = self.dtype();
        let mut out = Vec::with_capacity(12 + 8 * self.dims.len() + dt.size() * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&dt.code().to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err("bad magic".into());
        }
        let code = r.u32()?;
        let dtype = Dtype::from_code(code).ok_or_else(|| format!("unknown dtype code {code}"))?;
        let rank = r.u32()? as usize;
        if rank > MAX_RANK {
            return Err(format!("rank {rank} exceeds {MAX_RANK}"));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = r.u64()?;
            dims.push(usize::try_from(d).map_err(|_| format!("dim {d} too large"))?);
        }
        let n = element_count(&dims).ok_or("element count overflows")?;
        let payload = n.checked_mul(dtype.size()).ok_or("payload size overflows")?;
        let body = r.take(payload)?;
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        let data = match dtype {
            Dtype::F32 => TensorData::F32(
                body.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            Dtype::F64 => TensorData::F64(
                body.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        Ok(OtfTensor { dims, data })
    }
}

fn element_count(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_otf(path: &Path, t: &OtfTensor) -> Result<()> {
    write_atomic(path, &t.to_bytes())
}

pub fn read_otf(path: &Path) -> Result<OtfTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    OtfTensor::from_bytes(&bytes).map_err(|detail| Error::Format {
        path: path.to_path_buf(),
        detail,
    })
}
