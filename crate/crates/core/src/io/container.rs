//! Single-tensor binary container.
//!
//! ```text
//! magic   8 bytes  "FLRQTEN\0"
//! version u32      1
//! dtype   u8       0 = f32, 1 = f64, 2 = packed codes
//! bits    u8       packed codes only: 2, 3 or 4
//! ndim    u32
//! dims    u64 × ndim
//! payload row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::pack::packed_len;
use super::{IoError, IoResult};
use crate::linalg::Matrix;

pub const CONTAINER_MAGIC: [u8; 8] = *b"FLRQTEN\0";
pub const CONTAINER_VERSION: u32 = 1;

/// Guards allocations driven by untrusted headers.
const MAX_NDIM: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    Packed { bits: u8 },
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
            Dtype::Packed { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    /// Codes packed with [`super::pack_codes`].
    Packed { bits: u8, bytes: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorContainer {
    dims: Vec<u64>,
    data: TensorData,
}

fn element_count(dims: &[u64]) -> IoResult<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| {
            usize::try_from(d).ok().and_then(|d| acc.checked_mul(d))
        })
        .ok_or_else(|| IoError::Format(format!("dims {dims:?} overflow")))
}

fn payload_len(dims: &[u64], dtype: Dtype) -> IoResult<usize> {
    let count = element_count(dims)?;
    let len = match dtype {
        Dtype::F32 => count.checked_mul(4),
        Dtype::F64 => count.checked_mul(8),
        Dtype::Packed { bits } => Some(packed_len(count, bits)?),
    };
    len.ok_or_else(|| IoError::Format(format!("dims {dims:?} overflow")))
}

impl TensorContainer {
    pub fn new(dims: Vec<u64>, data: TensorData) -> IoResult<Self> {
        if dims.len() > MAX_NDIM as usize {
            return Err(IoError::Format(format!("{} dims exceed the limit of {MAX_NDIM}", dims.len())));
        }
        let count = element_count(&dims)?;
        let ok = match &data {
            TensorData::F32(v) => v.len() == count,
            TensorData::F64(v) => v.len() == count,
            TensorData::Packed { bits, bytes } => bytes.len() == packed_len(count, *bits)?,
        };
        if !ok {
            return Err(IoError::Format(format!("payload does not match dims {dims:?}")));
        }
        Ok(Self { dims, data })
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self {
            dims: vec![m.rows() as u64, m.cols() as u64],
            data: TensorData::F64(m.data().to_vec()),
        }
    }

    pub fn from_vector(v: &[f64]) -> Self {
        Self {
            dims: vec![v.len() as u64],
            data: TensorData::F64(v.to_vec()),
        }
    }

    pub fn dims(&self) -> &[u64] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn dtype(&self) -> Dtype {
        match &self.data {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
            TensorData::Packed { bits, .. } => Dtype::Packed { bits: *bits },
        }
    }

    pub fn len(&self) -> usize {
        element_count(&self.dims).expect("validated on construction")
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Float payload widened to f64.
    pub fn to_f64(&self) -> IoResult<Vec<f64>> {
        match &self.data {
            TensorData::F32(v) => Ok(v.iter().map(|&x| x as f64).collect()),
            TensorData::F64(v) => Ok(v.clone()),
            TensorData::Packed { .. } => Err(IoError::Format("expected a float tensor, found packed codes".into())),
        }
    }

    /// 2-D float tensor as a matrix (non-finite entries are rejected).
    pub fn to_matrix(&self) -> IoResult<Matrix> {
        let [rows, cols] = self.dims[..] else {
            return Err(IoError::Format(format!("expected 2 dims, found {}", self.dims.len())));
        };
        Ok(Matrix::new(rows as usize, cols as usize, self.to_f64()?)?)
    }

    /// 1-D float tensor.
    pub fn to_vector(&self) -> IoResult<Vec<f64>> {
        if self.dims.len() != 1 {
            return Err(IoError::Format(format!("expected 1 dim, found {}", self.dims.len())));
        }
        self.to_f64()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_container(&mut out, self).expect("writing to a Vec cannot fail");
        out
    }

    /// Parses a complete buffer; trailing bytes are an error.
    pub fn from_bytes(bytes: &[u8]) -> IoResult<Self> {
        let mut cursor = bytes;
        let c = read_container(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(IoError::TrailingBytes(cursor.len()));
        }
        Ok(c)
    }
}

pub fn write_container<W: Write>(w: &mut W, c: &TensorContainer) -> IoResult<()> {
    w.write_all(&CONTAINER_MAGIC)?;
    w.write_all(&CONTAINER_VERSION.to_le_bytes())?;
    w.write_all(&[c.dtype().code()])?;
    if let TensorData::Packed { bits, .. } = c.data {
        w.write_all(&[bits])?;
    }
    w.write_all(&(c.dims.len() as u32).to_le_bytes())?;
    for d in &c.dims {
        w.write_all(&d.to_le_bytes())?;
    }
    match &c.data {
        TensorData::F32(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        TensorData::F64(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        TensorData::Packed { bytes, .. } => w.write_all(bytes)?,
    }
    Ok(())
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &'static str) -> IoResult<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => IoError::Truncated(what),
        _ => IoError::Io(e),
    })
}

fn read_u8<R: Read>(r: &mut R, what: &'static str) -> IoResult<u8> {
    let mut b = [0u8; 1];
    read_exact_or(r, &mut b, what)?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R, what: &'static str) -> IoResult<u32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R, what: &'static str) -> IoResult<u64> {
    let mut b = [0u8; 8];
    read_exact_or(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_container<R: Read>(r: &mut R) -> IoResult<TensorContainer> {
    let mut magic = [0u8; 8];
    read_exact_or(r, &mut magic, "magic")?;
    if magic != CONTAINER_MAGIC {
        return Err(IoError::BadMagic);
    }
    let version = read_u32(r, "version")?;
    if version != CONTAINER_VERSION {
        return Err(IoError::UnsupportedVersion(version));
    }
    let dtype = match read_u8(r, "dtype")? {
        0 => Dtype::F32,
        1 => Dtype::F64,
        2 => {
            let bits = read_u8(r, "code width")?;
            if !(2..=4).contains(&bits) {
                return Err(IoError::Format(format!("unsupported code width {bits}")));
            }
            Dtype::Packed { bits }
        }
        other => return Err(IoError::UnknownDtype(other)),
    };
    let ndim = read_u32(r, "ndim")?;
    if ndim > MAX_NDIM {
        return Err(IoError::Format(format!("{ndim} dims exceed the limit of {MAX_NDIM}")));
    }
    let dims = (0..ndim).map(|_| read_u64(r, "dims")).collect::<IoResult<Vec<_>>>()?;
    let len = payload_len(&dims, dtype)?;

    // Read through `take` so a lying header cannot force a huge allocation.
    let mut payload = Vec::new();
    r.take(len as u64).read_to_end(&mut payload)?;
    if payload.len() != len {
        return Err(IoError::Truncated("payload"));
    }
    let data = match dtype {
        Dtype::F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect(),
        ),
        Dtype::F64 => TensorData::F64(
            payload
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect(),
        ),
        Dtype::Packed { bits } => TensorData::Packed { bits, bytes: payload },
    };
    Ok(TensorContainer { dims, data })
}

pub fn write_container_file(path: impl AsRef<Path>, c: &TensorContainer) -> IoResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_container(&mut w, c)?;
    w.flush()?;
    Ok(())
}

pub fn read_container_file(path: impl AsRef<Path>) -> IoResult<TensorContainer> {
    let mut r = BufReader::new(File::open(path)?);
    let c = read_container(&mut r)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(IoError::TrailingBytes(1));
    }
    Ok(c)
}
