//! Flat tensor files: magic `ACIRT1`, little-endian header
//! `{version u32, ndim u32, dims u32...}`, `f32` payload, CRC32 trailer.
//! Used for embeddings, fingerprints and encoder weights.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::bytes::{append_crc, verify_crc, Reader};

pub const TENSOR_MAGIC: &[u8; 6] = b"ACIRT1";
pub const TENSOR_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "{} values do not fill dims {dims:?}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn vector(data: Vec<f32>) -> Self {
        Self {
            dims: vec![data.len()],
            data,
        }
    }

    /// Narrows any scalar slice to `f32`.
    pub fn from_scalars<T: Scalar>(dims: Vec<usize>, values: &[T]) -> Result<Self> {
        Self::new(
            dims,
            values
                .iter()
                .map(|v| v.to_f32().unwrap_or(f32::NAN))
                .collect(),
        )
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn to_scalars<T: Scalar>(&self) -> Vec<T> {
        self.data.iter().map(|&v| T::lit(f64::from(v))).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(18 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&TENSOR_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        append_crc(out)
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let m = TENSOR_MAGIC.len();
        if data.len() < m || &data[..m] != TENSOR_MAGIC {
            return Err(Error::Format("not a tensor file (bad magic)".into()));
        }
        if data.len() >= m + 4 {
            let version = u32::from_le_bytes(data[m..m + 4].try_into().expect("4 bytes"));
            if version != TENSOR_FORMAT_VERSION {
                return Err(Error::FormatVersionMismatch {
                    found: version,
                    expected: TENSOR_FORMAT_VERSION,
                });
            }
        }
        let body = verify_crc(data, m + 4)?;
        let mut rd = Reader::new(&body[m + 4..]);
        let ndim = rd.u32()? as usize;
        let dims = (0..ndim)
            .map(|_| rd.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("dims {dims:?} overflow")))?;
        let values = (0..n).map(|_| rd.f32()).collect::<Result<Vec<_>>>()?;
        rd.finish()?;
        Self::new(dims, values)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
