//! On-disk index: magic `ACIRIDX1`, little-endian header
//! `{version u32, K u32, N u64, level count u32, level dims u32...}`,
//! records `{id len u32, id utf-8, label u32, code words u64..., levels f32...}`
//! and a CRC32 trailer over everything before it.

use std::fs;
use std::path::Path;

use crate::code::BinaryCode;
use crate::error::{Error, Result};
use crate::io::bytes::{append_crc, verify_crc, Reader};

use super::{GalleryRecord, HashIndex};

pub const INDEX_MAGIC: &[u8; 8] = b"ACIRIDX1";
pub const INDEX_FORMAT_VERSION: u32 = 1;

impl HashIndex {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&INDEX_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.bits as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.level_dims.len() as u32).to_le_bytes());
        for &d in &self.level_dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for r in &self.records {
            out.extend_from_slice(&(r.id.len() as u32).to_le_bytes());
            out.extend_from_slice(r.id.as_bytes());
            out.extend_from_slice(&r.label.to_le_bytes());
            for w in r.code.words() {
                out.extend_from_slice(&w.to_le_bytes());
            }
            for v in r.levels.iter().flatten() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        append_crc(out)
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        if data.len() < INDEX_MAGIC.len() || &data[..INDEX_MAGIC.len()] != INDEX_MAGIC {
            return Err(Error::Format("not an index file (bad magic)".into()));
        }
        if data.len() >= 12 {
            let version = u32::from_le_bytes(data[8..12].try_into().expect("4 bytes"));
            if version != INDEX_FORMAT_VERSION {
                return Err(Error::FormatVersionMismatch {
                    found: version,
                    expected: INDEX_FORMAT_VERSION,
                });
            }
        }
        let body = verify_crc(data, 12)?;
        let mut rd = Reader::new(&body[12..]);
        let bits = rd.u32()? as usize;
        let count = rd.u64()?;
        let level_count = rd.u32()? as usize;
        let level_dims = (0..level_count)
            .map(|_| rd.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let words = bits.div_ceil(64);
        let mut index = HashIndex::new(bits, level_dims.clone());
        for _ in 0..count {
            let id_len = rd.u32()? as usize;
            let id = std::str::from_utf8(rd.take(id_len)?)
                .map_err(|e| Error::Format(format!("record id is not UTF-8: {e}")))?
                .to_owned();
            let label = rd.u32()?;
            let code_words = (0..words).map(|_| rd.u64()).collect::<Result<Vec<_>>>()?;
            let code = BinaryCode::from_words(bits, code_words)?;
            let levels = level_dims
                .iter()
                .map(|&d| (0..d).map(|_| rd.f32()).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?;
            index.insert(GalleryRecord {
                id,
                code,
                levels,
                label,
            })?;
        }
        rd.finish()?;
        Ok(index)
    }
}

pub fn persist_index(index: &HashIndex, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, index.to_bytes())?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>) -> Result<HashIndex> {
    HashIndex::from_bytes(&fs::read(path)?)
}
