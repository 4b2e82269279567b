//! `CFEB` embedding file format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   b"CFEB"
//! version u16 = 1
//! dim     u32
//! count   u64
//! count × { id_len u16, id bytes (UTF-8), dim × f32 }
//! model id: len u16, bytes (UTF-8)
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::EmbeddingSet;

const MAGIC: &[u8; 4] = b"CFEB";
const VERSION: u16 = 1;

pub fn load_embeddings<T: Real>(path: impl AsRef<Path>) -> Result<EmbeddingSet<T>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    read_embeddings(&bytes)
}

pub fn save_embeddings<T: Real>(set: &EmbeddingSet<T>, path: impl AsRef<Path>) -> Result<()> {
    // Encode first so that an invalid set never leaves a partial file behind.
    let mut buf = Vec::new();
    write_embeddings(set, &mut buf)?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn write_embeddings<T: Real>(set: &EmbeddingSet<T>, out: &mut Vec<u8>) -> Result<()> {
    let dim = u32::try_from(set.dim())
        .map_err(|_| Error::Argument(format!("dimension {} exceeds u32", set.dim())))?;
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&(set.len() as u64).to_le_bytes());
    for (id, v) in set.iter() {
        put_string(out, id)?;
        for &x in v {
            let x = x.to_f32_lossy();
            if !x.is_finite() {
                return Err(Error::Data(format!("media {id:?} does not fit in f32")));
            }
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    put_string(out, set.model_id())
}

pub fn read_embeddings<T: Real>(bytes: &[u8]) -> Result<EmbeddingSet<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic, expected CFEB".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dim = r.u32()? as usize;
    let count = r.u64()?;
    if dim == 0 {
        return Err(Error::Format("dimension must be positive".into()));
    }
    let mut rows = Vec::with_capacity(count.min(1 << 20) as usize);
    let mut v = vec![T::zero(); dim];
    for i in 0..count {
        let id = r.string().map_err(|e| truncated(e, i, count))?;
        let payload = r.take(dim * 4).map_err(|e| truncated(e, i, count))?;
        for (dst, chunk) in v.iter_mut().zip(payload.chunks_exact(4)) {
            let x = f32::from_le_bytes(chunk.try_into().unwrap());
            if !x.is_finite() {
                return Err(Error::Data(format!("media {id:?} has a non-finite component")));
            }
            *dst = T::of_f32(x);
        }
        rows.push((id, v.clone()));
    }
    let model_id = r.string()?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after model id",
            bytes.len() - r.pos
        )));
    }
    let set = EmbeddingSet::from_rows(model_id, dim, rows)?;
    Ok(if !set.is_empty() && set.all_unit() { set.into_normalized()? } else { set })
}

fn truncated(e: Error, row: u64, count: u64) -> Error {
    match e {
        Error::Truncation(_) => {
            Error::Truncation(format!("header declares {count} rows, payload ends in row {row}"))
        }
        other => other,
    }
}

pub(crate) fn put_string(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| Error::Argument(format!("id longer than {} bytes", u16::MAX)))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub(crate) struct Reader<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Truncation(format!("need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format("id is not valid UTF-8".into()))
    }
}
