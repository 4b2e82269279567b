//! `CFEM` map file format.
//!
//! ```text
//! magic   b"CFEM"
//! version u16 = 1
//! kind    u8 (0 linear, 1 rotation, 2 identity)
//! d_A u32, d_B u32
//! d_A × d_B f64, row-major
//! source model id, target model id: len u16 + UTF-8 bytes each
//! fit_sample_count u64
//! ```

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::store::binary::{put_string, Reader};

use super::{check_invariants, MapKind, MappingMatrix};

const MAGIC: &[u8; 4] = b"CFEM";
const VERSION: u16 = 1;

pub fn write_map<T: Real>(map: &MappingMatrix<T>, out: &mut Vec<u8>) -> Result<()> {
    let dims = |d: usize| {
        u32::try_from(d).map_err(|_| Error::Argument(format!("dimension {d} exceeds u32")))
    };
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(map.kind().code());
    out.extend_from_slice(&dims(map.source_dim())?.to_le_bytes());
    out.extend_from_slice(&dims(map.target_dim())?.to_le_bytes());
    for row in map.matrix().row_iter() {
        for x in row.iter() {
            out.extend_from_slice(&x.as_f64().to_le_bytes());
        }
    }
    put_string(out, map.source_model_id())?;
    put_string(out, map.target_model_id())?;
    out.extend_from_slice(&map.fit_sample_count().to_le_bytes());
    Ok(())
}

pub fn read_map<T: Real>(bytes: &[u8]) -> Result<MappingMatrix<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic, expected CFEM".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported map version {version}")));
    }
    let code = r.u8()?;
    let kind = MapKind::from_code(code)
        .ok_or_else(|| Error::Format(format!("unknown map kind code {code}")))?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Format("map dimensions must be positive".into()));
    }
    let mut entries = Vec::with_capacity(rows.saturating_mul(cols).min(1 << 24));
    for _ in 0..rows * cols {
        entries.push(T::lit(r.f64()?));
    }
    let matrix = DMatrix::from_row_slice(rows, cols, &entries);
    let source = r.string()?;
    let target = r.string()?;
    let count = r.u64()?;
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after map record".into()));
    }
    check_invariants(kind, &matrix).map_err(Error::Corruption)?;
    Ok(MappingMatrix {
        kind,
        source_model_id: source,
        target_model_id: target,
        matrix,
        fit_sample_count: count,
        fit_seed: None,
    })
}

pub fn save_map<T: Real>(map: &MappingMatrix<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_map(map, &mut buf)?;
    File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn load_map<T: Real>(path: impl AsRef<Path>) -> Result<MappingMatrix<T>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    read_map(&bytes)
}
