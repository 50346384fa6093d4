//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"HSRF1"
//! u32 header_len, header_len bytes of UTF-8 (free-form `key=value` lines)
//! u32 record_count
//! repeated record_count times:
//!     u32 name_len, name bytes
//!     u32 rank, rank x u64 dims
//!     product(dims) x f64 payload
//! ```

use std::io::{Read, Write};

use ndarray::Array2;

use crate::error::{AutodiffError, Result};
use crate::tape::Mat;

pub const MAGIC: &[u8; 5] = b"HSRF1";

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Record {
    pub fn from_mat(name: impl Into<String>, m: &Mat) -> Self {
        Self {
            name: name.into(),
            dims: vec![m.nrows(), m.ncols()],
            data: m.iter().copied().collect(),
        }
    }

    pub fn to_mat(&self) -> Result<Mat> {
        let (r, c) = match self.dims.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => {
                return Err(AutodiffError::Checkpoint(format!(
                    "record `{}` has rank {}",
                    self.name,
                    self.dims.len()
                )))
            }
        };
        Array2::from_shape_vec((r, c), self.data.clone())
            .map_err(|e| AutodiffError::Checkpoint(e.to_string()))
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, header: &str, records: &[Record]) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u32(&mut w, header.len())?;
    w.write_all(header.as_bytes())?;
    write_u32(&mut w, records.len())?;
    for rec in records {
        let expected: usize = rec.dims.iter().product();
        if expected != rec.data.len() {
            return Err(AutodiffError::Checkpoint(format!(
                "record `{}` dims {:?} do not match {} values",
                rec.name,
                rec.dims,
                rec.data.len()
            )));
        }
        write_u32(&mut w, rec.name.len())?;
        w.write_all(rec.name.as_bytes())?;
        write_u32(&mut w, rec.dims.len())?;
        for &d in &rec.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in &rec.data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(String, Vec<Record>)> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(AutodiffError::Checkpoint("bad magic".into()));
    }
    let header = read_string(&mut r)?;
    let count = read_u32(&mut r)?;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name = read_string(&mut r)?;
        let rank = read_u32(&mut r)?;
        if rank > 8 {
            return Err(AutodiffError::Checkpoint(format!("rank {rank} too large")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            dims.push(u64::from_le_bytes(b) as usize);
        }
        let n: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        records.push(Record { name, dims, data });
    }
    Ok((header, records))
}

fn write_u32<W: Write>(w: &mut W, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| AutodiffError::Checkpoint("length overflow".into()))?;
    w.write_all(&n.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let n = read_u32(r)?;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| AutodiffError::Checkpoint(e.to_string()))
}
