//! `FLT1` tensor container, all fields little-endian:
//!
//! ```text
//! b"FLT1" | u32 rank | u64 extents[rank] | f64 payload[product(extents)]
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: [u8; 4] = *b"FLT1";

// Guards against absurd headers before allocating.
const MAX_RANK: u32 = 16;

pub fn write_tensor_to<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(&TENSOR_MAGIC)?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &e in t.shape() {
        w.write_all(&(e as u64).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::TruncatedFile(what.to_string())
        } else {
            Error::Io(e)
        }
    })
}

pub fn read_tensor_from<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    read_exact_or_truncated(r, &mut magic, "tensor magic")?;
    if magic != TENSOR_MAGIC {
        return Err(Error::BadMagic {
            found: u32::from_be_bytes(magic),
            expected: u32::from_be_bytes(TENSOR_MAGIC),
        });
    }
    let mut b4 = [0u8; 4];
    read_exact_or_truncated(r, &mut b4, "tensor rank")?;
    let rank = u32::from_le_bytes(b4);
    if rank > MAX_RANK {
        return Err(Error::OutOfRange(format!("tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut b8 = [0u8; 8];
    for _ in 0..rank {
        read_exact_or_truncated(r, &mut b8, "tensor extents")?;
        shape.push(u64::from_le_bytes(b8) as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::OutOfRange("tensor extents overflow".into()))?;
    let mut bytes = vec![0u8; n.checked_mul(8).ok_or_else(|| Error::OutOfRange("payload".into()))?];
    read_exact_or_truncated(r, &mut bytes, "tensor payload")?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(shape, data)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor_to(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    read_tensor_from(&mut r)
}
