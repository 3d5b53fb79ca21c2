//! HDT1: `b"HDT1"`, little-endian `u32` rank, `rank` little-endian `u32`
//! dims, then row-major little-endian IEEE-754 `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const HDT_MAGIC: &[u8; 4] = b"HDT1";

pub fn write_hdt_to<W: Write>(tensor: &Tensor, mut w: W) -> Result<()> {
    w.write_all(HDT_MAGIC)?;
    w.write_all(&(tensor.rank() as u32).to_le_bytes())?;
    for &d in tensor.shape() {
        let d =
            u32::try_from(d).map_err(|_| Error::Domain(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for &v in tensor.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_hdt(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_hdt_to(tensor, &mut w)?;
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads one HDT1 tensor; `origin` only labels error messages.
pub fn read_hdt_from<R: Read>(mut r: R, origin: &Path) -> Result<Tensor> {
    let bad = |reason: &str| Error::format("HDT1", origin, reason);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated header"))?;
    if &magic != HDT_MAGIC {
        return Err(bad("bad magic"));
    }
    let rank = read_u32(&mut r).map_err(|_| bad("truncated rank"))? as usize;
    if rank == 0 || rank > 16 {
        return Err(bad(&format!("unsupported rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(&mut r).map_err(|_| bad("truncated dims"))? as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| bad("element count overflows"))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n * 8 {
        return Err(bad(&format!(
            "expected {} payload bytes, found {}",
            n * 8,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data).map_err(|e| bad(&e.to_string()))
}

pub fn read_hdt(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    read_hdt_from(BufReader::new(File::open(path)?), path)
}
