//! `PRNN1` container: magic, u32 tensor count, then per tensor a u32 name
//! length, name bytes, u32 rank, u64 dims and f64 values, all little-endian.
//! A trailing u64 length and UTF-8 metadata string follow the tensors.

use std::io::{Read, Write};

use super::{NnError, Result, Tensor};

pub const MAGIC: &[u8; 5] = b"PRNN1";

pub fn write_checkpoint<W: Write>(
    mut w: W,
    tensors: &[(&str, &Tensor)],
    metadata: &str,
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 8);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.write_all(&(metadata.len() as u64).to_le_bytes())?;
    w.write_all(metadata.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_bytes<R: Read>(r: &mut R, n: u64) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(n).read_to_end(&mut buf)?;
    if buf.len() as u64 != n {
        return Err(NnError::MalformedCheckpoint("truncated record".into()));
    }
    Ok(buf)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(Vec<(String, Tensor)>, String)> {
    let mut magic = [0u8; 5];
    if r.read_exact(&mut magic).is_err() || &magic != MAGIC {
        return Err(NnError::VersionMismatch);
    }
    let count = read_u32(&mut r)?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = read_u32(&mut r)?;
        let name = String::from_utf8(read_bytes(&mut r, len as u64)?)
            .map_err(|_| NnError::MalformedCheckpoint("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)?;
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: u64 = shape.iter().map(|&d| d as u64).product();
        let raw = read_bytes(&mut r, n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    let meta_len = read_u64(&mut r)?;
    let metadata = String::from_utf8(read_bytes(&mut r, meta_len)?)
        .map_err(|_| NnError::MalformedCheckpoint("metadata is not UTF-8".into()))?;
    Ok((tensors, metadata))
}
