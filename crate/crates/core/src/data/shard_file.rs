//! Binary shard files.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "FLSH" | version u32 | shard_id u32 | rows u64 | cols u64
//! row_ids   rows x u64
//! A         rows*cols x f64, column-major
//! y         rows x f64
//! sha256    32 bytes over everything above
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::{FeatureShard, ResponseShard};

const MAGIC: &[u8; 4] = b"FLSH";
pub const SHARD_FORMAT_VERSION: u32 = 1;
const HEADER: usize = 4 + 4 + 4 + 8 + 8;

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn encode_shard(a: &FeatureShard, y: &ResponseShard) -> Result<Vec<u8>> {
    if y.len() != a.rows() {
        return Err(Error::Dimension("response length differs from shard rows".into()));
    }
    let mut out = Vec::with_capacity(HEADER + 8 * (a.rows() * (a.cols() + 2)) + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&SHARD_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&a.shard_id().to_le_bytes());
    out.extend_from_slice(&(a.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(a.cols() as u64).to_le_bytes());
    for id in a.row_ids() {
        out.extend_from_slice(&id.to_le_bytes());
    }
    for v in a.values().iter().chain(y.values()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(Error::Format("shard file truncated".into()));
    }
    let (head, rest) = buf.split_at(n);
    *buf = rest;
    Ok(head)
}

fn u32_at(buf: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(buf, 4)?.try_into().expect("4 bytes")))
}

fn u64_at(buf: &mut &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(take(buf, 8)?.try_into().expect("8 bytes")))
}

pub fn decode_shard(bytes: &[u8]) -> Result<(FeatureShard, ResponseShard)> {
    if bytes.len() < HEADER + 32 {
        return Err(Error::Format("shard file too short".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Format("shard digest mismatch".into()));
    }
    let mut buf = body;
    if take(&mut buf, 4)? != MAGIC {
        return Err(Error::Format("not a shard file (bad magic)".into()));
    }
    let version = u32_at(&mut buf)?;
    if version != SHARD_FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported shard version {version}")));
    }
    let shard_id = u32_at(&mut buf)?;
    let rows = u64_at(&mut buf)? as usize;
    let cols = u64_at(&mut buf)? as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|rc| rc.checked_add(2 * rows))
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Format("shard dimensions overflow".into()))?;
    if buf.len() != expected {
        return Err(Error::Format(format!(
            "shard body has {} bytes, header implies {expected}",
            buf.len()
        )));
    }
    let row_ids: Vec<u64> = (0..rows).map(|_| u64_at(&mut buf)).collect::<Result<_>>()?;
    let mut floats = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let values: Vec<f64> = floats.by_ref().take(rows * cols).collect();
    let y: Vec<f64> = floats.collect();
    let a = FeatureShard::new(shard_id, rows, cols, values)?.with_row_ids(row_ids)?;
    Ok((a, ResponseShard::new(shard_id, y)))
}

/// Writes a shard file; returns its SHA-256 (hex) over the whole file.
pub fn write_shard(path: &Path, a: &FeatureShard, y: &ResponseShard) -> Result<String> {
    let bytes = encode_shard(a, y)?;
    fs::write(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

pub fn read_shard(path: &Path) -> Result<(FeatureShard, ResponseShard)> {
    decode_shard(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (FeatureShard, ResponseShard) {
        let a = FeatureShard::from_rows(3, &[vec![1.0, -0.0], vec![f64::MIN_POSITIVE, 2.5]])
            .unwrap()
            .with_row_ids(vec![10, 4])
            .unwrap();
        (a, ResponseShard::new(3, vec![0.1, -7.0]))
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (a, y) = sample();
        let bytes = encode_shard(&a, &y).unwrap();
        let (a2, y2) = decode_shard(&bytes).unwrap();
        assert_eq!(encode_shard(&a2, &y2).unwrap(), bytes);
        assert_eq!(a2.row_ids(), &[10, 4]);
    }

    #[test]
    fn corruption_is_detected() {
        let (a, y) = sample();
        let mut bytes = encode_shard(&a, &y).unwrap();
        bytes[HEADER + 3] ^= 1;
        assert!(matches!(decode_shard(&bytes), Err(Error::Format(_))));
        assert!(decode_shard(&bytes[..10]).is_err());
    }
}
