//! The `LFT1` tensor container for intermediate volumes and checkpoints.
//!
//! Layout: magic `LFT1` (4 bytes), rank as u32 little-endian, each dimension
//! as u32 little-endian, then the row-major payload as f32 little-endian.
//! Round-trips of finite values are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LFT1";

/// Writes a row-major tensor with the given dimensions.
pub fn save_tensor(path: impl AsRef<Path>, dims: &[usize], data: &[f32]) -> Result<()> {
    let path = path.as_ref();
    let len: usize = dims.iter().product();
    if len != data.len() {
        return Err(Error::ShapeMismatch(format!(
            "dims {:?} imply {} elements, got {}",
            dims,
            len,
            data.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        let d = u32::try_from(d)
            .map_err(|_| Error::file(path, format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a tensor back as `(dims, row-major data)`.
pub fn load_tensor(path: impl AsRef<Path>) -> Result<(Vec<usize>, Vec<f32>)> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    parse_tensor(&bytes).map_err(|msg| Error::file(path, msg))
}

fn parse_tensor(bytes: &[u8]) -> std::result::Result<(Vec<usize>, Vec<f32>), String> {
    if bytes.len() < 8 || &bytes[0..4] != MAGIC {
        return Err("bad magic, expected \"LFT1\"".into());
    }
    let rank = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header_end = 8 + rank * 4;
    if bytes.len() < header_end {
        return Err("truncated dimension list".into());
    }
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        let o = 8 + i * 4;
        dims.push(u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize);
    }
    let len: usize = dims.iter().product();
    let payload = &bytes[header_end..];
    if payload.len() < len * 4 {
        return Err(format!(
            "truncated payload: need {} bytes, have {}",
            len * 4,
            payload.len()
        ));
    }
    let data = payload[..len * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dims, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_file_is_32_bytes_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.lft");
        save_tensor(&path, &[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 32);
        let (dims, data) = load_tensor(&path).unwrap();
        assert_eq!(dims, vec![2, 2]);
        assert_eq!(data, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn rank4_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t4.lft");
        let dims = [7usize, 2, 9, 3];
        let n: usize = dims.iter().product();
        let data: Vec<f32> = (0..n).map(|i| (i as f32).sin()).collect();
        save_tensor(&path, &dims, &data).unwrap();
        let (d2, v2) = load_tensor(&path).unwrap();
        assert_eq!(d2, dims.to_vec());
        assert!(data.iter().zip(&v2).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn truncation_and_bad_magic_fail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.lft");
        save_tensor(&path, &[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        assert!(parse_tensor(&bytes).unwrap_err().contains("truncated"));
        bytes[0] = b'X';
        assert!(parse_tensor(&bytes).unwrap_err().contains("magic"));
    }

    #[test]
    fn dims_data_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.lft");
        assert!(save_tensor(&path, &[3], &[1.0, 2.0]).is_err());
    }
}
