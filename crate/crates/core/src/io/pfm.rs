//! Grayscale PFM ("Pf") reader and writer.
//!
//! PFM stores rows bottom-up; in memory we keep them top-down, so the row
//! order is flipped exactly once on read and once on write. A negative scale
//! in the header marks little-endian payloads. Round-tripping finite 32-bit
//! values is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Reads a grayscale PFM file into a top-down `(H, W)` array.
pub fn read_pfm(path: impl AsRef<Path>) -> Result<Array2<f32>> {
    let path = path.as_ref();
    let mut reader = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    parse_pfm(&bytes).map_err(|msg| Error::file(path, msg))
}

/// Writes a top-down `(H, W)` array as little-endian grayscale PFM.
pub fn write_pfm(path: impl AsRef<Path>, image: &Array2<f32>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = image.dim();
    if h == 0 || w == 0 {
        return Err(Error::file(path, "refusing to write empty PFM"));
    }
    let mut writer = BufWriter::new(File::create(path)?);
    write!(writer, "Pf\n{} {}\n-1.0\n", w, h)?;
    // Bottom-up on disk.
    for y in (0..h).rev() {
        for x in 0..w {
            writer.write_all(&image[(y, x)].to_le_bytes())?;
        }
    }
    writer.flush()?;
    Ok(())
}

fn parse_pfm(bytes: &[u8]) -> std::result::Result<Array2<f32>, String> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos).ok_or("missing magic")?;
    match magic {
        b"Pf" => {}
        b"PF" => return Err("unsupported channel count (color PFM)".into()),
        _ => return Err("bad magic, expected \"Pf\"".into()),
    }
    let w = parse_dim(next_token(bytes, &mut pos).ok_or("missing width")?)?;
    let h = parse_dim(next_token(bytes, &mut pos).ok_or("missing height")?)?;
    let scale_tok = next_token(bytes, &mut pos).ok_or("missing scale")?;
    let scale: f32 = std::str::from_utf8(scale_tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or("malformed scale")?;
    if !scale.is_finite() || scale == 0.0 {
        return Err("non-finite or zero scale".into());
    }
    let little_endian = scale < 0.0;
    // Exactly one whitespace byte separates the header from the payload;
    // next_token already consumed it.
    let payload = &bytes[pos..];
    let need = w * h * 4;
    if payload.len() < need {
        return Err(format!("truncated payload: need {need} bytes, have {}", payload.len()));
    }
    let mut image = Array2::zeros((h, w));
    for y_disk in 0..h {
        let y = h - 1 - y_disk; // bottom-up on disk -> top-down in memory
        for x in 0..w {
            let o = (y_disk * w + x) * 4;
            let raw: [u8; 4] = payload[o..o + 4].try_into().unwrap();
            let v = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            image[(y, x)] = v;
        }
    }
    Ok(image)
}

fn parse_dim(tok: &[u8]) -> std::result::Result<usize, String> {
    let s = std::str::from_utf8(tok).map_err(|_| "malformed dimension")?;
    let n: i64 = s.parse().map_err(|_| format!("malformed dimension {s:?}"))?;
    if n <= 0 {
        return Err(format!("non-positive dimension {n}"));
    }
    Ok(n as usize)
}

/// Returns the next whitespace-delimited token and advances `pos` past the
/// single whitespace byte that terminates it.
fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if *pos == start {
        return None;
    }
    let tok = &bytes[start..*pos];
    if *pos < bytes.len() {
        *pos += 1; // consume the terminating whitespace byte
    }
    Some(tok)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_small_map() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pfm");
        let map = array![[0.0f32, 1.5], [-2.0, 12.0]];
        write_pfm(&path, &map).unwrap();
        let back = read_pfm(&path).unwrap();
        assert_eq!(map, back);
    }

    #[test]
    fn hand_encoded_little_endian_is_top_down_in_memory() {
        // 3x2 little-endian file; rows on disk are bottom-up, values 0..6
        // written row by row starting with the bottom row.
        let mut bytes = b"Pf\n3 2\n-1.0\n".to_vec();
        for v in [3.0f32, 4.0, 5.0, 0.0, 1.0, 2.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let img = parse_pfm(&bytes).unwrap();
        assert_eq!(img.dim(), (2, 3));
        // Independent decode: the first disk row is the bottom image row.
        assert_eq!(img, array![[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]]);
    }

    #[test]
    fn big_endian_scale_is_honored() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&7.25f32.to_be_bytes());
        let img = parse_pfm(&bytes).unwrap();
        assert_eq!(img[(0, 0)], 7.25);
    }

    #[test]
    fn color_pfm_is_rejected() {
        let bytes = b"PF\n1 1\n-1.0\n\0\0\0\0\0\0\0\0\0\0\0\0".to_vec();
        let err = parse_pfm(&bytes).unwrap_err();
        assert!(err.contains("unsupported channel count"), "{err}");
    }

    #[test]
    fn bad_magic_and_truncation_are_rejected() {
        assert!(parse_pfm(b"Px\n1 1\n-1.0\n\0\0\0\0").is_err());
        let mut bytes = b"Pf\n2 1\n-1.0\n".to_vec();
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&[0, 0, 0]); // one byte short
        let err = parse_pfm(&bytes).unwrap_err();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn bad_dims_are_rejected() {
        assert!(parse_pfm(b"Pf\n0 2\n-1.0\n").is_err());
        assert!(parse_pfm(b"Pf\nx 2\n-1.0\n").is_err());
        assert!(parse_pfm(b"Pf\n2 2\nnan\n").is_err());
    }
}
