//! Portable Float Map I/O.
//!
//! Header: `PF` (RGB) or `Pf` (gray), then `<w> <h>`, then a scale whose
//! sign gives endianness (negative = little-endian). Scanlines are stored
//! bottom-up. We always write `PF\n<w> <h>\n-1.0\n` followed by
//! little-endian RGB.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    /// Top-down rows of RGB.
    pub pixels: Vec<[f32; 3]>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Image(format!("PFM: {}", msg.into()))
}

/// Encodes top-down RGB pixels.
pub fn encode(width: usize, height: usize, pixels: &[[f32; 3]]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "pixel count must match dimensions");
    let mut out = format!("PF\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(pixels.len() * 12);
    for row in (0..height).rev() {
        for p in &pixels[row * width..(row + 1) * width] {
            for c in p {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    out
}

pub fn write(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[[f32; 3]]) -> Result<()> {
    std::fs::write(path, encode(width, height, pixels))?;
    Ok(())
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(bad("truncated header"));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| bad("header is not ASCII"))
}

pub fn decode(bytes: &[u8]) -> Result<PfmImage> {
    let mut pos = 0;
    let channels = match next_token(bytes, &mut pos)? {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(bad(format!("bad magic '{other}'"))),
    };
    let width: usize = next_token(bytes, &mut pos)?.parse().map_err(|_| bad("bad width"))?;
    let height: usize = next_token(bytes, &mut pos)?.parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = next_token(bytes, &mut pos)?.parse().map_err(|_| bad("bad scale"))?;
    if width == 0 || height == 0 {
        return Err(bad("zero-sized image"));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("scale must be non-zero"));
    }
    // exactly one whitespace byte ends the header
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("truncated header"));
    }
    pos += 1;
    let little = scale < 0.0;
    let need = width * height * channels * 4;
    let body = &bytes[pos..];
    if body.len() < need {
        return Err(bad(format!("expected {need} data bytes, found {}", body.len())));
    }
    let mut pixels = vec![[0.0f32; 3]; width * height];
    let mut vals = body[..need].chunks_exact(4).map(|c| {
        let b: [u8; 4] = c.try_into().unwrap();
        if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        }
    });
    for row in (0..height).rev() {
        for p in &mut pixels[row * width..(row + 1) * width] {
            if channels == 3 {
                *p = [vals.next().unwrap(), vals.next().unwrap(), vals.next().unwrap()];
            } else {
                let v = vals.next().unwrap();
                *p = [v; 3];
            }
        }
    }
    Ok(PfmImage { width, height, pixels })
}

pub fn read(path: impl AsRef<Path>) -> Result<PfmImage> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_round_trip() {
        let px = vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let bytes = encode(1, 2, &px);
        assert!(bytes.starts_with(b"PF\n1 2\n-1.0\n"));
        // bottom row first
        assert_eq!(&bytes[12..16], &4.0f32.to_le_bytes());
        assert_eq!(decode(&bytes).unwrap().pixels, px);
    }

    #[test]
    fn big_endian_gray() {
        let mut b = b"Pf\n2 1\n1.0\n".to_vec();
        b.extend_from_slice(&0.5f32.to_be_bytes());
        b.extend_from_slice(&2.0f32.to_be_bytes());
        let img = decode(&b).unwrap();
        assert_eq!(img.pixels, vec![[0.5; 3], [2.0; 3]]);
    }

    #[test]
    fn malformed() {
        assert!(decode(b"P6\n1 1\n255\n").is_err());
        assert!(decode(b"PF\n2 2\n-1.0\n\0\0").is_err());
        assert!(decode(b"PF\n2").is_err());
    }
}
