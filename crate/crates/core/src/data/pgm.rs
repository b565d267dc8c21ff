//! Binary greyscale PGM (P5), 8- and 16-bit.
//!
//! Samples are one byte when `maxval < 256`, otherwise two bytes big-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

impl PgmImage {
    pub fn new(width: usize, height: usize, maxval: u16, data: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::shape(format!(
                "pgm {width}x{height} with {} samples",
                data.len()
            )));
        }
        if maxval == 0 {
            return Err(Error::format("pgm", "maxval must be positive"));
        }
        if let Some(v) = data.iter().find(|&&v| v > maxval) {
            return Err(Error::format("pgm", format!("sample {v} exceeds maxval {maxval}")));
        }
        Ok(PgmImage {
            width,
            height,
            maxval,
            data,
        })
    }

    /// Samples scaled to `[0, 1]`.
    pub fn normalized(&self) -> Vec<f32> {
        let m = self.maxval as f32;
        self.data.iter().map(|&v| v as f32 / m).collect()
    }
}

pub fn encode(img: &PgmImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    if img.maxval < 256 {
        out.extend(img.data.iter().map(|&v| v as u8));
    } else {
        for &v in &img.data {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], context: &str) -> Result<PgmImage> {
    let bad = |msg: &str| Error::format(context, msg);
    if !bytes.starts_with(b"P5") {
        return Err(bad("missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Whitespace and '#' comments may separate header fields.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("header value out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("header must end with one whitespace byte"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval must be in 1..=65535"));
    }
    let n = width * height;
    let payload = &bytes[pos..];
    let data: Vec<u16> = if maxval < 256 {
        if payload.len() < n {
            return Err(bad("truncated pixel data"));
        }
        payload[..n].iter().map(|&b| b as u16).collect()
    } else {
        if payload.len() < 2 * n {
            return Err(bad("truncated pixel data"));
        }
        payload[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    PgmImage::new(width, height, maxval as u16, data)
        .map_err(|e| Error::format(context, e.to_string()))
}

pub fn read(path: impl AsRef<Path>) -> Result<PgmImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

pub fn write(path: impl AsRef<Path>, img: &PgmImage) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(img)).map_err(|e| Error::io(path, e))
}

/// Min-max scales `values` onto `0..=maxval`. Returns the image and the
/// `(min, max)` used; a constant input maps to all zeros.
pub fn quantize(
    values: &[f32],
    width: usize,
    height: usize,
    maxval: u16,
) -> Result<(PgmImage, f32, f32)> {
    let min = values.iter().copied().fold(f32::INFINITY, f32::min);
    let max = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = (max - min) as f64;
    let data = values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                (((v - min) as f64 / span) * maxval as f64).round() as u16
            } else {
                0
            }
        })
        .collect();
    Ok((PgmImage::new(width, height, maxval, data)?, min, max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_bit_layout() {
        let img = PgmImage::new(3, 1, 255, vec![0, 7, 255]).unwrap();
        let bytes = encode(&img);
        assert_eq!(bytes, b"P5\n3 1\n255\n\x00\x07\xff");
        assert_eq!(decode(&bytes, "t").unwrap(), img);
    }

    #[test]
    fn sixteen_bit_is_big_endian() {
        let img = PgmImage::new(2, 1, 65535, vec![0x0102, 65535]).unwrap();
        let bytes = encode(&img);
        assert_eq!(&bytes[bytes.len() - 4..], &[1, 2, 255, 255]);
        assert_eq!(decode(&bytes, "t").unwrap(), img);
    }

    #[test]
    fn header_comments_are_skipped() {
        let bytes = b"P5 # made by hand\n2 # width\n 1\n10\n\x01\x02";
        let img = decode(bytes, "t").unwrap();
        assert_eq!((img.width, img.height, img.maxval), (2, 1, 10));
        assert_eq!(img.data, [1, 2]);
    }

    #[test]
    fn malformed_inputs() {
        assert!(decode(b"P2\n1 1\n255\n0", "t").is_err());
        assert!(decode(b"P5\n2 2\n255\n\x00", "t").is_err());
        assert!(decode(b"P5\n1 1\n70000\n\x00\x00", "t").is_err());
        assert!(decode(b"P5\n1 1\n10\n\x0b", "t").is_err());
    }

    #[test]
    fn quantize_constant_and_ramp() {
        let (img, lo, hi) = quantize(&[2.0; 4], 2, 2, 65535).unwrap();
        assert_eq!((lo, hi), (2.0, 2.0));
        assert!(img.data.iter().all(|&v| v == 0));
        let (img, _, _) = quantize(&[-1.0, 0.0, 1.0], 3, 1, 255).unwrap();
        assert_eq!(img.data, [0, 128, 255]);
    }
}
