//! 8-bit RGB raster with binary PPM (P6) I/O.

use std::path::Path;

use crate::error::{Error, Result};

const MAX_PIXELS: usize = 1 << 26;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&color);
        }
        img
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, color: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&color);
    }

    /// Sets a pixel given signed coordinates; out-of-bounds writes are dropped.
    pub fn put(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.set(x as usize, y as usize, color);
        }
    }

    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, color: [u8; 3]) {
        for y in y0.max(0)..y1.min(self.height as i64) {
            for x in x0.max(0)..x1.min(self.width as i64) {
                self.set(x as usize, y as usize, color);
            }
        }
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode_ppm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let magic = token(bytes, &mut pos)?;
        if magic != b"P6" {
            return Err(perr("not a binary PPM (P6)"));
        }
        let width = number(bytes, &mut pos)?;
        let height = number(bytes, &mut pos)?;
        let maxval = number(bytes, &mut pos)?;
        if maxval != 255 {
            return Err(perr(format!("unsupported maxval {maxval}")));
        }
        if width == 0 || height == 0 || width.saturating_mul(height) > MAX_PIXELS {
            return Err(perr(format!("unsupported extents {width}×{height}")));
        }
        // exactly one whitespace byte separates the header from the raster
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(perr("missing separator after header"));
        }
        pos += 1;
        let n = width * height * 3;
        if bytes.len() - pos != n {
            return Err(perr(format!(
                "raster holds {} bytes, expected {n}",
                bytes.len() - pos
            )));
        }
        Ok(RgbImage {
            width,
            height,
            data: bytes[pos..].to_vec(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode_ppm()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_ppm(&bytes)
    }
}

fn perr(msg: impl Into<String>) -> Error {
    Error::parse("ppm", msg)
}

fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(perr("truncated header"));
    }
    Ok(&bytes[start..*pos])
}

fn number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let t = token(bytes, pos)?;
    if t.len() > 9 || !t.iter().all(u8::is_ascii_digit) {
        return Err(perr("bad header number"));
    }
    Ok(std::str::from_utf8(t).expect("digits").parse().expect("digits"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let mut img = RgbImage::filled(5, 3, [10, 20, 30]);
        img.set(4, 2, [255, 0, 7]);
        let bytes = img.encode_ppm();
        assert!(bytes.starts_with(b"P6\n5 3\n255\n"));
        assert_eq!(RgbImage::decode_ppm(&bytes).unwrap(), img);
    }

    #[test]
    fn ppm_header_comments_and_errors() {
        let mut bytes = b"P6 # comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img = RgbImage::decode_ppm(&bytes).unwrap();
        assert_eq!(img.pixel(1, 0), [4, 5, 6]);
        assert!(RgbImage::decode_ppm(b"P3\n1 1\n255\n").is_err());
        assert!(RgbImage::decode_ppm(b"P6\n1 1\n255\n\x01\x02").is_err());
        assert!(RgbImage::decode_ppm(b"P6\n99999999 99999999\n255\n").is_err());
        assert!(RgbImage::decode_ppm(b"").is_err());
    }
}
