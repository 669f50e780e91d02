//! Binary PGM (P5) reading and writing. 8-bit samples when `maxval < 256`,
//! otherwise big-endian 16-bit samples.

use std::path::Path;

use super::image::GrayImage;
use crate::error::{Error, Result};

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("digits are ascii")
            .parse()
            .map_err(|_| parse_err(start, format!("{what} out of range")))
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(parse_err(0, "missing P5 magic"));
    }
    let mut header = Header { bytes, pos: 2 };
    let width = header.number("width")?;
    let height = header.number("height")?;
    let maxval_at = header.pos;
    let maxval = header.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(parse_err(2, format!("image size {width}x{height} is empty")));
    }
    if !(1..=65535).contains(&maxval) {
        return Err(parse_err(maxval_at, format!("maxval {maxval} outside 1..=65535")));
    }
    match bytes.get(header.pos) {
        Some(b) if b.is_ascii_whitespace() => {}
        _ => return Err(parse_err(header.pos, "expected a single whitespace byte after maxval")),
    }
    let data_start = header.pos + 1;
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let needed = width * height * sample_bytes;
    let available = bytes.len() - data_start;
    if available < needed {
        return Err(parse_err(
            bytes.len(),
            format!("truncated payload: expected {needed} bytes, found {available}"),
        ));
    }

    let scale = maxval as f64;
    let mut pixels = Vec::with_capacity(width * height);
    for (i, chunk) in bytes[data_start..data_start + needed].chunks_exact(sample_bytes).enumerate() {
        let v = match chunk {
            [b] => *b as usize,
            [hi, lo] => u16::from_be_bytes([*hi, *lo]) as usize,
            _ => unreachable!(),
        };
        if v > maxval {
            return Err(parse_err(
                data_start + i * sample_bytes,
                format!("sample {v} exceeds maxval {maxval}"),
            ));
        }
        pixels.push(v as f64 / scale);
    }
    GrayImage::new(width, height, pixels)
}

/// Quantizes to `round(p * maxval)` and encodes.
pub fn encode_pgm(img: &GrayImage, maxval: u16) -> Vec<u8> {
    assert!(maxval >= 1, "maxval must be positive");
    let mut out = format!("P5\n{} {}\n{}\n", img.width(), img.height(), maxval).into_bytes();
    let scale = maxval as f64;
    for &p in img.pixels() {
        let q = (p.clamp(0.0, 1.0) * scale).round() as u16;
        if maxval < 256 {
            out.push(q as u8);
        } else {
            out.extend_from_slice(&q.to_be_bytes());
        }
    }
    out
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

pub fn write_pgm(path: &Path, img: &GrayImage, maxval: u16) -> Result<()> {
    std::fs::write(path, encode_pgm(img, maxval)).map_err(|e| Error::io(path, e))
}
