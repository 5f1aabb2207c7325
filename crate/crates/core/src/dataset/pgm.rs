//! Binary PGM (`P5`, maxval 255) export and import.
//!
//! Ink is inverted for display: byte `round(255 (1 - a))`, so ink 1.0 is a
//! black 0 byte and background is white 255.

use std::fs;
use std::path::Path;

use super::DatasetError;
use crate::topology::GrayImage;

pub fn ink_to_byte(a: f32) -> u8 {
    (255.0 * (1.0 - a.clamp(0.0, 1.0) as f64)).round() as u8
}

pub fn byte_to_ink(b: u8) -> f32 {
    (1.0 - b as f64 / 255.0) as f32
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().map(|&a| ink_to_byte(a)));
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, DatasetError> {
    let mut cur = HeaderCursor { bytes, pos: 0 };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(DatasetError::format(0, "not a binary PGM (magic P5)"));
    }
    cur.pos = 2;
    let width = cur.number()?;
    let height = cur.number()?;
    cur.skip_space_and_comments();
    let maxval_at = cur.pos;
    let maxval = cur.number()?;
    if maxval != 255 {
        return Err(DatasetError::format(maxval_at as u64, format!("maxval {maxval}, only 255 is supported")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(DatasetError::format(cur.pos as u64, "missing whitespace after maxval")),
    }
    let need = width * height;
    let raster = &bytes[cur.pos..];
    if raster.len() < need {
        return Err(DatasetError::format(
            bytes.len() as u64,
            format!("raster truncated: need {need} bytes, have {}", raster.len()),
        ));
    }
    let pixels = raster[..need].iter().map(|&b| byte_to_ink(b)).collect();
    GrayImage::new(height, width, pixels).map_err(|e| DatasetError::format(0, e.to_string()))
}

pub fn export_pgm(img: &GrayImage, path: &Path) -> Result<(), DatasetError> {
    fs::write(path, encode_pgm(img))?;
    Ok(())
}

pub fn import_pgm(path: &Path) -> Result<GrayImage, DatasetError> {
    decode_pgm(&fs::read(path)?)
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<usize, DatasetError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(DatasetError::format(start as u64, "expected a decimal header field"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| DatasetError::format(start as u64, "header field out of range"))
    }
}
