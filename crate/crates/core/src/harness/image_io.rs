//! Plain (P2) and binary (P5) PGM images.
//!
//! Loading scales samples by `1/maxval`. Saving clamps to `[0, 1]` and
//! writes 8-bit P5 with `q = round(255 v)`, halves rounded away from zero,
//! so `0.5` is stored as 128.

use std::path::Path;

use super::HarnessError;
use crate::vector::{GridShape, GridVector};

fn format_err(offset: usize, message: impl Into<String>) -> HarnessError {
    HarnessError::Format { offset, message: message.into() }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32, HarnessError> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format_err(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(start, format!("{what} out of range")))
    }
}

/// Decodes a PGM byte buffer into a square- or matrix-shaped vector.
pub fn decode_pgm(bytes: &[u8]) -> Result<GridVector, HarnessError> {
    if bytes.len() < 2 || bytes[0] != b'P' || !(bytes[1] == b'2' || bytes[1] == b'5') {
        return Err(format_err(0, "bad magic number, expected P2 or P5"));
    }
    let binary = bytes[1] == b'5';
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    cur.skip_space();
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(format_err(maxval_at, "empty image"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format_err(maxval_at, format!("maxval {maxval} outside 1..=65535")));
    }
    let count = width * height;
    let scale = 1.0 / maxval as f64;
    let mut values = Vec::with_capacity(count);
    if binary {
        if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
            return Err(format_err(cur.pos, "missing separator before raster"));
        }
        let start = cur.pos + 1;
        let depth = if maxval > 255 { 2 } else { 1 };
        let end = start + depth * count;
        if bytes.len() < end {
            return Err(format_err(bytes.len(), format!("raster truncated, need {} bytes", depth * count)));
        }
        for (i, chunk) in bytes[start..end].chunks(depth).enumerate() {
            let q = if depth == 2 { u32::from(chunk[0]) << 8 | u32::from(chunk[1]) } else { u32::from(chunk[0]) };
            if q > maxval {
                return Err(format_err(start + depth * i, format!("sample {q} exceeds maxval {maxval}")));
            }
            values.push(q as f64 * scale);
        }
    } else {
        for _ in 0..count {
            cur.skip_space();
            let at = cur.pos;
            let q = cur.number("sample")?;
            if q > maxval {
                return Err(format_err(at, format!("sample {q} exceeds maxval {maxval}")));
            }
            values.push(q as f64 * scale);
        }
    }
    let shape = if width == height { GridShape::Square(width) } else { GridShape::Matrix(height, width) };
    Ok(GridVector::new(values).with_shape(shape))
}

/// 8-bit quantization used by [`save_pgm`].
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes as 8-bit P5. Non-square flat vectors are rejected.
pub fn encode_pgm(x: &GridVector) -> Result<Vec<u8>, HarnessError> {
    if !x.is_finite() {
        return Err(HarnessError::Invariant("cannot save a non-finite image".into()));
    }
    let (rows, cols) = match x.shape() {
        GridShape::Square(s) => (s, s),
        GridShape::Matrix(r, c) => (r, c),
        GridShape::Flat => {
            let s = (x.len() as f64).sqrt().round() as usize;
            if s * s != x.len() {
                return Err(HarnessError::Invariant(format!("{} samples do not form an image", x.len())));
            }
            (s, s)
        }
    };
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(x.iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn load_pgm(path: &Path) -> Result<GridVector, HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    decode_pgm(&bytes)
}

pub fn save_pgm(x: &GridVector, path: &Path) -> Result<(), HarnessError> {
    let bytes = encode_pgm(x)?;
    std::fs::write(path, bytes).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}
