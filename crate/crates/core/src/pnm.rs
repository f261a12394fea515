//! Binary PGM (P5) and PPM (P6) codecs, 8-bit only.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::image::{ImageBuffer, ImageError};

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("unsupported format (only binary P5/P6 are read)")]
    UnsupportedFormat,
    #[error("malformed header: {0}")]
    MalformedHeader(&'static str),
    #[error("payload truncated: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("unsupported maxval {0} (only 255)")]
    UnsupportedMaxval(u32),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.data.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.data.get(self.pos) {
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

    fn number(&mut self, what: &'static str) -> Result<u32, PnmError> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.data.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PnmError::MalformedHeader(what));
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(PnmError::MalformedHeader(what))
    }
}

/// Decodes a P5/P6 file held in memory.
pub fn decode(data: &[u8]) -> Result<ImageBuffer, PnmError> {
    let channels = match data.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(PnmError::UnsupportedFormat),
    };
    let mut cur = Cursor { data, pos: 2 };
    if !cur.data.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(PnmError::MalformedHeader("magic must be followed by whitespace"));
    }
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(PnmError::MalformedHeader("zero dimension"));
    }
    if maxval != 255 {
        return Err(PnmError::UnsupportedMaxval(maxval));
    }
    // exactly one whitespace byte separates the header from the raster
    match cur.data.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(PnmError::MalformedHeader("missing separator after maxval")),
    }
    let expected = width * height * channels;
    let payload = &data[cur.pos..];
    if payload.len() < expected {
        return Err(PnmError::TruncatedPayload {
            expected,
            actual: payload.len(),
        });
    }
    Ok(ImageBuffer::new(width, height, channels, payload[..expected].to_vec())?)
}

/// Encodes as P5 (1 channel) or P6 (3 channels) with a minimal header.
pub fn encode(img: &ImageBuffer) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let header = format!("{magic}\n{} {}\n255\n", img.width(), img.height());
    let mut out = Vec::with_capacity(header.len() + img.samples().len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(img.samples());
    out
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageBuffer, PnmError> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|source| PnmError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&data)
}

pub fn write_image(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<(), PnmError> {
    let path = path.as_ref();
    fs::write(path, encode(img)).map_err(|source| PnmError::Io {
        path: path.display().to_string(),
        source,
    })
}
