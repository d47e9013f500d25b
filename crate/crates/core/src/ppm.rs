//! Binary PPM (P6) reading and writing.
//!
//! Files are written as
//!
//! ```text
//! "P6" 0x0A <width> 0x20 <height> 0x0A "255" 0x0A <payload>
//! ```
//!
//! with decimal ASCII dimensions and a payload of `width*height*3` bytes,
//! row-major, RGB interleaved. A 1x1 image therefore takes an 11-byte header
//! (`P6\n1 1\n255\n`) followed by 3 payload bytes. On write each value is
//! clamped to `[0, 255]` and truncated toward zero.
//!
//! The reader accepts any P6 header whitespace and `#` comments, but only
//! 8-bit data (`maxval == 255`).

use std::fs;
use std::path::Path;

use crate::image::ImageBuffer;

#[derive(Debug, thiserror::Error)]
pub enum PpmError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:?}, expected \"P6\"")]
    BadMagic(Vec<u8>),
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("unsupported depth: maxval {0}, only 255 is supported")]
    UnsupportedDepth(u32),
    #[error("short pixel data: expected {expected} bytes, found {actual}")]
    ShortData { expected: usize, actual: usize },
}

pub fn encode_ppm(image: &ImageBuffer) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", image.width(), image.height());
    let mut out = Vec::with_capacity(header.len() + image.data().len());
    out.extend_from_slice(header.as_bytes());
    out.extend(image.data().iter().map(|v| v.clamp(0.0, 255.0) as u8));
    out
}

pub fn write_ppm(image: &ImageBuffer, path: impl AsRef<Path>) -> Result<(), PpmError> {
    fs::write(path, encode_ppm(image))?;
    Ok(())
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<ImageBuffer, PpmError> {
    decode_ppm(&fs::read(path)?)
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
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

    fn number(&mut self, what: &str) -> Result<u32, PpmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PpmError::BadHeader(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| PpmError::BadHeader(format!("{what} out of range")))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<ImageBuffer, PpmError> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(PpmError::BadMagic(bytes[..bytes.len().min(2)].to_vec()));
    }
    let mut h = Header { bytes, pos: 2 };
    if !h.bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(PpmError::BadHeader("no separator after magic".into()));
    }
    let width = h.number("width")? as usize;
    let height = h.number("height")? as usize;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(PpmError::BadHeader(format!("empty image {width}x{height}")));
    }
    if maxval != 255 {
        return Err(PpmError::UnsupportedDepth(maxval));
    }
    // exactly one whitespace byte separates maxval from the payload
    if !h.bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(PpmError::BadHeader("no separator after maxval".into()));
    }
    let payload = &bytes[h.pos + 1..];
    let expected = width * height * 3;
    if payload.len() < expected {
        return Err(PpmError::ShortData {
            expected,
            actual: payload.len(),
        });
    }
    let data = payload[..expected].iter().map(|&b| f64::from(b)).collect();
    Ok(ImageBuffer::new(height, width, data).expect("dimensions checked"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_pixel_byte_layout() {
        let img = ImageBuffer::new(1, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let mut expected = b"P6\n1 1\n255\n".to_vec();
        expected.extend_from_slice(&[1, 2, 3]);
        assert_eq!(encode_ppm(&img), expected);
        assert_eq!(decode_ppm(&expected).unwrap(), img);
    }

    #[test]
    fn truncates_and_clamps_on_write() {
        let img = ImageBuffer::new(1, 2, vec![127.5, 0.99, 254.999, -4.0, 300.0, 12.0]).unwrap();
        let bytes = encode_ppm(&img);
        assert_eq!(&bytes[bytes.len() - 6..], &[127, 0, 254, 0, 255, 12]);
    }

    #[test]
    fn accepts_comments_and_loose_whitespace() {
        let mut bytes = b"P6 # made by hand\n 2\t1\n# depth\n255\n".to_vec();
        bytes.extend_from_slice(&[9, 8, 7, 6, 5, 4]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.dims(), (1, 2));
        assert_eq!(img.pixel(0, 1), [6.0, 5.0, 4.0]);
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(decode_ppm(b"P3\n1 1\n255\n"), Err(PpmError::BadMagic(_))));
        let mut deep = b"P6\n1 1\n65535\n".to_vec();
        deep.extend_from_slice(&[0; 6]);
        assert!(matches!(decode_ppm(&deep), Err(PpmError::UnsupportedDepth(65535))));
        assert!(matches!(
            decode_ppm(b"P6\n2 2\n255\n\x01\x02"),
            Err(PpmError::ShortData { expected: 12, actual: 2 })
        ));
        assert!(matches!(decode_ppm(b"P6\n2\n"), Err(PpmError::BadHeader(_))));
    }
}
