//! Binary greymap (P5) reading and writing. Only maxval 255 is accepted.

use std::path::{Path, PathBuf};

use feathernet_core::image::GrayImage;

#[derive(Debug, thiserror::Error)]
pub enum PgmError {
    #[error("bad magic: not a PGM file")]
    BadMagic,
    #[error("unsupported format {0}: only binary P5 is supported")]
    UnsupportedFormat(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("maxval {0} is not supported (must be 255)")]
    MaxVal(u64),
    #[error("truncated: {0}")]
    Truncated(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
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

    fn number(&mut self, what: &str) -> Result<u64, PgmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return match self.bytes.get(self.pos) {
                None => Err(PgmError::Truncated(format!("header ends before {what}"))),
                Some(_) => Err(PgmError::Header(format!("expected {what}"))),
            };
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PgmError::Header(format!("{what} out of range")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<GrayImage, PgmError> {
    match bytes {
        [b'P', b'5', ..] => {}
        [b'P', d, ..] if d.is_ascii_digit() => return Err(PgmError::UnsupportedFormat(format!("P{}", *d as char))),
        _ => return Err(PgmError::BadMagic),
    }
    let mut cur = Cursor { bytes, pos: 2 };
    if !bytes.get(2).is_some_and(u8::is_ascii_whitespace) {
        return Err(PgmError::BadMagic);
    }
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(PgmError::MaxVal(maxval));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        Some(_) => return Err(PgmError::Header("missing separator after maxval".into())),
        None => return Err(PgmError::Truncated("no pixel data".into())),
    }
    if width == 0 || height == 0 {
        return Err(PgmError::Header(format!("empty image {width}x{height}")));
    }
    let len = width
        .checked_mul(height)
        .ok_or_else(|| PgmError::Header(format!("image {width}x{height} too large")))?;
    let data = &bytes[cur.pos..];
    if data.len() < len {
        return Err(PgmError::Truncated(format!("expected {len} pixel bytes, found {}", data.len())));
    }
    Ok(GrayImage {
        width,
        height,
        pixels: data[..len].to_vec(),
    })
}

pub fn encode(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.pixels);
    out
}

pub fn read_pgm(path: &Path) -> Result<GrayImage, PgmError> {
    let bytes = std::fs::read(path).map_err(|source| PgmError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}

pub fn write_pgm(image: &GrayImage, path: &Path) -> Result<(), PgmError> {
    std::fs::write(path, encode(image)).map_err(|source| PgmError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_with_comment() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([7, 9]);
        let img = decode(&bytes).unwrap();
        assert_eq!((img.width, img.height, img.pixels), (2, 1, vec![7, 9]));
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(decode(b"GIF89a"), Err(PgmError::BadMagic)));
        assert!(matches!(decode(b"P2\n1 1\n255\n0\n"), Err(PgmError::UnsupportedFormat(f)) if f == "P2"));
        assert!(matches!(decode(b"P5\n1 1\n65535\n\0\0"), Err(PgmError::MaxVal(65535))));
        assert!(matches!(decode(b"P5\n4 4\n255\n\0\0"), Err(PgmError::Truncated(_))));
        assert!(matches!(decode(b"P5\n4"), Err(PgmError::Truncated(_))));
        assert!(matches!(decode(b"P5\nx 4\n255\n"), Err(PgmError::Header(_))));
    }

    #[test]
    fn unsupported_format_message() {
        let e = decode(b"P2\n1 1\n255\n0\n").unwrap_err().to_string();
        assert!(e.contains("unsupported format"), "{e}");
    }
}
