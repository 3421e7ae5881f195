use std::path::{Path, PathBuf};

use super::Image;
use crate::error::{Error, Result};

fn malformed(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                        self.pos += 1;
                    }
                }
                _ => return,
            }
        }
    }

    /// Returns the value and the byte offset where it starts.
    fn number(&mut self, what: &str) -> Result<(usize, usize)> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(malformed(self.path, start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .map(|v| (v, start))
            .ok_or_else(|| malformed(self.path, start, format!("{what} out of range")))
    }
}

/// Parses a binary (P6) PPM with maxval 255. `path` only labels errors.
pub fn parse_ppm(bytes: &[u8], path: &Path) -> Result<Image> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(malformed(path, 0, "missing P6 magic"));
    }
    let mut h = Header {
        bytes,
        pos: 2,
        path,
    };
    let (width, _) = h.number("width")?;
    let (height, _) = h.number("height")?;
    let (maxval, maxval_at) = h.number("maxval")?;
    if maxval != 255 {
        return Err(malformed(
            path,
            maxval_at,
            format!("maxval must be 255, got {maxval}"),
        ));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(malformed(path, h.pos, "expected whitespace after maxval")),
    }
    let need = width * height * 3;
    let have = bytes.len() - h.pos;
    if have < need {
        return Err(malformed(
            path,
            bytes.len(),
            format!("pixel data truncated: need {need} bytes, found {have}"),
        ));
    }
    Image::new(width, height, bytes[h.pos..h.pos + need].to_vec())
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ppm(&bytes, path)
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    std::fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

/// File name of the frame for second `m`.
pub fn frame_file_name(m: usize) -> String {
    format!("frame_{m:05}.ppm")
}

/// Sorted `frame_NNNNN.ppm` paths in `dir`.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        let is_frame = name.len() == "frame_00000.ppm".len()
            && name.starts_with("frame_")
            && name.ends_with(".ppm")
            && name[6..11].bytes().all(|b| b.is_ascii_digit());
        if is_frame {
            paths.push(entry.path());
        }
    }
    paths.sort();
    Ok(paths)
}
