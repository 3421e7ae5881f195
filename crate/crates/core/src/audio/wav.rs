use std::path::Path;

use super::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

fn malformed(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.into(),
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Parses a RIFF/WAVE file holding mono 16-bit PCM at 44.1 kHz.
/// `path` only labels errors.
pub fn parse_wav(bytes: &[u8], path: &Path) -> Result<Waveform> {
    if bytes.len() < 12 {
        return Err(malformed(path, bytes.len(), "truncated RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(malformed(path, 0, "missing RIFF magic"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(malformed(path, 8, "missing WAVE form type"));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    loop {
        if pos + 8 > bytes.len() {
            return Err(malformed(path, pos, "no data chunk found"));
        }
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        if id == b"fmt " {
            if size < 16 || body + 16 > bytes.len() {
                return Err(malformed(path, body, "fmt chunk too short"));
            }
            format = Some((
                u16_at(bytes, body),
                u16_at(bytes, body + 2),
                u32_at(bytes, body + 4),
                u16_at(bytes, body + 14),
            ));
        } else if id == b"data" {
            let (fmt_tag, channels, rate, bits) =
                format.ok_or_else(|| malformed(path, pos, "data chunk precedes fmt chunk"))?;
            if fmt_tag != 1 {
                return Err(malformed(
                    path,
                    20,
                    format!("unsupported format tag {fmt_tag}, need PCM (1)"),
                ));
            }
            if channels != 1 {
                return Err(malformed(
                    path,
                    22,
                    format!("expected mono, got {channels} channels"),
                ));
            }
            if rate != SAMPLE_RATE {
                return Err(malformed(
                    path,
                    24,
                    format!("expected {SAMPLE_RATE} Hz, got {rate}"),
                ));
            }
            if bits != 16 {
                return Err(malformed(
                    path,
                    34,
                    format!("expected 16-bit samples, got {bits}"),
                ));
            }
            if body + size > bytes.len() {
                return Err(malformed(
                    path,
                    bytes.len(),
                    format!(
                        "data chunk declares {size} bytes but only {} remain",
                        bytes.len() - body
                    ),
                ));
            }
            if !size.is_multiple_of(2) {
                return Err(malformed(
                    path,
                    pos + 4,
                    "odd data chunk size for 16-bit samples",
                ));
            }
            let samples = bytes[body..body + size]
                .chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
                .collect();
            return Waveform::new(samples, rate);
        }
        pos = body + size + (size & 1);
    }
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes, path)
}

/// Encodes samples as mono PCM16, clamping to [−1, 1].
pub fn encode_wav(samples: &[f32], sample_rate: u32) -> Vec<u8> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    std::fs::write(path, encode_wav(w.samples(), w.sample_rate())).map_err(|e| Error::io(path, e))
}

/// Scales samples so the absolute peak sits at `dbfs` (silence is left alone).
pub fn peak_normalize(samples: &mut [f32], dbfs: f64) {
    let peak = samples.iter().fold(0.0f32, |m, &s| m.max(s.abs()));
    if peak > 0.0 {
        let k = (10f64.powf(dbfs / 20.0) / peak as f64) as f32;
        samples.iter_mut().for_each(|s| *s *= k);
    }
}
