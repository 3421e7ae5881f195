use crate::audio::{odf_of, RhythmKind, RhythmRepr, Waveform};
use crate::error::{Error, Result};

/// Pearson correlation; 0 when either input is constant.
pub fn pearson(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            what: "correlation inputs",
            left: a.len(),
            right: b.len(),
        });
    }
    let n = a.len() as f64;
    if a.is_empty() {
        return Ok(0.0);
    }
    let ma = a.iter().map(|&x| x as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&x| x as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Ok(0.0);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation between the audio's per-second onset function and an ODF condition.
pub fn rhythm_alignment_score(audio: &Waveform, cond: &RhythmRepr) -> Result<f64> {
    if cond.kind != RhythmKind::OdfLR {
        return Err(Error::invalid(format!(
            "alignment needs an odf condition, got {}",
            cond.kind
        )));
    }
    let m = cond.seconds();
    if audio.seconds() != m {
        return Err(Error::LengthMismatch {
            what: "alignment seconds (audio vs condition)",
            left: audio.seconds(),
            right: m,
        });
    }
    pearson(&odf_of(audio)?, cond.matrix.data())
}

/// Rotates `v` right by `shift` positions.
pub fn circular_shift(v: &[f32], shift: usize) -> Vec<f32> {
    let n = v.len();
    if n == 0 {
        return Vec::new();
    }
    (0..n).map(|i| v[(i + n - shift % n) % n]).collect()
}
