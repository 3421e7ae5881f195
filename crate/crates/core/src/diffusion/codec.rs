//! Invertible stand-in for a learned audio autoencoder.
//!
//! Audio is cut into chunks of [`HOP_LAT`] samples; each latent frame holds
//! the log-RMS of [`D_LAT`] consecutive chunks, so one frame spans
//! [`PATCH`] samples (about half a second). Dividing the signal by the
//! decoded envelope leaves a unit-level excitation. Keeping that residual
//! makes decoding exact; generated latents are decoded over seeded noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::audio::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const D_LAT: usize = 32;
pub const HOP_LAT: usize = 690;
pub const PATCH: usize = D_LAT * HOP_LAT;
/// Seconds covered by one latent frame.
pub const FRAME_SECONDS: f64 = PATCH as f64 / SAMPLE_RATE as f64;
/// Floor added to each chunk RMS before the logarithm.
pub const RMS_FLOOR: f64 = 1e-4;

/// Per-clip standardization statistics of the raw log-RMS values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatentStats {
    pub mean: f32,
    pub std: f32,
}

impl LatentStats {
    /// Divisor used for standardization; a zero spread passes through unscaled.
    pub fn scale(&self) -> f32 {
        if self.std > 0.0 {
            self.std
        } else {
            1.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentClip {
    /// Standardized latents, `[T × D_LAT]`.
    pub z: Matrix,
    pub stats: LatentStats,
    /// Length of the source before padding.
    pub n_samples: usize,
    /// Unit-level residual per padded sample; present for encoded audio.
    pub excitation: Option<Vec<f32>>,
}

impl LatentClip {
    pub fn frames(&self) -> usize {
        self.z.rows()
    }

    pub fn seconds(&self) -> f64 {
        self.n_samples as f64 / SAMPLE_RATE as f64
    }

    pub fn frames_per_second(&self) -> f64 {
        self.frames() as f64 / self.seconds()
    }
}

/// Number of latent frames for `n_samples` of audio.
pub fn latent_frames(n_samples: usize) -> usize {
    n_samples.div_ceil(PATCH)
}

fn envelope(z: f32, stats: LatentStats) -> f64 {
    (z as f64 * stats.scale() as f64 + stats.mean as f64).exp()
}

pub fn latent_encode(w: &Waveform) -> Result<LatentClip> {
    encode_samples(w.samples())
}

/// Encodes raw samples; see the module docs for the layout.
pub fn encode_samples(samples: &[f32]) -> Result<LatentClip> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot encode empty audio"));
    }
    let t = latent_frames(samples.len());
    let mut padded = samples.to_vec();
    padded.resize(t * PATCH, 0.0);
    let raw: Vec<f64> = padded
        .chunks(HOP_LAT)
        .map(|c| {
            let ms = c.iter().map(|&x| (x as f64).powi(2)).sum::<f64>() / HOP_LAT as f64;
            (ms.sqrt() + RMS_FLOOR).ln()
        })
        .collect();
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let std = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let stats = LatentStats {
        mean: mean as f32,
        std: if std > 1e-12 { std as f32 } else { 0.0 },
    };
    let scale = stats.scale() as f64;
    let z: Vec<f32> = if stats.std > 0.0 {
        raw.iter()
            .map(|v| ((v - stats.mean as f64) / scale) as f32)
            .collect()
    } else {
        vec![0.0; raw.len()]
    };
    // Residual is taken against the quantized latents so decoding is exact.
    let mut excitation = Vec::with_capacity(padded.len());
    for (chunk, &zc) in padded.chunks(HOP_LAT).zip(&z) {
        let env = envelope(zc, stats);
        excitation.extend(chunk.iter().map(|&x| (x as f64 / env) as f32));
    }
    Ok(LatentClip {
        z: Matrix::new(t, D_LAT, z)?,
        stats,
        n_samples: samples.len(),
        excitation: Some(excitation),
    })
}

/// Exact inverse of [`latent_encode`]; requires the stored excitation.
pub fn latent_decode(clip: &LatentClip) -> Result<Waveform> {
    let exc = clip.excitation.as_ref().ok_or_else(|| {
        Error::invalid("latent clip carries no excitation; use decode_with_noise")
    })?;
    Waveform::new(
        apply_envelope(&clip.z, clip.stats, exc, clip.n_samples)?,
        SAMPLE_RATE,
    )
}

/// Decodes latents over seeded Gaussian noise with unit RMS per chunk.
pub fn decode_with_noise(
    z: &Matrix,
    stats: LatentStats,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exc: Vec<f32> = (0..z.rows() * PATCH)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v as f32
        })
        .collect();
    apply_envelope(z, stats, &exc, n_samples)
}

fn apply_envelope(
    z: &Matrix,
    stats: LatentStats,
    exc: &[f32],
    n_samples: usize,
) -> Result<Vec<f32>> {
    if z.cols() != D_LAT {
        return Err(Error::shape(
            "latent decode",
            format!("expected {D_LAT} columns, got {}", z.cols()),
        ));
    }
    let total = z.rows() * PATCH;
    if exc.len() != total {
        return Err(Error::LengthMismatch {
            what: "excitation samples",
            left: exc.len(),
            right: total,
        });
    }
    if n_samples > total {
        return Err(Error::invalid(format!(
            "{n_samples} samples exceed the {total} covered by the latents"
        )));
    }
    let mut out = Vec::with_capacity(total);
    for (chunk, &zc) in exc.chunks(HOP_LAT).zip(z.data()) {
        let env = envelope(zc, stats);
        out.extend(chunk.iter().map(|&e| (e as f64 * env) as f32));
    }
    out.truncate(n_samples);
    Ok(out)
}
