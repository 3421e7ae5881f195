use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const N_FFT: usize = 2048;
pub const HOP: usize = 512;

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| (0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()) as f32)
        .collect()
}

/// Magnitude STFT, `[frames × (n_fft/2 + 1)]`, without padding:
/// frame `i` covers samples `[i·hop, i·hop + n_fft)`.
pub fn stft_magnitude(samples: &[f32], n_fft: usize, hop: usize) -> Result<Matrix> {
    if !n_fft.is_power_of_two() {
        return Err(Error::invalid(format!(
            "n_fft must be a power of two, got {n_fft}"
        )));
    }
    if hop == 0 || hop > n_fft {
        return Err(Error::invalid(format!(
            "hop must be in 1..={n_fft}, got {hop}"
        )));
    }
    if samples.len() < n_fft {
        return Err(Error::AudioTooShort {
            samples: samples.len(),
            needed: n_fft,
        });
    }
    let frames = 1 + (samples.len() - n_fft) / hop;
    let bins = n_fft / 2 + 1;
    let window = hann(n_fft);
    let fft = FftPlanner::<f32>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0f32, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0f32, 0.0); fft.get_inplace_scratch_len()];
    let mut out = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        let seg = &samples[f * hop..f * hop + n_fft];
        for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new(s * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        out.extend(buf[..bins].iter().map(|c| c.norm()));
    }
    Matrix::new(frames, bins, out)
}
