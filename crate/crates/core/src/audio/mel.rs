use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-scale filterbank from 0 Hz to Nyquist.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    /// `n_mels + 2` edge frequencies in Hz; filter `i` spans `edges[i]..edges[i+2]`.
    pub edges: Vec<f64>,
    /// `[n_mels × bins]` weights, peak 1 at each center.
    pub weights: Matrix,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32) -> Result<Self> {
        let bins = n_fft / 2 + 1;
        if n_mels < 16 || n_mels > bins {
            return Err(Error::invalid(format!(
                "n_mels must be in 16..={bins}, got {n_mels}"
            )));
        }
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let mut w = Matrix::zeros(n_mels, bins);
        for m in 0..n_mels {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..bins {
                let f = k as f64 * sample_rate as f64 / n_fft as f64;
                let v = if f > lo && f <= c {
                    (f - lo) / (c - lo)
                } else if f > c && f < hi {
                    (hi - f) / (hi - c)
                } else {
                    0.0
                };
                w.set(m, k, v as f32);
            }
        }
        Ok(MelFilterbank { edges, weights: w })
    }

    pub fn n_mels(&self) -> usize {
        self.weights.rows()
    }

    pub fn center(&self, m: usize) -> f64 {
        self.edges[m + 1]
    }

    /// Filter passband `(low, high)` in Hz.
    pub fn band(&self, m: usize) -> (f64, f64) {
        (self.edges[m], self.edges[m + 2])
    }
}

/// `log(1 + mel power)` per frame, `[frames × n_mels]`.
pub fn mel_raw(spec: &Matrix, n_mels: usize, n_fft: usize, sample_rate: u32) -> Result<Matrix> {
    let fb = MelFilterbank::new(n_mels, n_fft, sample_rate)?;
    if spec.cols() != fb.weights.cols() {
        return Err(Error::shape(
            "mel_raw",
            format!(
                "spectrogram has {} bins, filterbank expects {}",
                spec.cols(),
                fb.weights.cols()
            ),
        ));
    }
    let mut out = Matrix::zeros(spec.rows(), n_mels);
    for (r, row) in spec.row_iter().enumerate() {
        for m in 0..n_mels {
            let e: f32 = fb
                .weights
                .row(m)
                .iter()
                .zip(row)
                .map(|(&w, &x)| w * x * x)
                .sum();
            out.set(r, m, e.ln_1p());
        }
    }
    Ok(out)
}
