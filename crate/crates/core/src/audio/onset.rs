use super::mel::mel_raw;
use super::stft::{stft_magnitude, HOP, N_FFT};
use super::{Waveform, SAMPLE_RATE};
use crate::error::Result;

/// Mel bands used by the spectral-flux onset detector.
pub const ONSET_MELS: usize = 64;

/// Onset strength per STFT frame.
#[derive(Clone, Debug, PartialEq)]
pub struct OnsetCurve {
    pub values: Vec<f32>,
    pub frame_rate: f64,
}

/// Detected onset peaks as `(time_seconds, strength)`, times strictly increasing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PeakList {
    pub peaks: Vec<(f64, f32)>,
}

/// Spectral flux of log-mel magnitudes: summed positive increase from the
/// previous frame. Frame 0 is 0.
pub fn onset_envelope(w: &Waveform) -> Result<OnsetCurve> {
    let spec = stft_magnitude(w.samples(), N_FFT, HOP)?;
    let mel = mel_raw(&spec, ONSET_MELS, N_FFT, w.sample_rate())?;
    let values = std::iter::once(0.0)
        .chain((1..mel.rows()).map(|f| {
            mel.row(f)
                .iter()
                .zip(mel.row(f - 1))
                .map(|(&a, &b)| (a - b).max(0.0))
                .sum()
        }))
        .collect();
    Ok(OnsetCurve {
        values,
        frame_rate: SAMPLE_RATE as f64 / HOP as f64,
    })
}

/// Peak-picking parameters, in frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeakParams {
    pub pre: usize,
    pub post: usize,
    pub delta: f32,
    pub wait: usize,
}

impl PeakParams {
    /// `pre = post = 3`, `delta = 0.07·max(curve)`, `wait` = frames in 0.1 s.
    pub fn default_for(c: &OnsetCurve) -> Self {
        let max = c.values.iter().fold(0.0f32, |m, &v| m.max(v));
        PeakParams {
            pre: 3,
            post: 3,
            delta: 0.07 * max,
            wait: ((0.1 * c.frame_rate).round() as usize).max(1),
        }
    }
}

/// Index `i` is a peak when `c[i]` is positive, equals the max of the window
/// `[i−pre, i+post]`, is at least `delta` above the window mean, is strictly
/// above that mean, and lies `wait` or more frames after the previous peak.
pub fn pick_peaks(c: &OnsetCurve, p: PeakParams) -> PeakList {
    let v = &c.values;
    let n = v.len();
    let mut peaks = Vec::new();
    let mut last: Option<usize> = None;
    for i in 0..n {
        let lo = i.saturating_sub(p.pre);
        let hi = (i + p.post).min(n - 1);
        let win = &v[lo..=hi];
        let max = win.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x));
        let mean = win.iter().sum::<f32>() / win.len() as f32;
        let x = v[i];
        let is_peak = x > 0.0 && x == max && x >= mean + p.delta && x > mean;
        if is_peak && last.is_none_or(|l| i - l >= p.wait) {
            peaks.push((i as f64 / c.frame_rate, x));
            last = Some(i);
        }
    }
    PeakList { peaks }
}

/// Per-second maximum peak strength before normalization. Peak `t` maps to
/// second `clamp(round(t), 0, M−1)`.
pub fn odf_lr_raw(p: &PeakList, m: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m];
    if m == 0 {
        return out;
    }
    for &(t, s) in &p.peaks {
        let idx = (t.round().max(0.0) as usize).min(m - 1);
        out[idx] = out[idx].max(s);
    }
    out
}

/// Min-max normalization to [0, 1]; a constant vector maps to zeros.
pub fn min_max_normalize(v: &[f32]) -> Vec<f32> {
    let lo = v.iter().fold(f32::INFINITY, |m, &x| m.min(x));
    let hi = v.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x));
    if !(hi > lo) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|&x| (x - lo) / (hi - lo)).collect()
}

/// Low-resolution onset detection function: one value per second in [0, 1].
pub fn odf_lr(p: &PeakList, m: usize) -> Vec<f32> {
    min_max_normalize(&odf_lr_raw(p, m))
}
