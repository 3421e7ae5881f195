use super::onset::OnsetCurve;
use super::stft::hann;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const TEMPO_BINS: usize = 64;
pub const BPM_MIN: f64 = 30.0;
pub const BPM_MAX: f64 = 300.0;
pub const TEMPOGRAM_WINDOW_S: f64 = 8.0;

/// Centers of the log-spaced tempo bins in BPM.
pub fn tempo_bins() -> Vec<f64> {
    let ratio = (BPM_MAX / BPM_MIN).ln();
    (0..TEMPO_BINS)
        .map(|i| BPM_MIN * (ratio * i as f64 / (TEMPO_BINS - 1) as f64).exp())
        .collect()
}

/// Local autocorrelation tempogram, `[frames × 64]`.
///
/// Each frame takes a Hann-weighted window of the onset curve centered on
/// it (zero outside the curve), autocorrelates it, and reads the lag of each
/// tempo bin by linear interpolation. Rows are divided by the lag-0 energy
/// and negative values clipped, so entries lie in [0, 1].
pub fn tempogram_raw(c: &OnsetCurve, win_seconds: f64) -> Result<Matrix> {
    let win = (win_seconds * c.frame_rate).round() as usize;
    let n = c.values.len();
    if win < 2 || n < win {
        return Err(Error::invalid(format!(
            "onset curve of {n} frames is shorter than the {win}-frame tempogram window"
        )));
    }
    let lags: Vec<f64> = tempo_bins()
        .iter()
        .map(|bpm| 60.0 * c.frame_rate / bpm)
        .collect();
    let max_lag = lags.iter().fold(0.0f64, |m, &l| m.max(l)).ceil() as usize + 1;
    let window = hann(win);
    let half = win / 2;
    let mut seg = vec![0.0f32; win];
    let mut ac = vec![0.0f32; max_lag + 1];
    let mut out = Matrix::zeros(n, TEMPO_BINS);
    for f in 0..n {
        for (j, s) in seg.iter_mut().enumerate() {
            let idx = f as isize - half as isize + j as isize;
            *s = if idx >= 0 && (idx as usize) < n {
                c.values[idx as usize] * window[j]
            } else {
                0.0
            };
        }
        for (lag, a) in ac.iter_mut().enumerate() {
            *a = if lag < win {
                seg[..win - lag]
                    .iter()
                    .zip(&seg[lag..])
                    .map(|(&x, &y)| x * y)
                    .sum()
            } else {
                0.0
            };
        }
        if ac[0] <= 0.0 {
            continue;
        }
        for (b, &l) in lags.iter().enumerate() {
            let lo = l.floor() as usize;
            let frac = (l - lo as f64) as f32;
            let v = ac[lo] * (1.0 - frac) + ac[lo + 1] * frac;
            out.set(f, b, (v / ac[0]).max(0.0));
        }
    }
    Ok(out)
}
