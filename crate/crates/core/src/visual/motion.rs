use super::color::{downsample_rgb, rgb_to_hsv};
use super::{FrameSequence, Image};
use crate::audio::{pick_peaks, OnsetCurve, PeakParams};

/// Default scene-cut threshold on the HSV content score.
pub const SCENE_THRESHOLD: f64 = 27.0 / 255.0;
const SCENE_GRID: usize = 16;

fn hsv_thumbnail(img: &Image) -> Vec<[f64; 3]> {
    downsample_rgb(img, SCENE_GRID)
        .into_iter()
        .map(rgb_to_hsv)
        .collect()
}

/// Mean over cells of the average absolute H, S and V differences, with hue
/// distance taken around the color circle.
pub fn hsv_content_score(a: &Image, b: &Image) -> f64 {
    let (ha, hb) = (hsv_thumbnail(a), hsv_thumbnail(b));
    let mut acc = 0.0;
    for (p, q) in ha.iter().zip(&hb) {
        let dh = (p[0] - q[0]).abs();
        let dh = dh.min(1.0 - dh);
        acc += (dh + (p[1] - q[1]).abs() + (p[2] - q[2]).abs()) / 3.0;
    }
    acc / ha.len() as f64
}

/// `e[m] = 1` when frame `m` starts a new scene; `e[0] = 0`.
pub fn detect_scene_transitions(fs: &FrameSequence, threshold: f64) -> Vec<f32> {
    let frames = fs.frames();
    let mut e = vec![0.0f32; frames.len()];
    for m in 1..frames.len() {
        if hsv_content_score(&frames[m - 1], &frames[m]) > threshold {
            e[m] = 1.0;
        }
    }
    e
}

fn mean_abs_diff(a: &Image, b: &Image) -> f64 {
    let total: u64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| x.abs_diff(y) as u64)
        .sum();
    total as f64 / (a.pixels().len() as f64 * 255.0)
}

/// Frame-difference curve, `curve[0] = 0`, divided by its maximum.
pub fn visual_rhythm_curve(fs: &FrameSequence) -> Vec<f32> {
    let frames = fs.frames();
    let mut raw = vec![0.0f64; frames.len()];
    for m in 1..frames.len() {
        raw[m] = mean_abs_diff(&frames[m - 1], &frames[m]);
    }
    let max = raw.iter().fold(0.0f64, |a, &b| a.max(b));
    if max == 0.0 {
        return vec![0.0; frames.len()];
    }
    raw.iter().map(|&v| (v / max) as f32).collect()
}

/// Curve values at its peaks (±1 s window, delta 0.05), zero elsewhere.
pub fn visual_beats(curve: &[f32]) -> Vec<f32> {
    let c = OnsetCurve {
        values: curve.to_vec(),
        frame_rate: 1.0,
    };
    let peaks = pick_peaks(
        &c,
        PeakParams {
            pre: 1,
            post: 1,
            delta: 0.05,
            wait: 1,
        },
    );
    let mut v = vec![0.0f32; curve.len()];
    for (t, s) in peaks.peaks {
        v[t.round() as usize] = s;
    }
    v
}
