use super::Image;
use crate::error::{Error, Result};

/// Per-channel marginal histograms, each summing to 1, concatenated R, G, B.
pub fn color_histogram(img: &Image, bins: usize) -> Result<Vec<f32>> {
    if bins < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 bins per channel, got {bins}"
        )));
    }
    let n = img.width() * img.height();
    if n == 0 {
        return Err(Error::invalid("empty image"));
    }
    let mut counts = vec![0usize; 3 * bins];
    for px in img.pixels().chunks_exact(3) {
        for (c, &v) in px.iter().enumerate() {
            counts[c * bins + v as usize * bins / 256] += 1;
        }
    }
    Ok(counts.into_iter().map(|k| k as f32 / n as f32).collect())
}

/// Averages `img` over a `side × side` grid of cells; returns RGB in [0, 1].
pub fn downsample_rgb(img: &Image, side: usize) -> Vec<[f64; 3]> {
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::with_capacity(side * side);
    for gy in 0..side {
        let (y0, y1) = (gy * h / side, ((gy + 1) * h / side).max(gy * h / side + 1));
        for gx in 0..side {
            let (x0, x1) = (gx * w / side, ((gx + 1) * w / side).max(gx * w / side + 1));
            let mut acc = [0.0f64; 3];
            for y in y0..y1.min(h) {
                for x in x0..x1.min(w) {
                    let p = img.pixel(x, y);
                    for c in 0..3 {
                        acc[c] += p[c] as f64;
                    }
                }
            }
            let k = ((y1.min(h) - y0) * (x1.min(w) - x0)) as f64 * 255.0;
            out.push([acc[0] / k, acc[1] / k, acc[2] / k]);
        }
    }
    out
}

/// RGB in [0, 1] to HSV with hue also scaled to [0, 1).
pub fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    [h, s, max]
}
