use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Resamples a vector to `target` entries: box averaging when shrinking,
/// linear interpolation (half-pixel centers) when growing.
pub fn resize_1d(x: &[f64], target: usize) -> Vec<f64> {
    let n = x.len();
    if n == target {
        return x.to_vec();
    }
    if target < n {
        let scale = n as f64 / target as f64;
        (0..target)
            .map(|j| {
                let (a, b) = (j as f64 * scale, (j + 1) as f64 * scale);
                let mut acc = 0.0;
                let mut k = a.floor() as usize;
                while (k as f64) < b && k < n {
                    let overlap = (b.min(k as f64 + 1.0) - a.max(k as f64)).max(0.0);
                    acc += overlap * x[k];
                    k += 1;
                }
                acc / scale
            })
            .collect()
    } else {
        let scale = n as f64 / target as f64;
        (0..target)
            .map(|j| {
                let src = ((j as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(n - 1);
                let f = src - lo as f64;
                x[lo] * (1.0 - f) + x[hi] * f
            })
            .collect()
    }
}

/// Min-max normalizes the whole matrix to [0, 1] (constant input gives
/// zeros), then resizes rows and columns independently to `(rows, cols)`.
pub fn norm_resize(m: &Matrix, target: (usize, usize)) -> Result<Matrix> {
    let (rows, cols) = target;
    if m.is_empty() {
        return Err(Error::invalid("cannot normalize an empty matrix"));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!(
            "target shape {target:?} has a zero dimension"
        )));
    }
    let (lo, hi) = m.min_max().expect("non-empty");
    let norm: Vec<f64> = if hi > lo {
        let span = (hi - lo) as f64;
        m.data().iter().map(|&v| (v - lo) as f64 / span).collect()
    } else {
        vec![0.0; m.data().len()]
    };
    let (r0, c0) = m.shape();
    let mut by_row: Vec<Vec<f64>> = norm.chunks(c0).map(|r| resize_1d(r, cols)).collect();
    let mut out = Matrix::zeros(rows, cols);
    let mut col = vec![0.0; r0];
    for c in 0..cols {
        for (r, row) in by_row.iter_mut().enumerate() {
            col[r] = row[c];
        }
        for (r, v) in resize_1d(&col, rows).into_iter().enumerate() {
            out.set(r, c, v.clamp(0.0, 1.0) as f32);
        }
    }
    Ok(out)
}
