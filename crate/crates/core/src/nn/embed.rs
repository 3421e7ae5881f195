/// Sinusoidal embedding of a scalar: `[sin(x·f_i)…, cos(x·f_i)…]` with
/// `f_i = 10000^(−i/half)`. `dim` must be even.
pub fn sinusoidal(x: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let f = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (x * f).sin();
        out[half + i] = (x * f).cos();
    }
    out
}

/// Rows of [`sinusoidal`] for each position, flattened `[positions.len() × dim]`.
pub fn sinusoidal_table(positions: &[f64], dim: usize) -> Vec<f64> {
    positions.iter().flat_map(|&p| sinusoidal(p, dim)).collect()
}

/// Additive causal mask: 0 on and below the diagonal, −1e9 above.
pub fn causal_mask(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            m[i * n + j] = -1e9;
        }
    }
    m
}
