use crate::autodiff::{Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};

pub const ROPE_BASE: f64 = 10000.0;

fn angle(pos: usize, pair: usize, d_head: usize) -> f64 {
    pos as f64 * ROPE_BASE.powf(-2.0 * pair as f64 / d_head as f64)
}

/// Rotates consecutive pairs `(x[2i], x[2i+1])` of each row by `pos·θ_i`.
///
/// `x` is `[positions.len() × d_head]`, row-major.
pub fn rope_apply(x: &[f32], d_head: usize, positions: &[usize]) -> Result<Vec<f32>> {
    if d_head == 0 || !d_head.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "rotary embedding needs an even head dim, got {d_head}"
        )));
    }
    if x.len() != positions.len() * d_head {
        return Err(Error::LengthMismatch {
            what: "rope rows",
            left: x.len() / d_head.max(1),
            right: positions.len(),
        });
    }
    let mut out = x.to_vec();
    for (row, &p) in out.chunks_mut(d_head).zip(positions) {
        if p == 0 {
            continue;
        }
        for i in 0..d_head / 2 {
            let (s, c) = angle(p, i, d_head).sin_cos();
            let (a, b) = (row[2 * i] as f64, row[2 * i + 1] as f64);
            row[2 * i] = (a * c - b * s) as f32;
            row[2 * i + 1] = (a * s + b * c) as f32;
        }
    }
    Ok(out)
}

/// Constant tables used to apply the same rotation inside a graph:
/// `rope(x) = x∘cos + (x·R)∘sin`.
#[derive(Clone, Copy, Debug)]
pub struct RopeTables {
    pub cos: Var,
    pub sin: Var,
    pub rot: Var,
}

impl RopeTables {
    pub fn new<T: Scalar>(g: &mut Graph<T>, n_pos: usize, d_head: usize) -> Result<Self> {
        if d_head == 0 || !d_head.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "rotary embedding needs an even head dim, got {d_head}"
            )));
        }
        let mut cos = vec![0.0; n_pos * d_head];
        let mut sin = vec![0.0; n_pos * d_head];
        for p in 0..n_pos {
            for i in 0..d_head / 2 {
                let (s, c) = angle(p, i, d_head).sin_cos();
                cos[p * d_head + 2 * i] = c;
                cos[p * d_head + 2 * i + 1] = c;
                sin[p * d_head + 2 * i] = s;
                sin[p * d_head + 2 * i + 1] = s;
            }
        }
        // (x·R)[2i] = −x[2i+1], (x·R)[2i+1] = x[2i]
        let mut rot = vec![0.0; d_head * d_head];
        for i in 0..d_head / 2 {
            rot[(2 * i + 1) * d_head + 2 * i] = -1.0;
            rot[(2 * i) * d_head + 2 * i + 1] = 1.0;
        }
        Ok(RopeTables {
            cos: g.constant(Tensor::from_f64(&[n_pos, d_head], &cos)?),
            sin: g.constant(Tensor::from_f64(&[n_pos, d_head], &sin)?),
            rot: g.constant(Tensor::from_f64(&[d_head, d_head], &rot)?),
        })
    }

    /// Rotates `x: [.., n_pos, d_head]`.
    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let a = g.mul(x, self.cos)?;
        let xr = g.matmul(x, self.rot)?;
        let b = g.mul(xr, self.sin)?;
        g.add(a, b)
    }
}
