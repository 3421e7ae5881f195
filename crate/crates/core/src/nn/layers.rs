use rand::Rng;

use super::params::{Bound, ParamId, ParamStore};
use super::rope::RopeTables;
use crate::autodiff::{Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-5;

/// Affine map `x·W + b` over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Uniform init in `±1/√in_dim` for weights and bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let k = 1.0 / (in_dim as f64).sqrt();
        let w = store.add(
            format!("{name}.weight"),
            Tensor::uniform(&[in_dim, out_dim], -k, k, rng),
        );
        let b = bias.then(|| {
            store.add(
                format!("{name}.bias"),
                Tensor::uniform(&[out_dim], -k, k, rng),
            )
        });
        Linear {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    /// All-zero weights and bias.
    pub fn zeros(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Self {
        Self::constant(store, name, in_dim, out_dim, bias, 0.0)
    }

    /// Zero weights with every bias entry equal to `bias_value`.
    pub fn constant(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        bias_value: f32,
    ) -> Self {
        let w = store.add(format!("{name}.weight"), Tensor::zeros(&[in_dim, out_dim]));
        let b =
            bias.then(|| store.add(format!("{name}.bias"), Tensor::full(&[out_dim], bias_value)));
        Linear {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p.get(self.w))?;
        match self.b {
            Some(b) => g.broadcast_add(y, p.get(b)),
            None => Ok(y),
        }
    }
}

/// Layer normalization over the last axis with a learned scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[dim])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = g.layer_norm(x, -1, LN_EPS)?;
        let y = g.mul(y, p.get(self.gamma))?;
        g.broadcast_add(y, p.get(self.beta))
    }
}

/// Two-layer perceptron with a GELU in between.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        Mlp {
            fc1: Linear::new(store, &format!("{name}.fc1"), in_dim, hidden, true, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, out_dim, true, rng),
        }
    }

    /// Random first layer, final layer with zero weights and constant bias.
    pub fn with_constant_output<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        bias_value: f32,
        rng: &mut R,
    ) -> Self {
        Mlp {
            fc1: Linear::new(store, &format!("{name}.fc1"), in_dim, hidden, true, rng),
            fc2: Linear::constant(
                store,
                &format!("{name}.fc2"),
                hidden,
                out_dim,
                true,
                bias_value,
            ),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, p, x)?;
        let h = g.gelu(h)?;
        self.fc2.forward(g, p, h)
    }
}

/// Multi-head scaled dot-product attention without biases.
#[derive(Clone, Debug)]
pub struct Attention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub n_heads: usize,
    pub d_model: usize,
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
            return Err(Error::invalid(format!(
                "d_model {d_model} is not divisible by n_heads {n_heads}"
            )));
        }
        Ok(Attention {
            wq: Linear::new(store, &format!("{name}.q"), d_model, d_model, false, rng),
            wk: Linear::new(store, &format!("{name}.k"), d_model, d_model, false, rng),
            wv: Linear::new(store, &format!("{name}.v"), d_model, d_model, false, rng),
            wo: Linear::new(store, &format!("{name}.o"), d_model, d_model, false, rng),
            n_heads,
            d_model,
        })
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// `xq: [.., Tq, D]` attends to `xkv: [.., Tk, D]`.
    ///
    /// `rope` rotates queries and keys (self-attention only); `mask` is an
    /// additive `[Tq, Tk]` constant.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        xq: Var,
        xkv: Var,
        rope: Option<&RopeTables>,
        mask: Option<Var>,
    ) -> Result<Var> {
        let dh = self.d_head();
        let q = self.wq.forward(g, p, xq)?;
        let k = self.wk.forward(g, p, xkv)?;
        let v = self.wv.forward(g, p, xkv)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let mut qh = g.slice(q, -1, lo, hi)?;
            let mut kh = g.slice(k, -1, lo, hi)?;
            let vh = g.slice(v, -1, lo, hi)?;
            if let Some(r) = rope {
                qh = r.apply(g, qh)?;
                kh = r.apply(g, kh)?;
            }
            let kt = g.transpose(kh)?;
            let s = g.matmul(qh, kt)?;
            let mut s = g.scale(s, scale)?;
            if let Some(m) = mask {
                s = g.add(s, m)?;
            }
            let a = g.softmax(s, -1)?;
            heads.push(g.matmul(a, vh)?);
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat(&heads, -1)?
        };
        self.wo.forward(g, p, cat)
    }
}
