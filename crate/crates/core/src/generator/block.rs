use rand::Rng;

use super::{FusionKind, FusionStrategy};
use crate::autodiff::{Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Attention, Bound, LayerNorm, Mlp, ParamStore, RopeTables};

/// Per-forward timestep context: the raw `t` and its sinusoidal embedding row.
#[derive(Clone, Copy, Debug)]
pub struct StepContext {
    pub t: f64,
    /// `[1 × d_model]` constant.
    pub temb: Var,
}

/// Timestep-conditioned feature-wise affine modulation.
///
/// The γ network ends in zero weights with bias 1 and the β network in zero
/// weights with bias 0, so a fresh module is the identity.
#[derive(Clone, Debug)]
pub struct Film {
    pub gamma: Mlp,
    pub beta: Mlp,
}

impl Film {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d: usize, rng: &mut R) -> Self {
        Film {
            gamma: Mlp::with_constant_output(store, &format!("{name}.gamma"), d, d, d, 1.0, rng),
            beta: Mlp::with_constant_output(store, &format!("{name}.beta"), d, d, d, 0.0, rng),
        }
    }

    /// `(γ, β)`, each `[1 × d]`.
    pub fn coefficients<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        temb: Var,
    ) -> Result<(Var, Var)> {
        Ok((
            self.gamma.forward(g, p, temb)?,
            self.beta.forward(g, p, temb)?,
        ))
    }

    /// `γ ∘ h + β`, broadcast over rows of `h`.
    pub fn modulate<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        h: Var,
        temb: Var,
    ) -> Result<Var> {
        let (gamma, beta) = self.coefficients(g, p, temb)?;
        film_apply(g, h, gamma, beta)
    }
}

/// `γ ∘ h + β` for `h: [.., D]` and coefficient rows `[1 × D]`.
pub fn film_apply<T: Scalar>(g: &mut Graph<T>, h: Var, gamma: Var, beta: Var) -> Result<Var> {
    let d = *g.shape(h).last().unwrap_or(&0);
    for (what, v) in [("film gamma", gamma), ("film beta", beta)] {
        if g.shape(v) != [1, d] {
            return Err(Error::ShapeMismatch {
                op: what,
                detail: format!("expected [1, {d}], got {:?}", g.shape(v)),
            });
        }
    }
    let y = g.mul(h, gamma)?;
    g.broadcast_add(y, beta)
}

/// Strategy-specific parameters that combine the semantic and rhythmic
/// cross-attention outputs.
#[derive(Clone, Debug)]
pub struct Fusion {
    pub strategy: FusionStrategy,
    /// Weighted only; the final layer starts at zero so α = 0.5.
    pub gate: Option<Mlp>,
    pub film_sem: Option<Film>,
    pub film_rhy: Option<Film>,
}

impl Fusion {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        strategy: FusionStrategy,
        rng: &mut R,
    ) -> Self {
        let gate = (strategy.kind == FusionKind::Weighted)
            .then(|| Mlp::with_constant_output(store, &format!("{name}.gate"), d, d, 1, 0.0, rng));
        let (film_sem, film_rhy) = if strategy.kind.uses_film() {
            (
                Some(Film::new(store, &format!("{name}.film_sem"), d, rng)),
                Some(Film::new(store, &format!("{name}.film_rhy"), d, rng)),
            )
        } else {
            (None, None)
        };
        Fusion {
            strategy,
            gate,
            film_sem,
            film_rhy,
        }
    }

    /// `α = sigmoid(f_gate(t))`, shape `[1 × 1]`.
    pub fn alpha<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, temb: Var) -> Result<Var> {
        let gate = self
            .gate
            .as_ref()
            .ok_or_else(|| Error::invalid("alpha is only defined for weighted fusion"))?;
        let a = gate.forward(g, p, temb)?;
        g.sigmoid(a)
    }

    fn film(&self, semantic: bool) -> Result<&Film> {
        let f = if semantic {
            &self.film_sem
        } else {
            &self.film_rhy
        };
        f.as_ref()
            .ok_or_else(|| Error::invalid("strategy has no FiLM parameters"))
    }

    /// Modulates the condition sequences before cross-attention (pre-attention FiLM only).
    pub fn pre_attention<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        sem: Var,
        rhy: Var,
        ctx: StepContext,
    ) -> Result<(Var, Var)> {
        if self.strategy.kind != FusionKind::PreAttnFiLM {
            return Ok((sem, rhy));
        }
        let s = self.film(true)?.modulate(g, p, sem, ctx.temb)?;
        let r = self.film(false)?.modulate(g, p, rhy, ctx.temb)?;
        Ok((s, r))
    }

    /// Combines branch outputs. Selection strategies accept `None` for the
    /// branch they do not pick.
    pub fn combine<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        h_sem: Option<Var>,
        h_rhy: Option<Var>,
        ctx: StepContext,
    ) -> Result<Var> {
        if !(0.0..=1.0).contains(&ctx.t) {
            return Err(Error::invalid(format!("timestep {} outside [0, 1]", ctx.t)));
        }
        let kind = self.strategy.kind;
        let post_film = matches!(
            kind,
            FusionKind::PostAttnFiLM | FusionKind::PostAttnFiLMwithFS
        );
        let branch = |g: &mut Graph<T>, h: Option<Var>, semantic: bool| -> Result<Var> {
            let h = h.ok_or_else(|| {
                Error::invalid(format!(
                    "{} fusion needs the {} branch",
                    kind.as_str(),
                    if semantic { "semantic" } else { "rhythmic" }
                ))
            })?;
            if post_film {
                self.film(semantic)?.modulate(g, p, h, ctx.temb)
            } else {
                Ok(h)
            }
        };
        if let (Some(a), Some(b)) = (h_sem, h_rhy) {
            if g.shape(a) != g.shape(b) {
                return Err(Error::shape(
                    "fuse",
                    format!("semantic {:?} vs rhythmic {:?}", g.shape(a), g.shape(b)),
                ));
            }
        }
        match kind {
            FusionKind::FeatureSelection | FusionKind::PostAttnFiLMwithFS => {
                let semantic = self.strategy.selects_semantic(ctx.t);
                branch(g, if semantic { h_sem } else { h_rhy }, semantic)
            }
            FusionKind::Weighted => {
                let hs = branch(g, h_sem, true)?;
                let hr = branch(g, h_rhy, false)?;
                let alpha = self.alpha(g, p, ctx.temb)?;
                let one = g.constant(Tensor::ones(&[1, 1]));
                let beta = g.sub(one, alpha)?;
                let a = g.mul(hs, alpha)?;
                let b = g.mul(hr, beta)?;
                g.add(a, b)
            }
            FusionKind::Additive | FusionKind::PreAttnFiLM | FusionKind::PostAttnFiLM => {
                let hs = branch(g, h_sem, true)?;
                let hr = branch(g, h_rhy, false)?;
                let a = g.scale(hs, 0.5)?;
                let b = g.scale(hr, 0.5)?;
                g.add(a, b)
            }
        }
    }
}

/// Encoded conditioning sequences, all `[rows × d_model]`.
#[derive(Clone, Copy, Debug)]
pub struct ConditionSet {
    pub emo: Var,
    pub sem: Var,
    pub rhy: Var,
    /// `[1 × d_model]`, recomputed for every timestep.
    pub global_token: Var,
}

/// Pre-norm transformer block with hierarchical cross-attention: emotion
/// first, then semantic and rhythmic branches in parallel, fused before the
/// feed-forward network.
#[derive(Clone, Debug)]
pub struct HierBlock {
    pub ln_self: LayerNorm,
    pub self_attn: Attention,
    pub ln_emo: LayerNorm,
    pub emo_attn: Attention,
    pub ln_branch: LayerNorm,
    pub sem_attn: Attention,
    pub rhy_attn: Attention,
    pub fusion: Fusion,
    pub ln_ffn: LayerNorm,
    pub ffn: Mlp,
}

impl HierBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        n_heads: usize,
        ffn_mult: usize,
        strategy: FusionStrategy,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(HierBlock {
            ln_self: LayerNorm::new(store, &format!("{name}.ln_self"), d),
            self_attn: Attention::new(store, &format!("{name}.self_attn"), d, n_heads, rng)?,
            ln_emo: LayerNorm::new(store, &format!("{name}.ln_emo"), d),
            emo_attn: Attention::new(store, &format!("{name}.emo_attn"), d, n_heads, rng)?,
            ln_branch: LayerNorm::new(store, &format!("{name}.ln_branch"), d),
            sem_attn: Attention::new(store, &format!("{name}.sem_attn"), d, n_heads, rng)?,
            rhy_attn: Attention::new(store, &format!("{name}.rhy_attn"), d, n_heads, rng)?,
            fusion: Fusion::new(store, &format!("{name}.fusion"), d, strategy, rng),
            ln_ffn: LayerNorm::new(store, &format!("{name}.ln_ffn"), d),
            ffn: Mlp::new(store, &format!("{name}.ffn"), d, ffn_mult * d, d, rng),
        })
    }

    /// `h: [T × D]` to `[T × D]`. Selection strategies evaluate only the
    /// chosen branch.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        h: Var,
        cond: &ConditionSet,
        ctx: StepContext,
        rope: Option<&RopeTables>,
    ) -> Result<Var> {
        let x = self.ln_self.forward(g, p, h)?;
        let a = self.self_attn.forward(g, p, x, x, rope, None)?;
        let h_self = g.add(h, a)?;

        let x = self.ln_emo.forward(g, p, h_self)?;
        let a = self.emo_attn.forward(g, p, x, cond.emo, None, None)?;
        let h_emo = g.add(h_self, a)?;

        let x = self.ln_branch.forward(g, p, h_emo)?;
        let (sem, rhy) = self.fusion.pre_attention(g, p, cond.sem, cond.rhy, ctx)?;
        let strategy = self.fusion.strategy;
        let (need_sem, need_rhy) = if strategy.kind.is_selection() {
            let s = strategy.selects_semantic(ctx.t);
            (s, !s)
        } else {
            (true, true)
        };
        let h_sem = if need_sem {
            Some(self.sem_attn.forward(g, p, x, sem, None, None)?)
        } else {
            None
        };
        let h_rhy = if need_rhy {
            Some(self.rhy_attn.forward(g, p, x, rhy, None, None)?)
        } else {
            None
        };
        let fused = self.fusion.combine(g, p, h_sem, h_rhy, ctx)?;

        let x = self.ln_ffn.forward(g, p, fused)?;
        let f = self.ffn.forward(g, p, x)?;
        g.add(h_emo, f)
    }
}
