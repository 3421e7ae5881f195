//! Diffusion transformer over latent frames with hierarchical
//! cross-attention conditioning and selectable fusion of the semantic and
//! rhythmic branches.

mod block;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

pub use block::{film_apply, ConditionSet, Film, Fusion, HierBlock, StepContext};

use crate::autodiff::{Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{
    sinusoidal, sinusoidal_table, Bound, LayerNorm, Linear, Mlp, ParamId, ParamStore, RopeTables,
};

/// Multiplier applied to `t ∈ [0, 1]` before its sinusoidal embedding.
pub const TIMESTEP_SCALE: f64 = 1000.0;
/// Multiplier applied to times in seconds before their sinusoidal embedding.
pub const TIME_EMBED_SCALE: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionKind {
    Weighted,
    Additive,
    FeatureSelection,
    PreAttnFiLM,
    PostAttnFiLM,
    PostAttnFiLMwithFS,
}

impl FusionKind {
    pub const ALL: [FusionKind; 6] = [
        FusionKind::Weighted,
        FusionKind::Additive,
        FusionKind::FeatureSelection,
        FusionKind::PreAttnFiLM,
        FusionKind::PostAttnFiLM,
        FusionKind::PostAttnFiLMwithFS,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionKind::Weighted => "weighted",
            FusionKind::Additive => "additive",
            FusionKind::FeatureSelection => "feature_selection",
            FusionKind::PreAttnFiLM => "pre_attn_film",
            FusionKind::PostAttnFiLM => "post_attn_film",
            FusionKind::PostAttnFiLMwithFS => "post_attn_film_fs",
        }
    }

    pub fn uses_film(self) -> bool {
        matches!(
            self,
            FusionKind::PreAttnFiLM | FusionKind::PostAttnFiLM | FusionKind::PostAttnFiLMwithFS
        )
    }

    /// Strategies that route through a single branch chosen by `t`.
    pub fn is_selection(self) -> bool {
        matches!(
            self,
            FusionKind::FeatureSelection | FusionKind::PostAttnFiLMwithFS
        )
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = FusionKind::ALL.iter().map(|k| k.as_str()).collect();
                Error::Config(format!(
                    "unknown fusion strategy `{s}` (expected one of {})",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionStrategy {
    pub kind: FusionKind,
    /// Selection threshold: semantic when `t > t0`, rhythmic otherwise.
    pub t0: f64,
}

impl FusionStrategy {
    pub const DEFAULT_T0: f64 = 0.2;

    pub fn new(kind: FusionKind, t0: f64) -> Result<Self> {
        if !(t0 > 0.0 && t0 < 1.0) {
            return Err(Error::Config(format!(
                "fusion threshold t0 must lie in (0, 1), got {t0}"
            )));
        }
        Ok(FusionStrategy { kind, t0 })
    }

    pub fn of(kind: FusionKind) -> Self {
        FusionStrategy {
            kind,
            t0: Self::DEFAULT_T0,
        }
    }

    pub fn selects_semantic(&self, t: f64) -> bool {
        t > self.t0
    }
}

impl Default for FusionStrategy {
    fn default() -> Self {
        Self::of(FusionKind::PostAttnFiLMwithFS)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub ffn_mult: usize,
    pub strategy: FusionStrategy,
    pub cond_drop_prob: f64,
    pub d_lat: usize,
    /// Longest latent sequence, excluding the global token.
    pub max_len: usize,
    pub d_emo: usize,
    pub d_sem: usize,
    pub d_rhy: usize,
    /// Duration of one latent frame, used to place frames on the time axis.
    pub frame_seconds: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            d_model: 128,
            n_blocks: 4,
            n_heads: 4,
            ffn_mult: 4,
            strategy: FusionStrategy::default(),
            cond_drop_prob: 0.1,
            d_lat: crate::diffusion::D_LAT,
            max_len: 64,
            d_emo: crate::visual::EMO_DIM,
            d_sem: crate::visual::SEMANTIC_DIM,
            d_rhy: 1,
            frame_seconds: crate::diffusion::FRAME_SECONDS,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return err(format!(
                "generator d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if !(self.d_model / self.n_heads).is_multiple_of(2) || !self.d_model.is_multiple_of(2) {
            return err(format!(
                "generator head dim {} must be even",
                self.d_model / self.n_heads
            ));
        }
        if !(0.0..=0.5).contains(&self.cond_drop_prob) {
            return err(format!(
                "cond_drop_prob must lie in [0, 0.5], got {}",
                self.cond_drop_prob
            ));
        }
        if !(self.strategy.t0 > 0.0 && self.strategy.t0 < 1.0) {
            return err(format!(
                "fusion threshold t0 must lie in (0, 1), got {}",
                self.strategy.t0
            ));
        }
        for (name, v) in [
            ("n_blocks", self.n_blocks),
            ("ffn_mult", self.ffn_mult),
            ("d_lat", self.d_lat),
            ("max_len", self.max_len),
            ("d_emo", self.d_emo),
            ("d_sem", self.d_sem),
            ("d_rhy", self.d_rhy),
        ] {
            if v == 0 {
                return err(format!("generator {name} must be positive"));
            }
        }
        if !(self.frame_seconds > 0.0) {
            return err(format!(
                "frame_seconds must be positive, got {}",
                self.frame_seconds
            ));
        }
        Ok(())
    }
}

/// Raw per-clip conditioning, one row per second except the metadata.
#[derive(Clone, Copy, Debug)]
pub struct ConditionInputs {
    /// `[M × d_emo]`
    pub emo: Var,
    /// `[M × d_sem]`
    pub sem: Var,
    /// `[M × d_rhy]`; may be the predictor's output so gradients reach it.
    pub rhy: Var,
    pub g_start: f64,
    pub g_dur: f64,
}

/// Sinusoidal `[1 × dim]` embedding of a diffusion timestep.
pub fn timestep_embedding<T: Scalar>(g: &mut Graph<T>, t: f64, dim: usize) -> Result<Var> {
    Ok(g.constant(Tensor::from_f64(
        &[1, dim],
        &sinusoidal(t * TIMESTEP_SCALE, dim),
    )?))
}

/// Sinusoidal rows for times in seconds, `[times.len() × dim]`.
pub fn time_embedding<T: Scalar>(g: &mut Graph<T>, times: &[f64], dim: usize) -> Result<Var> {
    let pos: Vec<f64> = times.iter().map(|s| s * TIME_EMBED_SCALE).collect();
    Ok(g.constant(Tensor::from_f64(
        &[times.len(), dim],
        &sinusoidal_table(&pos, dim),
    )?))
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub cfg: GeneratorConfig,
    pub in_proj: Linear,
    pub t_embed: Linear,
    pub global_mlp: Mlp,
    pub emo_proj: Linear,
    pub sem_proj: Linear,
    pub rhy_proj: Linear,
    pub null_emo: ParamId,
    pub null_sem: ParamId,
    pub null_rhy: ParamId,
    pub blocks: Vec<HierBlock>,
    pub ln_out: LayerNorm,
    /// Zero at init so the untrained model predicts v = 0.
    pub out_proj: Linear,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: GeneratorConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let name = |s: &str| format!("{prefix}.{s}");
        let in_proj = Linear::new(store, &name("in_proj"), cfg.d_lat, d, true, rng);
        let t_embed = Linear::new(store, &name("t_embed"), d, d, true, rng);
        let global_mlp = Mlp::new(store, &name("global_mlp"), d, d, d, rng);
        let emo_proj = Linear::new(store, &name("emo_proj"), cfg.d_emo, d, true, rng);
        let sem_proj = Linear::new(store, &name("sem_proj"), cfg.d_sem, d, true, rng);
        let rhy_proj = Linear::new(store, &name("rhy_proj"), cfg.d_rhy, d, true, rng);
        let null_emo = store.add(name("null_emo"), Tensor::randn(&[1, d], 0.5, rng));
        let null_sem = store.add(name("null_sem"), Tensor::randn(&[1, d], 0.5, rng));
        let null_rhy = store.add(name("null_rhy"), Tensor::randn(&[1, d], 0.5, rng));
        let mut blocks = Vec::with_capacity(cfg.n_blocks);
        for b in 0..cfg.n_blocks {
            blocks.push(HierBlock::new(
                store,
                &name(&format!("blocks.{b}")),
                d,
                cfg.n_heads,
                cfg.ffn_mult,
                cfg.strategy,
                rng,
            )?);
        }
        let ln_out = LayerNorm::new(store, &name("ln_out"), d);
        let out_proj = Linear::zeros(store, &name("out_proj"), d, cfg.d_lat, true);
        Ok(Generator {
            cfg,
            in_proj,
            t_embed,
            global_mlp,
            emo_proj,
            sem_proj,
            rhy_proj,
            null_emo,
            null_sem,
            null_rhy,
            blocks,
            ln_out,
            out_proj,
        })
    }

    /// `MLP(concat(embed(g_start), embed(g_dur)) + Linear(embed(t)))`, `[1 × d_model]`.
    pub fn global_embedding<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        g_start: f64,
        g_dur: f64,
        t: f64,
    ) -> Result<Var> {
        if !(g_start >= 0.0) || !g_start.is_finite() {
            return Err(Error::invalid(format!(
                "global start must be non-negative, got {g_start}"
            )));
        }
        if !(g_dur > 0.0) || !g_dur.is_finite() {
            return Err(Error::invalid(format!(
                "global duration must be positive, got {g_dur}"
            )));
        }
        let d = self.cfg.d_model;
        let mut meta = sinusoidal(g_start, d / 2);
        meta.extend(sinusoidal(g_dur, d - d / 2));
        let meta = g.constant(Tensor::from_f64(&[1, d], &meta)?);
        let temb = timestep_embedding(g, t, d)?;
        let te = self.t_embed.forward(g, p, temb)?;
        let x = g.add(meta, te)?;
        self.global_mlp.forward(g, p, x)
    }

    fn encode_rows<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        proj: &Linear,
        x: Var,
        what: &'static str,
    ) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != proj.in_dim {
            return Err(Error::shape(
                what,
                format!("expected [rows, {}], got {shape:?}", proj.in_dim),
            ));
        }
        let y = proj.forward(g, p, x)?;
        let times: Vec<f64> = (0..shape[0]).map(|m| m as f64 + 0.5).collect();
        let pe = time_embedding(g, &times, self.cfg.d_model)?;
        g.add(y, pe)
    }

    /// Projects raw conditions into model width. With `drop` the sequences
    /// are replaced by the learned null tokens (unconditional branch).
    pub fn encode_conditions<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        inputs: &ConditionInputs,
        t: f64,
        drop: bool,
    ) -> Result<ConditionSet> {
        let global_token = self.global_embedding(g, p, inputs.g_start, inputs.g_dur, t)?;
        if drop {
            return Ok(ConditionSet {
                emo: p.get(self.null_emo),
                sem: p.get(self.null_sem),
                rhy: p.get(self.null_rhy),
                global_token,
            });
        }
        let m = g.shape(inputs.sem)[0];
        for (what, v) in [("emotional rows", inputs.emo), ("rhythm rows", inputs.rhy)] {
            if g.shape(v)[0] != m {
                return Err(Error::LengthMismatch {
                    what,
                    left: g.shape(v)[0],
                    right: m,
                });
            }
        }
        Ok(ConditionSet {
            emo: self.encode_rows(g, p, &self.emo_proj, inputs.emo, "emotional condition")?,
            sem: self.encode_rows(g, p, &self.sem_proj, inputs.sem, "semantic condition")?,
            rhy: self.encode_rows(g, p, &self.rhy_proj, inputs.rhy, "rhythm condition")?,
            global_token,
        })
    }

    /// Velocity prediction for `z_t: [T × d_lat]`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        z_t: Var,
        cond: &ConditionSet,
        t: f64,
    ) -> Result<Var> {
        let shape = g.shape(z_t).to_vec();
        if shape.len() != 2 || shape[1] != self.cfg.d_lat {
            return Err(Error::shape(
                "generator",
                format!("latent must be [T, {}], got {shape:?}", self.cfg.d_lat),
            ));
        }
        let n = shape[0];
        if n > self.cfg.max_len {
            return Err(Error::SequenceTooLong {
                len: n,
                max: self.cfg.max_len,
            });
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!("timestep {t} outside [0, 1]")));
        }
        let d = self.cfg.d_model;
        let x = self.in_proj.forward(g, p, z_t)?;
        let times: Vec<f64> = (0..n)
            .map(|i| (i as f64 + 0.5) * self.cfg.frame_seconds)
            .collect();
        let pe = time_embedding(g, &times, d)?;
        let x = g.add(x, pe)?;
        let mut h = g.concat(&[cond.global_token, x], 0)?;
        let rope = RopeTables::new(g, n + 1, d / self.cfg.n_heads)?;
        let ctx = StepContext {
            t,
            temb: timestep_embedding(g, t, d)?,
        };
        for block in &self.blocks {
            h = block.forward(g, p, h, cond, ctx, Some(&rope))?;
        }
        let h = g.slice(h, 0, 1, n + 1)?;
        let h = self.ln_out.forward(g, p, h)?;
        self.out_proj.forward(g, p, h)
    }

    /// Encodes conditions and runs the network in one call.
    pub fn predict<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        z_t: Var,
        inputs: &ConditionInputs,
        t: f64,
        drop: bool,
    ) -> Result<Var> {
        let cond = self.encode_conditions(g, p, inputs, t, drop)?;
        self.forward(g, p, z_t, &cond, t)
    }
}

#[cfg(test)]
mod tests;
