//! Causal transformer that regresses the per-second rhythm representation
//! from visual features.

use rand::Rng;

use crate::autodiff::{Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{
    causal_mask, sinusoidal_table, Attention, Bound, LayerNorm, Linear, Mlp, ParamId, ParamStore,
};
use crate::visual::VideoFeatures;

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub out_dim: usize,
    pub max_len: usize,
    /// Width of the semantic input rows.
    pub d_sem: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            out_dim: 1,
            max_len: 30,
            d_sem: crate::visual::SEMANTIC_DIM,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "predictor d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.out_dim != 1 && self.out_dim != 16 {
            return Err(Error::Config(format!(
                "predictor out_dim must be 1 or 16, got {}",
                self.out_dim
            )));
        }
        if self.max_len == 0 || self.n_layers == 0 {
            return Err(Error::Config(
                "predictor needs max_len ≥ 1 and n_layers ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    ffn: Mlp,
}

/// Visual inputs for one clip as graph constants.
#[derive(Clone, Copy, Debug)]
pub struct PredictorInputs {
    /// `[M × D_s]`
    pub semantic: Var,
    /// `[M × 1]`
    pub beats: Var,
}

#[derive(Clone, Debug)]
pub struct RhythmPredictor {
    pub cfg: PredictorConfig,
    pub proj: Linear,
    /// Two-row table for the scene flag.
    pub scene_embed: ParamId,
    pub beat_proj: Linear,
    layers: Vec<DecoderLayer>,
    ln_f: LayerNorm,
    pub head: Linear,
}

impl RhythmPredictor {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: PredictorConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let proj = Linear::new(store, &format!("{prefix}.proj"), cfg.d_sem, d, true, rng);
        let scene_embed = store.add(
            format!("{prefix}.scene_embed"),
            Tensor::randn(&[2, d], 0.5, rng),
        );
        let beat_proj = Linear::new(store, &format!("{prefix}.beat_proj"), 1, d, true, rng);
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let name = format!("{prefix}.layers.{l}");
            layers.push(DecoderLayer {
                ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
                attn: Attention::new(store, &format!("{name}.attn"), d, cfg.n_heads, rng)?,
                ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
                ffn: Mlp::new(store, &format!("{name}.ffn"), d, 4 * d, d, rng),
            });
        }
        let ln_f = LayerNorm::new(store, &format!("{prefix}.ln_f"), d);
        let head = Linear::new(store, &format!("{prefix}.head"), d, cfg.out_dim, true, rng);
        Ok(RhythmPredictor {
            cfg,
            proj,
            scene_embed,
            beat_proj,
            layers,
            ln_f,
            head,
        })
    }

    /// Inserts a clip's visual features into `g` as constants.
    pub fn inputs<T: Scalar>(
        g: &mut Graph<T>,
        f: &VideoFeatures,
    ) -> Result<(PredictorInputs, Vec<usize>)> {
        let m = f.seconds();
        for (what, len) in [
            ("semantic rows", f.semantic.rows()),
            ("beats", f.beats.len()),
        ] {
            if len != m {
                return Err(Error::LengthMismatch {
                    what,
                    left: len,
                    right: m,
                });
            }
        }
        let semantic = g.constant(f.semantic.to_tensor()?.cast());
        let beats = g.constant(Tensor::new(vec![m, 1], f.beats.clone())?.cast());
        let scene = f.scene.iter().map(|&e| usize::from(e > 0.5)).collect();
        Ok((PredictorInputs { semantic, beats }, scene))
    }

    /// `X = proj(C_s) + Embed(e) + Linear(v)`, shape `[M × d_model]`.
    pub fn build_input<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        inputs: PredictorInputs,
        scene: &[usize],
    ) -> Result<Var> {
        let m = g.shape(inputs.semantic)[0];
        if scene.len() != m {
            return Err(Error::LengthMismatch {
                what: "scene flags",
                left: scene.len(),
                right: m,
            });
        }
        if g.shape(inputs.beats)[0] != m {
            return Err(Error::LengthMismatch {
                what: "beats",
                left: g.shape(inputs.beats)[0],
                right: m,
            });
        }
        let a = self.proj.forward(g, p, inputs.semantic)?;
        let e = g.embedding(p.get(self.scene_embed), scene)?;
        let v = self.beat_proj.forward(g, p, inputs.beats)?;
        let x = g.add(a, e)?;
        g.add(x, v)
    }

    /// Causal transformer over `x: [M × d_model]`; returns `[M × out_dim]` in [0, 1].
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let m = g.shape(x)[0];
        if m > self.cfg.max_len {
            return Err(Error::SequenceTooLong {
                len: m,
                max: self.cfg.max_len,
            });
        }
        let d = self.cfg.d_model;
        let positions: Vec<f64> = (0..m).map(|i| i as f64).collect();
        let pe = g.constant(Tensor::from_f64(&[m, d], &sinusoidal_table(&positions, d))?);
        let mask = g.constant(Tensor::from_f64(&[m, m], &causal_mask(m))?);
        let mut h = g.add(x, pe)?;
        for layer in &self.layers {
            let a = layer.ln1.forward(g, p, h)?;
            let a = layer.attn.forward(g, p, a, a, None, Some(mask))?;
            h = g.add(h, a)?;
            let f = layer.ln2.forward(g, p, h)?;
            let f = layer.ffn.forward(g, p, f)?;
            h = g.add(h, f)?;
        }
        let h = self.ln_f.forward(g, p, h)?;
        let y = self.head.forward(g, p, h)?;
        g.sigmoid(y)
    }

    /// Builds the input from features and runs the transformer.
    pub fn predict_var<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        f: &VideoFeatures,
    ) -> Result<Var> {
        let (inputs, scene) = Self::inputs(g, f)?;
        let x = self.build_input(g, p, inputs, &scene)?;
        self.forward(g, p, x)
    }

    /// Inference without gradient tracking.
    pub fn predict(&self, store: &ParamStore, f: &VideoFeatures) -> Result<Matrix> {
        let mut g = Graph::<f32>::new();
        let p = store.bind(&mut g, false);
        let y = self.predict_var(&mut g, &p, f)?;
        Matrix::from_tensor(g.value(y))
    }
}

/// Mean squared error between prediction and target.
pub fn predictor_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    g.mse_loss(pred, target)
}
