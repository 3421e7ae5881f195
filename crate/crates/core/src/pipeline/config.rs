//! Flat `key = value` configuration with typed fields.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::audio::RhythmKind;
use crate::diffusion::{ScheduleParams, TrainConfig};
use crate::error::{Error, Result};
use crate::generator::{FusionKind, FusionStrategy, GeneratorConfig};
use crate::nn::InverseLr;
use crate::predictor::PredictorConfig;

/// Run configuration. Unset keys keep their defaults; unknown keys are errors.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub rhythm: RhythmKind,
    pub strategy: FusionKind,
    pub t0: f64,
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub ffn_mult: usize,
    pub cond_drop_prob: f64,
    pub max_latent_len: usize,
    pub pred_d_model: usize,
    pub pred_layers: usize,
    pub pred_heads: usize,
    pub pred_max_len: usize,
    pub pred_weight: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub inv_gamma: f64,
    pub lr_power: f64,
    pub warmup: f64,
    pub e1: u32,
    pub e2: u32,
    pub epochs: u32,
    pub save_every: u32,
    pub sample_steps: usize,
    pub guidance_scale: f64,
    pub semantic_seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        let p = PredictorConfig::default();
        let t = TrainConfig::default();
        Config {
            seed: 0,
            rhythm: RhythmKind::OdfLR,
            strategy: g.strategy.kind,
            t0: g.strategy.t0,
            d_model: g.d_model,
            n_blocks: g.n_blocks,
            n_heads: g.n_heads,
            ffn_mult: g.ffn_mult,
            cond_drop_prob: g.cond_drop_prob,
            max_latent_len: g.max_len,
            pred_d_model: p.d_model,
            pred_layers: p.n_layers,
            pred_heads: p.n_heads,
            pred_max_len: p.max_len,
            pred_weight: t.pred_weight,
            lr: t.lr,
            beta1: t.betas.0,
            beta2: t.betas.1,
            weight_decay: t.weight_decay,
            inv_gamma: t.lr_schedule.inv_gamma,
            lr_power: t.lr_schedule.power,
            warmup: t.lr_schedule.warmup,
            e1: t.curriculum.e1,
            e2: t.curriculum.e2,
            epochs: 40,
            save_every: 10,
            sample_steps: 50,
            guidance_scale: 3.0,
            semantic_seed: 0,
        }
    }
}

/// Generates the key table once so parsing and printing cannot drift apart.
macro_rules! config_fields {
    ($($field:ident),* $(,)?) => {
        impl Config {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field)),*];

            fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
                match key {
                    $(stringify!($field) => self.$field = parse_value(key, value, line)?,)*
                    _ => unreachable!("keys are checked before assignment"),
                }
                Ok(())
            }

            fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($field), self.$field.to_string())),*]
            }
        }
    };
}

config_fields!(
    seed,
    rhythm,
    strategy,
    t0,
    d_model,
    n_blocks,
    n_heads,
    ffn_mult,
    cond_drop_prob,
    max_latent_len,
    pred_d_model,
    pred_layers,
    pred_heads,
    pred_max_len,
    pred_weight,
    lr,
    beta1,
    beta2,
    weight_decay,
    inv_gamma,
    lr_power,
    warmup,
    e1,
    e2,
    epochs,
    save_every,
    sample_steps,
    guidance_scale,
    semantic_seed,
);

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("line {line}: bad value `{value}` for `{key}`: {e}")))
}

impl Config {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, (String, usize)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    i + 1
                ))
            })?;
            let k = k.trim().to_string();
            if entries.contains_key(&k) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key `{k}`",
                    i + 1
                )));
            }
            entries.insert(k, (v.trim().to_string(), i + 1));
        }
        let unknown: Vec<&str> = entries
            .keys()
            .map(String::as_str)
            .filter(|k| !Self::KEYS.contains(k))
            .collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!(
                "unknown keys: {}",
                unknown.join(", ")
            )));
        }
        let mut cfg = Config::default();
        for (k, (v, line)) in &entries {
            cfg.set(k, v, *line)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Canonical text: every key, sorted, one per line.
    pub fn to_text(&self) -> String {
        let mut e = self.entries();
        e.sort();
        e.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.predictor_config().validate()?;
        self.generator_config()?.validate()?;
        ScheduleParams::new(self.e1, self.e2)?;
        if self.sample_steps == 0 {
            return Err(Error::Config("sample_steps must be at least 1".into()));
        }
        if self.save_every == 0 {
            return Err(Error::Config("save_every must be at least 1".into()));
        }
        if !(self.lr >= 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
        {
            return Err(Error::Config(
                "lr must be ≥ 0 and betas must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn predictor_config(&self) -> PredictorConfig {
        PredictorConfig {
            d_model: self.pred_d_model,
            n_layers: self.pred_layers,
            n_heads: self.pred_heads,
            out_dim: self.rhythm.dim(),
            max_len: self.pred_max_len,
            d_sem: crate::visual::SEMANTIC_DIM,
        }
    }

    pub fn generator_config(&self) -> Result<GeneratorConfig> {
        Ok(GeneratorConfig {
            d_model: self.d_model,
            n_blocks: self.n_blocks,
            n_heads: self.n_heads,
            ffn_mult: self.ffn_mult,
            strategy: FusionStrategy::new(self.strategy, self.t0)?,
            cond_drop_prob: self.cond_drop_prob,
            max_len: self.max_latent_len,
            d_rhy: self.rhythm.dim(),
            ..GeneratorConfig::default()
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            lr: self.lr,
            betas: (self.beta1, self.beta2),
            weight_decay: self.weight_decay,
            lr_schedule: InverseLr {
                inv_gamma: self.inv_gamma,
                power: self.lr_power,
                warmup: self.warmup,
            },
            curriculum: ScheduleParams::new(self.e1, self.e2)?,
            pred_weight: self.pred_weight,
            seed: self.seed,
        })
    }
}
