use std::collections::BTreeMap;
use std::path::Path;

use super::config::Config;
use super::format::{self, Container, Section};
use crate::autodiff::Tensor;
use crate::diffusion::{LatentStats, RngState, Trainer};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"V2MC";

/// Full training state: configuration, parameters, optimizer moments,
/// curriculum position and random stream.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: Config,
    /// Epochs completed.
    pub epoch: u32,
    pub steps: u64,
    pub rng: RngState,
    /// Latent statistics used to decode generated audio.
    pub latent_stats: LatentStats,
    /// `(module path, tensor)` in parameter-store order.
    pub params: Vec<(String, Tensor<f32>)>,
    pub adam_m: Vec<Vec<f32>>,
    pub adam_v: Vec<Vec<f32>>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
    }
    Some(out)
}

impl Checkpoint {
    pub fn from_trainer(
        trainer: &Trainer,
        config: &Config,
        epoch: u32,
        latent_stats: LatentStats,
    ) -> Self {
        let (m, v) = trainer.opt.moments();
        Checkpoint {
            config: config.clone(),
            epoch,
            steps: trainer.steps(),
            rng: trainer.rng_state(),
            latent_stats,
            params: trainer
                .store
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone().with_requires_grad(false)))
                .collect(),
            adam_m: m.to_vec(),
            adam_v: v.to_vec(),
        }
    }

    /// Rebuilds the trainer from the stored configuration and state.
    pub fn to_trainer(&self) -> Result<Trainer> {
        let c = &self.config;
        let mut trainer = Trainer::new(
            c.predictor_config(),
            c.generator_config()?,
            c.train_config()?,
        )?;
        if trainer.store.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "checkpoint holds {} parameters but the configured model has {}",
                self.params.len(),
                trainer.store.len()
            )));
        }
        for (name, t) in &self.params {
            let slot = trainer.store.by_name(name).ok_or_else(|| {
                Error::invalid(format!(
                    "checkpoint parameter `{name}` is not part of the model"
                ))
            })?;
            if slot.shape() != t.shape() {
                return Err(Error::shape(
                    "checkpoint",
                    format!(
                        "`{name}` is {:?}, model expects {:?}",
                        t.shape(),
                        slot.shape()
                    ),
                ));
            }
            trainer.store.set(name, t.data().to_vec())?;
        }
        trainer.resume(
            self.steps,
            self.adam_m.clone(),
            self.adam_v.clone(),
            self.rng,
        )?;
        Ok(trainer)
    }

    fn header(&self) -> String {
        let mut lines: Vec<String> = self.config.to_text().lines().map(str::to_string).collect();
        lines.extend([
            format!("ckpt.epoch={}", self.epoch),
            format!("ckpt.latent_mean={}", self.latent_stats.mean),
            format!("ckpt.latent_std={}", self.latent_stats.std),
            format!("ckpt.rng_seed={}", hex(&self.rng.seed)),
            format!("ckpt.rng_stream={}", self.rng.stream),
            format!("ckpt.rng_word_pos={}", self.rng.word_pos),
            format!("ckpt.steps={}", self.steps),
            format!("ckpt.strategy={}", self.config.strategy),
        ]);
        lines.sort();
        lines.into_iter().map(|l| l + "\n").collect()
    }

    pub fn to_container(&self) -> Container {
        let mut sections = Vec::with_capacity(self.params.len() * 3);
        for (name, t) in &self.params {
            sections.push(Section::from_tensor(format!("param/{name}"), t));
        }
        for (prefix, moments) in [("adam_m", &self.adam_m), ("adam_v", &self.adam_v)] {
            for ((name, _), m) in self.params.iter().zip(moments) {
                sections.push(Section::vector(format!("{prefix}/{name}"), m.clone()));
            }
        }
        Container {
            header: self.header(),
            sections,
        }
    }

    pub fn from_container(c: &Container, path: &Path) -> Result<Self> {
        let bad = |message: String| Error::Malformed {
            path: path.to_path_buf(),
            offset: 0,
            message,
        };
        let mut config_lines = String::new();
        let mut meta = BTreeMap::new();
        for line in c.header.lines() {
            match line.strip_prefix("ckpt.") {
                Some(rest) => {
                    let (k, v) = rest
                        .split_once('=')
                        .ok_or_else(|| bad(format!("bad header line `{line}`")))?;
                    meta.insert(k.to_string(), v.to_string());
                }
                None => {
                    config_lines.push_str(line);
                    config_lines.push('\n');
                }
            }
        }
        let config = Config::parse(&config_lines)?;
        let get = |k: &str| {
            meta.get(k)
                .ok_or_else(|| bad(format!("header is missing `ckpt.{k}`")))
        };
        fn num<T: std::str::FromStr>(v: &str, k: &str, bad: impl Fn(String) -> Error) -> Result<T> {
            v.parse()
                .map_err(|_| bad(format!("bad value `{v}` for ckpt.{k}")))
        }
        let strategy = get("strategy")?;
        if *strategy != config.strategy.as_str() {
            return Err(bad(format!(
                "header strategy `{strategy}` disagrees with configured `{}`",
                config.strategy
            )));
        }
        let rng = RngState {
            seed: unhex(get("rng_seed")?).ok_or_else(|| bad("bad rng seed".into()))?,
            stream: num(get("rng_stream")?, "rng_stream", bad)?,
            word_pos: num(get("rng_word_pos")?, "rng_word_pos", bad)?,
        };
        let latent_stats = LatentStats {
            mean: num(get("latent_mean")?, "latent_mean", bad)?,
            std: num(get("latent_std")?, "latent_std", bad)?,
        };
        let mut params = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for s in &c.sections {
            if let Some(name) = s.name.strip_prefix("param/") {
                params.push((
                    name.to_string(),
                    Tensor::new(s.shape.clone(), s.data.clone())?,
                ));
            }
        }
        for (name, t) in &params {
            for (prefix, out) in [("adam_m", &mut m), ("adam_v", &mut v)] {
                let s = c.require(&format!("{prefix}/{name}"), path)?;
                if s.data.len() != t.numel() {
                    return Err(bad(format!(
                        "{prefix}/{name} has {} values, expected {}",
                        s.data.len(),
                        t.numel()
                    )));
                }
                out.push(s.data.clone());
            }
        }
        if c.sections.len() != 3 * params.len() {
            return Err(bad(
                "unexpected sections besides parameters and moments".into()
            ));
        }
        Ok(Checkpoint {
            config,
            epoch: num(get("epoch")?, "epoch", bad)?,
            steps: num(get("steps")?, "steps", bad)?,
            rng,
            latent_stats,
            params,
            adam_m: m,
            adam_v: v,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        format::encode(CHECKPOINT_MAGIC, &self.to_container())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        format::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = format::read_file(path)?;
        Self::from_container(&format::decode(CHECKPOINT_MAGIC, &bytes, path)?, path)
    }
}
