use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{add_noise, p_pred, v_target, ScheduleParams, VelocityModel, T_MIN};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::generator::{ConditionInputs, Generator, GeneratorConfig};
use crate::matrix::Matrix;
use crate::nn::{AdamW, Bound, InverseLr, ParamStore};
use crate::predictor::{predictor_loss, PredictorConfig, RhythmPredictor};
use crate::visual::VideoFeatures;

/// Optimizer and curriculum settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub lr_schedule: InverseLr,
    pub curriculum: ScheduleParams,
    /// Weight λ of the predictor loss in the joint objective.
    pub pred_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            betas: (0.9, 0.999),
            weight_decay: 1e-3,
            lr_schedule: InverseLr::default(),
            curriculum: ScheduleParams::default(),
            pred_weight: 1.0,
            seed: 0,
        }
    }
}

/// One paired training example.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingClip {
    pub features: VideoFeatures,
    /// Ground-truth rhythm, `[M × d_rhy]`.
    pub rhythm_gt: Matrix,
    /// Standardized latents, `[T × D_lat]`.
    pub latent: Matrix,
    pub g_start: f64,
    pub g_dur: f64,
}

impl TrainingClip {
    pub fn validate(&self) -> Result<()> {
        let m = self.features.seconds();
        if self.rhythm_gt.rows() != m {
            return Err(Error::LengthMismatch {
                what: "rhythm rows vs video seconds",
                left: self.rhythm_gt.rows(),
                right: m,
            });
        }
        if self.features.emotional.rows() != m {
            return Err(Error::LengthMismatch {
                what: "emotional rows vs video seconds",
                left: self.features.emotional.rows(),
                right: m,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub ldm: f32,
    pub predictor: f32,
    pub total: f32,
    pub t: f64,
    /// Rhythm condition came from the predictor.
    pub used_predicted: bool,
    /// Conditions were replaced by null tokens.
    pub dropped: bool,
}

/// Serializable position of a [`ChaCha8Rng`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Jointly trains the rhythm predictor and the generator.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub store: ParamStore,
    pub predictor: RhythmPredictor,
    pub generator: Generator,
    pub opt: AdamW,
    pub cfg: TrainConfig,
    rng: ChaCha8Rng,
    steps: u64,
}

struct ClipConstants {
    emo: Tensor<f32>,
    sem: Tensor<f32>,
    rhythm_gt: Tensor<f32>,
    z0: Tensor<f32>,
}

impl ClipConstants {
    fn new(clip: &TrainingClip) -> Result<Self> {
        clip.validate()?;
        Ok(ClipConstants {
            emo: clip.features.emotional.to_tensor()?,
            sem: clip.features.semantic.to_tensor()?,
            rhythm_gt: clip.rhythm_gt.to_tensor()?,
            z0: clip.latent.to_tensor()?,
        })
    }
}

impl Trainer {
    /// Parameters are drawn from `seed`; training draws use a separate stream.
    pub fn new(
        pred_cfg: PredictorConfig,
        gen_cfg: GeneratorConfig,
        cfg: TrainConfig,
    ) -> Result<Self> {
        if gen_cfg.d_rhy != pred_cfg.out_dim {
            return Err(Error::Config(format!(
                "generator rhythm width {} differs from predictor output {}",
                gen_cfg.d_rhy, pred_cfg.out_dim
            )));
        }
        let mut init = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let predictor = RhythmPredictor::new(&mut store, "predictor", pred_cfg, &mut init)?;
        let generator = Generator::new(&mut store, "generator", gen_cfg, &mut init)?;
        let opt = AdamW::new(&store, cfg.lr, cfg.betas, cfg.weight_decay, cfg.lr_schedule);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(Trainer {
            store,
            predictor,
            generator,
            opt,
            cfg,
            rng,
            steps: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    /// Restores optimizer position and random stream after loading parameters.
    pub fn resume(
        &mut self,
        steps: u64,
        m: Vec<Vec<f32>>,
        v: Vec<Vec<f32>>,
        rng: RngState,
    ) -> Result<()> {
        self.opt.restore(steps, m, v)?;
        self.rng = rng.restore();
        self.steps = steps;
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn losses(
        &self,
        g: &mut Graph<f32>,
        p: &Bound,
        clip: &TrainingClip,
        k: &ClipConstants,
        use_predicted: bool,
        drop: bool,
        t: f64,
        eps: &Tensor<f32>,
    ) -> Result<(Var, Var, Var)> {
        let pred = self.predictor.predict_var(g, p, &clip.features)?;
        let gt = g.constant(k.rhythm_gt.clone());
        let pred_loss = predictor_loss(g, pred, gt)?;
        let inputs = ConditionInputs {
            emo: g.constant(k.emo.clone()),
            sem: g.constant(k.sem.clone()),
            rhy: if use_predicted { pred } else { gt },
            g_start: clip.g_start,
            g_dur: clip.g_dur,
        };
        let z_t = g.constant(add_noise(&k.z0, eps, t)?);
        let v = g.constant(v_target(&k.z0, eps, t)?);
        let v_hat = self.generator.predict(g, p, z_t, &inputs, t, drop)?;
        let ldm = g.mse_loss(v_hat, v)?;
        let weighted = g.scale(pred_loss, self.cfg.pred_weight)?;
        let total = g.add(ldm, weighted)?;
        Ok((ldm, pred_loss, total))
    }

    /// One optimizer step on `clip` at curriculum position `epoch`.
    ///
    /// Random draws, in order: rhythm source, condition drop, timestep, noise.
    pub fn training_step(&mut self, clip: &TrainingClip, epoch: u32) -> Result<StepLoss> {
        let k = ClipConstants::new(clip)?;
        let p = p_pred(epoch, self.cfg.curriculum);
        let use_predicted = self.rng.random::<f64>() < p;
        let dropped = self.rng.random::<f64>() < self.generator.cfg.cond_drop_prob;
        let t = self.rng.random_range(T_MIN..=1.0);
        let eps = Tensor::randn(k.z0.shape(), 1.0, &mut self.rng);

        let mut g = Graph::new();
        let bound = self.store.bind(&mut g, true);
        let (ldm, pred, total) =
            self.losses(&mut g, &bound, clip, &k, use_predicted, dropped, t, &eps)?;
        g.backward(total)?;
        let grads = self.store.grads(&g, &bound);
        self.opt.step(&mut self.store, &grads)?;
        self.steps += 1;
        Ok(StepLoss {
            ldm: g.value(ldm).item(),
            predictor: g.value(pred).item(),
            total: g.value(total).item(),
            t,
            used_predicted: use_predicted,
            dropped,
        })
    }

    /// Deterministic evaluation: mean conditional LDM loss over `n_t` evenly
    /// spaced timesteps with noise from `seed`, plus the predictor loss.
    /// Ground-truth rhythm conditions the generator. No parameters change.
    pub fn probe_loss(&self, clip: &TrainingClip, n_t: usize, seed: u64) -> Result<(f32, f32)> {
        if n_t == 0 {
            return Err(Error::invalid("probe needs at least one timestep"));
        }
        let k = ClipConstants::new(clip)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut ldm_sum, mut pred_loss) = (0.0f64, 0.0f32);
        for i in 0..n_t {
            let t = (i as f64 + 0.5) / n_t as f64;
            let eps = Tensor::randn(k.z0.shape(), 1.0, &mut rng);
            let mut g = Graph::new();
            let bound = self.store.bind(&mut g, false);
            let (ldm, pred, _) = self.losses(&mut g, &bound, clip, &k, false, false, t, &eps)?;
            ldm_sum += g.value(ldm).item() as f64;
            pred_loss = g.value(pred).item();
        }
        Ok(((ldm_sum / n_t as f64) as f32, pred_loss))
    }

    /// Velocity model for sampling with the given rhythm condition.
    pub fn model_for<'a>(
        &'a self,
        features: &'a VideoFeatures,
        rhythm: &Matrix,
        g_start: f64,
        g_dur: f64,
    ) -> Result<GeneratorModel<'a>> {
        GeneratorModel::new(
            &self.store,
            &self.generator,
            features,
            rhythm,
            g_start,
            g_dur,
        )
    }
}

/// Frozen generator with fixed conditions, usable by the DDIM sampler.
#[derive(Clone, Debug)]
pub struct GeneratorModel<'a> {
    store: &'a ParamStore,
    generator: &'a Generator,
    emo: Tensor<f32>,
    sem: Tensor<f32>,
    rhy: Tensor<f32>,
    g_start: f64,
    g_dur: f64,
}

impl<'a> GeneratorModel<'a> {
    pub fn new(
        store: &'a ParamStore,
        generator: &'a Generator,
        features: &VideoFeatures,
        rhythm: &Matrix,
        g_start: f64,
        g_dur: f64,
    ) -> Result<Self> {
        let m = features.seconds();
        if rhythm.rows() != m {
            return Err(Error::LengthMismatch {
                what: "rhythm rows vs video seconds",
                left: rhythm.rows(),
                right: m,
            });
        }
        Ok(GeneratorModel {
            store,
            generator,
            emo: features.emotional.to_tensor()?,
            sem: features.semantic.to_tensor()?,
            rhy: rhythm.to_tensor()?,
            g_start,
            g_dur,
        })
    }
}

impl VelocityModel for GeneratorModel<'_> {
    fn velocity(&self, z_t: &Tensor<f32>, t: f64, conditional: bool) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let inputs = ConditionInputs {
            emo: g.constant(self.emo.clone()),
            sem: g.constant(self.sem.clone()),
            rhy: g.constant(self.rhy.clone()),
            g_start: self.g_start,
            g_dur: self.g_dur,
        };
        let z = g.constant(z_t.clone());
        let v = self
            .generator
            .predict(&mut g, &p, z, &inputs, t, !conditional)?;
        Ok(g.value(v).clone())
    }
}
