//! Continuous cosine noise schedule, v-objective, conditioning curriculum,
//! deterministic DDIM sampling with classifier-free guidance, and the latent
//! codec.

mod codec;
mod train;

use std::f64::consts::FRAC_PI_2;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use codec::{
    decode_with_noise, encode_samples, latent_decode, latent_encode, latent_frames, LatentClip,
    LatentStats, D_LAT, FRAME_SECONDS, HOP_LAT, PATCH, RMS_FLOOR,
};
pub use train::{GeneratorModel, RngState, StepLoss, TrainConfig, Trainer, TrainingClip};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Smallest training timestep.
pub const T_MIN: f64 = 1e-4;

/// `(α_t, σ_t) = (cos(πt/2), sin(πt/2))`.
pub fn schedule(t: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("timestep {t} outside [0, 1]")));
    }
    if t == 1.0 {
        return Ok((0.0, 1.0));
    }
    let (s, c) = (FRAC_PI_2 * t).sin_cos();
    Ok((c, s))
}

fn same_shape(op: &'static str, a: &Tensor<f32>, b: &Tensor<f32>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

/// `a·x + b·y`, computed in `f64`.
fn lincomb(a: f64, x: &Tensor<f32>, b: f64, y: &Tensor<f32>) -> Tensor<f32> {
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&u, &v)| (a * u as f64 + b * v as f64) as f32)
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape taken from an existing tensor")
}

/// `z_t = α_t·z0 + σ_t·ε`.
pub fn add_noise(z0: &Tensor<f32>, eps: &Tensor<f32>, t: f64) -> Result<Tensor<f32>> {
    same_shape("add_noise", z0, eps)?;
    let (a, s) = schedule(t)?;
    Ok(lincomb(a, z0, s, eps))
}

/// `v = α_t·ε − σ_t·z0`.
pub fn v_target(z0: &Tensor<f32>, eps: &Tensor<f32>, t: f64) -> Result<Tensor<f32>> {
    same_shape("v_target", z0, eps)?;
    let (a, s) = schedule(t)?;
    Ok(lincomb(a, eps, -s, z0))
}

/// `ẑ0 = α_t·z_t − σ_t·v`.
pub fn predict_z0(z_t: &Tensor<f32>, v: &Tensor<f32>, t: f64) -> Result<Tensor<f32>> {
    same_shape("predict_z0", z_t, v)?;
    let (a, s) = schedule(t)?;
    Ok(lincomb(a, z_t, -s, v))
}

/// `ε̂ = σ_t·z_t + α_t·v`.
pub fn predict_eps(z_t: &Tensor<f32>, v: &Tensor<f32>, t: f64) -> Result<Tensor<f32>> {
    same_shape("predict_eps", z_t, v)?;
    let (a, s) = schedule(t)?;
    Ok(lincomb(s, z_t, a, v))
}

/// Epoch boundaries of the conditioning curriculum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScheduleParams {
    pub e1: u32,
    pub e2: u32,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams { e1: 10, e2: 30 }
    }
}

impl ScheduleParams {
    pub fn new(e1: u32, e2: u32) -> Result<Self> {
        if e1 >= e2 {
            return Err(Error::Config(format!(
                "schedule needs e1 < e2, got e1={e1}, e2={e2}"
            )));
        }
        Ok(ScheduleParams { e1, e2 })
    }
}

/// Probability of conditioning on predicted rather than ground-truth rhythm.
pub fn p_pred(epoch: u32, sp: ScheduleParams) -> f64 {
    if epoch < sp.e1 {
        0.0
    } else if epoch < sp.e2 {
        (epoch - sp.e1) as f64 / (sp.e2 - sp.e1) as f64
    } else {
        1.0
    }
}

/// `uncond + scale·(cond − uncond)`.
pub fn cfg_combine(cond: &Tensor<f32>, uncond: &Tensor<f32>, scale: f64) -> Result<Tensor<f32>> {
    same_shape("cfg_combine", cond, uncond)?;
    let data = cond
        .data()
        .iter()
        .zip(uncond.data())
        .map(|(&c, &u)| (u as f64 + scale * (c as f64 - u as f64)) as f32)
        .collect();
    Tensor::new(cond.shape().to_vec(), data)
}

/// Anything that predicts velocity for a noisy latent.
pub trait VelocityModel {
    fn velocity(&self, z_t: &Tensor<f32>, t: f64, conditional: bool) -> Result<Tensor<f32>>;
}

/// Guided velocity; the unconditional pass is skipped at scale 1.
pub fn guided_velocity<M: VelocityModel + ?Sized>(
    model: &M,
    z_t: &Tensor<f32>,
    t: f64,
    scale: f64,
) -> Result<Tensor<f32>> {
    let cond = model.velocity(z_t, t, true)?;
    if scale == 1.0 {
        return Ok(cond);
    }
    let uncond = model.velocity(z_t, t, false)?;
    cfg_combine(&cond, &uncond, scale)
}

/// Deterministic DDIM from `z_start` at `t_start` down to 0 over a uniform grid.
pub fn ddim_from<M: VelocityModel + ?Sized>(
    model: &M,
    z_start: &Tensor<f32>,
    t_start: f64,
    steps: usize,
    scale: f64,
) -> Result<Tensor<f32>> {
    if steps < 1 {
        return Err(Error::invalid("DDIM needs at least one step"));
    }
    if !(t_start > 0.0 && t_start <= 1.0) {
        return Err(Error::invalid(format!(
            "DDIM start time must lie in (0, 1], got {t_start}"
        )));
    }
    let mut z = z_start.clone();
    let mut z0 = z.clone();
    for i in 0..steps {
        let t = t_start * (1.0 - i as f64 / steps as f64);
        let t_next = t_start * (1.0 - (i + 1) as f64 / steps as f64);
        let v = guided_velocity(model, &z, t, scale)?;
        z0 = predict_z0(&z, &v, t)?;
        let eps = predict_eps(&z, &v, t)?;
        let (a, s) = schedule(t_next.max(0.0))?;
        z = lincomb(a, &z0, s, &eps);
    }
    Ok(z0)
}

/// Samples from pure noise drawn with `seed`.
pub fn ddim_sample<M: VelocityModel + ?Sized>(
    model: &M,
    shape: &[usize],
    steps: usize,
    scale: f64,
    seed: u64,
) -> Result<Tensor<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Tensor::randn(shape, 1.0, &mut rng);
    ddim_from(model, &z, 1.0, steps, scale)
}

#[cfg(test)]
mod tests;
