use super::params::ParamStore;
use crate::error::{Error, Result};

/// Inverse-power learning-rate decay with optional exponential warmup:
/// `lr · (1 − warmup^(step+1)) · (1 + step/inv_gamma)^(−power)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InverseLr {
    pub inv_gamma: f64,
    pub power: f64,
    pub warmup: f64,
}

impl Default for InverseLr {
    fn default() -> Self {
        InverseLr {
            inv_gamma: 1e6,
            power: 0.5,
            warmup: 0.0,
        }
    }
}

impl InverseLr {
    pub fn factor(&self, step: u64) -> f64 {
        let s = step as f64;
        (1.0 - self.warmup.powf(s + 1.0)) * (1.0 + s / self.inv_gamma).powf(-self.power)
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub schedule: InverseLr,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(
        store: &ParamStore,
        lr: f64,
        betas: (f64, f64),
        weight_decay: f64,
        schedule: InverseLr,
    ) -> Self {
        let zeros: Vec<Vec<f32>> = store
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.numel()])
            .collect();
        AdamW {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps: 1e-8,
            weight_decay,
            schedule,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        self.lr * self.schedule.factor(self.step)
    }

    pub fn moments(&self) -> (&[Vec<f32>], &[Vec<f32>]) {
        (&self.m, &self.v)
    }

    /// Restores state saved from [`AdamW::moments`] and [`AdamW::steps_taken`].
    pub fn restore(&mut self, step: u64, m: Vec<Vec<f32>>, v: Vec<Vec<f32>>) -> Result<()> {
        let ok = |x: &Vec<Vec<f32>>| {
            x.len() == self.m.len() && x.iter().zip(&self.m).all(|(a, b)| a.len() == b.len())
        };
        if !ok(&m) || !ok(&v) {
            return Err(Error::invalid(
                "optimizer state does not match the parameter layout",
            ));
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f32>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::LengthMismatch {
                what: "gradient list",
                left: grads.len(),
                right: store.len(),
            });
        }
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let decay = (1.0 - lr * self.weight_decay) as f32;
        let step_size = (lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = self.eps as f32;
        for (((param, g), m), v) in store
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((p, &g), m), v) in param
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *p *= decay;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step_size * *m / ((*v).sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}
