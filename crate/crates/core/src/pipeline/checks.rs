//! Self-contained numeric checks exposed through the CLI.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::synth::generate_synthetic_pair;
use crate::audio::odf_of;
use crate::autodiff::{grad_check_many, Attr, Attrs, Graph, Tensor, Var};
use crate::diffusion::{add_noise, ddim_from, p_pred, schedule, ScheduleParams, VelocityModel};
use crate::error::Result;
use crate::generator::{ConditionInputs, FusionKind, FusionStrategy, Generator, GeneratorConfig};
use crate::nn::{Bound, ParamStore};
use crate::visual::{detect_scene_transitions, SCENE_THRESHOLD};

pub const GRAD_TOLERANCE: f64 = 1e-3;
const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    /// Measured error or indicator, compared against `threshold`.
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl CheckResult {
    fn below(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        CheckResult {
            name: name.into(),
            value,
            threshold,
            passed: value < threshold,
        }
    }

    fn flag(name: impl Into<String>, ok: bool) -> Self {
        CheckResult {
            name: name.into(),
            value: if ok { 0.0 } else { 1.0 },
            threshold: 0.5,
            passed: ok,
        }
    }

    pub fn to_json(&self) -> Value {
        json!({"name": self.name, "value": self.value, "threshold": self.threshold, "passed": self.passed})
    }
}

fn attrs(items: &[(&str, Attr)]) -> Attrs {
    items
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

/// Sum of `out ∘ w` for a fixed random `w`, so every output element matters.
fn weighted_sum(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let w = Tensor::randn(g.shape(out), 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    let w = g.constant(w);
    let y = g.mul(out, w)?;
    g.sum(y, None)
}

struct OpCase {
    name: &'static str,
    shapes: Vec<Vec<usize>>,
    attrs: Attrs,
}

fn op_cases() -> Vec<OpCase> {
    let case = |name, shapes: &[&[usize]], attrs: Attrs| OpCase {
        name,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        attrs,
    };
    vec![
        case("matmul", &[&[3, 4], &[4, 2]], Attrs::new()),
        case("add", &[&[3, 4], &[3, 4]], Attrs::new()),
        case("sub", &[&[3, 4], &[3, 4]], Attrs::new()),
        case("mul", &[&[3, 4], &[1, 4]], Attrs::new()),
        case("broadcast_add", &[&[2, 3, 4], &[4]], Attrs::new()),
        case("scale", &[&[3, 4]], attrs(&[("factor", Attr::Float(-1.7))])),
        case("transpose", &[&[2, 3, 4]], Attrs::new()),
        case(
            "reshape",
            &[&[3, 4]],
            attrs(&[("shape", Attr::Ints(vec![2, 6]))]),
        ),
        case(
            "concat",
            &[&[2, 3], &[4, 3]],
            attrs(&[("axis", Attr::Int(0))]),
        ),
        case(
            "slice",
            &[&[3, 5]],
            attrs(&[
                ("axis", Attr::Int(-1)),
                ("start", Attr::Int(1)),
                ("end", Attr::Int(4)),
            ]),
        ),
        case("softmax", &[&[3, 5]], attrs(&[("axis", Attr::Int(-1))])),
        case(
            "layer_norm",
            &[&[3, 6]],
            attrs(&[("axis", Attr::Int(-1)), ("eps", Attr::Float(1e-5))]),
        ),
        case("sigmoid", &[&[3, 4]], Attrs::new()),
        case("gelu", &[&[3, 4]], Attrs::new()),
        case(
            "embedding_lookup",
            &[&[5, 3]],
            attrs(&[("indices", Attr::Ints(vec![4, 0, 4, 2]))]),
        ),
        case("mean", &[&[3, 4]], attrs(&[("axis", Attr::Int(0))])),
        case("mean", &[&[2, 3]], Attrs::new()),
        case("sum", &[&[3, 4]], attrs(&[("axis", Attr::Int(1))])),
        case("sum", &[&[2, 3]], Attrs::new()),
        case("mse_loss", &[&[3, 4], &[3, 4]], Attrs::new()),
    ]
}

/// Maximum relative gradient error of every differentiable op.
pub fn op_gradchecks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (i, case) in op_cases().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let inputs: Vec<Tensor<f64>> = case
            .shapes
            .iter()
            .map(|s| Tensor::randn(s, 1.0, &mut rng))
            .collect();
        let err = grad_check_many(
            |g, vars| {
                let y = g.apply_named(case.name, vars, &case.attrs)?;
                weighted_sum(g, y, seed ^ 0x5eed)
            },
            &inputs,
            FD_STEP,
        )?;
        let label = match case.attrs.get("axis") {
            None if matches!(case.name, "mean" | "sum") => format!("grad/{}_all", case.name),
            _ => format!("grad/{}", case.name),
        };
        out.push(CheckResult::below(label, err, GRAD_TOLERANCE));
    }
    Ok(out)
}

/// Tiny generator configuration for end-to-end gradient checks.
pub fn toy_generator_config(kind: FusionKind, blocks: usize) -> GeneratorConfig {
    GeneratorConfig {
        d_model: 8,
        n_blocks: blocks,
        n_heads: 2,
        ffn_mult: 2,
        strategy: FusionStrategy::of(kind),
        cond_drop_prob: 0.1,
        d_lat: 4,
        max_len: 8,
        d_emo: 3,
        d_sem: 5,
        d_rhy: 1,
        frame_seconds: 0.5,
    }
}

/// Relative gradient error of `mse(generator(z_t, C, t), target)` over all
/// parameters. Every parameter is perturbed first so zero-initialized
/// layers carry gradient.
pub fn generator_gradcheck(kind: FusionKind, blocks: usize, t: f64, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let gen = Generator::new(
        &mut store,
        "generator",
        toy_generator_config(kind, blocks),
        &mut rng,
    )?;
    for p in store.tensors_mut() {
        let noise: Tensor<f32> = Tensor::randn(p.shape(), 0.3, &mut rng);
        for (x, n) in p.data_mut().iter_mut().zip(noise.data()) {
            *x += n;
        }
    }
    let (m, frames) = (3, 4);
    let emo = Tensor::<f64>::uniform(&[m, 3], 0.0, 1.0, &mut rng);
    let sem = Tensor::<f64>::randn(&[m, 5], 1.0, &mut rng);
    let rhy = Tensor::<f64>::uniform(&[m, 1], 0.0, 1.0, &mut rng);
    let z = Tensor::<f64>::randn(&[frames, 4], 1.0, &mut rng);
    let target = Tensor::<f64>::randn(&[frames, 4], 1.0, &mut rng);
    let s64 = store.cast::<f64>();
    grad_check_many(
        |g, vars| {
            let p = Bound::from_vars(vars.to_vec());
            let c = ConditionInputs {
                emo: g.constant(emo.clone()),
                sem: g.constant(sem.clone()),
                rhy: g.constant(rhy.clone()),
                g_start: 1.0,
                g_dur: m as f64,
            };
            let zv = g.constant(z.clone());
            let v = gen.predict(g, &p, zv, &c, t, false)?;
            let y = g.constant(target.clone());
            g.mse_loss(v, y)
        },
        s64.tensors(),
        FD_STEP,
    )
}

/// Op checks plus the two-block generator under every fusion strategy.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = op_gradchecks(seed)?;
    for kind in FusionKind::ALL {
        let err = generator_gradcheck(kind, 2, 0.6, seed)?;
        out.push(CheckResult::below(
            format!("grad/generator_2block/{kind}"),
            err,
            GRAD_TOLERANCE,
        ));
    }
    Ok(out)
}

struct ExactV(Tensor<f32>);

impl VelocityModel for ExactV {
    fn velocity(&self, z_t: &Tensor<f32>, t: f64, _conditional: bool) -> Result<Tensor<f32>> {
        let (a, s) = schedule(t)?;
        let data = z_t
            .data()
            .iter()
            .zip(self.0.data())
            .map(|(&z, &x)| (a * (z as f64 - a * x as f64) / s - s * x as f64) as f32)
            .collect();
        Tensor::new(z_t.shape().to_vec(), data)
    }
}

/// Quick oracle checks across modules.
pub fn selftest(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let sp = ScheduleParams::default();
    out.push(CheckResult::flag(
        "schedule/p_pred_examples",
        p_pred(5, sp) == 0.0 && p_pred(20, sp) == 0.5 && p_pred(40, sp) == 1.0,
    ));
    let worst = (0..=1000)
        .map(|i| {
            let (a, s) = schedule(i as f64 / 1000.0).expect("t in range");
            (a * a + s * s - 1.0).abs()
        })
        .fold(0.0, f64::max);
    out.push(CheckResult::below("diffusion/unit_norm", worst, 1e-6));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z0: Tensor<f32> = Tensor::randn(&[4, 8], 1.0, &mut rng);
    let eps: Tensor<f32> = Tensor::randn(&[4, 8], 1.0, &mut rng);
    let oracle = ExactV(z0.clone());
    let mut ddim_err = 0.0f64;
    for t in [0.1, 0.5, 1.0] {
        let zt = add_noise(&z0, &eps, t)?;
        for steps in [1, 10, 50] {
            ddim_err = ddim_err.max(ddim_from(&oracle, &zt, t, steps, 3.0)?.max_abs_diff(&z0));
        }
    }
    out.push(CheckResult::below("diffusion/oracle_ddim", ddim_err, 1e-4));

    let fs = FusionStrategy::of(FusionKind::FeatureSelection);
    out.push(CheckResult::flag(
        "fusion/selection_rule",
        fs.selects_semantic(0.5) && !fs.selects_semantic(0.2) && !fs.selects_semantic(0.1),
    ));

    let pair = generate_synthetic_pair(10, 3, seed)?;
    let odf = odf_of(&pair.audio)?;
    let odf_ok = (0..10).all(|s| (odf[s] > 0.0) == pair.events.contains(&s));
    out.push(CheckResult::flag("audio/synthetic_onsets", odf_ok));
    let scene = detect_scene_transitions(&pair.frames, SCENE_THRESHOLD);
    let scene_ok = (0..10).all(|s| (scene[s] > 0.5) == pair.events.contains(&s));
    out.push(CheckResult::flag("visual/synthetic_cuts", scene_ok));

    let err = generator_gradcheck(FusionKind::PostAttnFiLMwithFS, 1, 0.5, seed)?;
    out.push(CheckResult::below(
        "grad/generator_1block",
        err,
        GRAD_TOLERANCE,
    ));
    Ok(out)
}
