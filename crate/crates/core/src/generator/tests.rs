use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::grad_check_many;
use crate::nn::Bound;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn toy_cfg(kind: FusionKind, blocks: usize) -> GeneratorConfig {
    GeneratorConfig {
        d_model: 8,
        n_blocks: blocks,
        n_heads: 2,
        ffn_mult: 2,
        strategy: FusionStrategy::of(kind),
        cond_drop_prob: 0.1,
        d_lat: 4,
        max_len: 6,
        d_emo: 3,
        d_sem: 5,
        d_rhy: 2,
        frame_seconds: 0.5,
    }
}

fn build(kind: FusionKind, blocks: usize, seed: u64) -> (ParamStore, Generator) {
    let mut store = ParamStore::new();
    let gen = Generator::new(
        &mut store,
        "generator",
        toy_cfg(kind, blocks),
        &mut rng(seed),
    )
    .unwrap();
    (store, gen)
}

/// Copies every parameter present in both stores from `src` into `dst`.
fn copy_shared(dst: &mut ParamStore, src: &ParamStore) {
    for (name, t) in src.iter() {
        if let Some(d) = dst.by_name_mut(name) {
            d.data_mut().copy_from_slice(t.data());
        }
    }
}

/// Adds Gaussian noise to every parameter so no zero-initialized layer stays inert.
fn perturb(store: &mut ParamStore, seed: u64, std: f64) {
    let mut r = rng(seed);
    for t in store.tensors_mut() {
        let noise: Tensor<f32> = Tensor::randn(t.shape(), std, &mut r);
        for (x, n) in t.data_mut().iter_mut().zip(noise.data()) {
            *x += n;
        }
    }
}

fn set_all(store: &mut ParamStore, prefix_pattern: &str, value: f32) {
    let names: Vec<String> = store
        .iter()
        .map(|(n, _)| n.to_string())
        .filter(|n| n.contains(prefix_pattern))
        .collect();
    assert!(!names.is_empty(), "no parameter matches {prefix_pattern}");
    for n in names {
        store.by_name_mut(&n).unwrap().data_mut().fill(value);
    }
}

struct Inputs {
    emo: Tensor<f32>,
    sem: Tensor<f32>,
    rhy: Tensor<f32>,
    z: Tensor<f32>,
}

fn inputs(seed: u64, m: usize, frames: usize) -> Inputs {
    let mut r = rng(seed);
    Inputs {
        emo: Tensor::randn(&[m, 3], 1.0, &mut r),
        sem: Tensor::randn(&[m, 5], 1.0, &mut r),
        rhy: Tensor::uniform(&[m, 2], 0.0, 1.0, &mut r),
        z: Tensor::randn(&[frames, 4], 1.0, &mut r),
    }
}

fn cond_inputs<T: Scalar>(g: &mut Graph<T>, x: &Inputs) -> ConditionInputs {
    ConditionInputs {
        emo: g.constant(x.emo.cast()),
        sem: g.constant(x.sem.cast()),
        rhy: g.constant(x.rhy.cast()),
        g_start: 2.0,
        g_dur: 3.0,
    }
}

fn run(store: &ParamStore, gen: &Generator, x: &Inputs, t: f64, drop: bool) -> Vec<f32> {
    let mut g = Graph::<f32>::new();
    let p = store.bind(&mut g, false);
    let c = cond_inputs(&mut g, x);
    let z = g.constant(x.z.clone());
    let v = gen.predict(&mut g, &p, z, &c, t, drop).unwrap();
    assert_eq!(g.shape(v), x.z.shape());
    g.value(v).data().to_vec()
}

/// Runs one block on a random `h` with raw condition rows of model width.
fn run_block(
    store: &ParamStore,
    block: &HierBlock,
    h: &Tensor<f32>,
    cond: [&Tensor<f32>; 3],
    t: f64,
) -> Vec<f32> {
    let mut g = Graph::<f32>::new();
    let p = store.bind(&mut g, false);
    let hv = g.constant(h.clone());
    let c = ConditionSet {
        emo: g.constant(cond[0].clone()),
        sem: g.constant(cond[1].clone()),
        rhy: g.constant(cond[2].clone()),
        global_token: g.constant(Tensor::zeros(&[1, 8])),
    };
    let ctx = StepContext {
        t,
        temb: timestep_embedding(&mut g, t, 8).unwrap(),
    };
    let rope = RopeTables::new(&mut g, h.shape()[0], 4).unwrap();
    let out = block.forward(&mut g, &p, hv, &c, ctx, Some(&rope)).unwrap();
    assert_eq!(g.shape(out), h.shape());
    g.value(out).data().to_vec()
}

fn block_inputs(seed: u64) -> (Tensor<f32>, [Tensor<f32>; 3]) {
    let mut r = rng(seed);
    (
        Tensor::randn(&[5, 8], 1.0, &mut r),
        [
            Tensor::randn(&[3, 8], 1.0, &mut r),
            Tensor::randn(&[3, 8], 1.0, &mut r),
            Tensor::randn(&[3, 8], 1.0, &mut r),
        ],
    )
}

#[test]
fn strategy_names_round_trip() {
    for k in FusionKind::ALL {
        assert_eq!(k.as_str().parse::<FusionKind>().unwrap(), k);
    }
    assert!(matches!(
        "concat".parse::<FusionKind>(),
        Err(Error::Config(_))
    ));
    assert!(FusionStrategy::new(FusionKind::FeatureSelection, 0.0).is_err());
    assert!(FusionStrategy::new(FusionKind::FeatureSelection, 1.0).is_err());
    assert_eq!(
        FusionStrategy::default().kind,
        FusionKind::PostAttnFiLMwithFS
    );
}

#[test]
fn config_validation() {
    let mut c = toy_cfg(FusionKind::Additive, 1);
    c.validate().unwrap();
    c.cond_drop_prob = 0.6;
    assert!(c.validate().is_err());
    c.cond_drop_prob = 0.1;
    c.n_heads = 3;
    assert!(c.validate().is_err());
    c.n_heads = 8;
    assert!(c.validate().is_err(), "odd head dim must be rejected");
}

#[test]
fn only_needed_fusion_parameters_exist() {
    let count = |kind| {
        let (store, _) = build(kind, 1, 0);
        (
            store.iter().filter(|(n, _)| n.contains(".gate.")).count(),
            store.iter().filter(|(n, _)| n.contains(".film_")).count(),
        )
    };
    assert_eq!(count(FusionKind::Weighted), (4, 0));
    assert_eq!(count(FusionKind::Additive), (0, 0));
    assert_eq!(count(FusionKind::FeatureSelection), (0, 0));
    for k in [
        FusionKind::PreAttnFiLM,
        FusionKind::PostAttnFiLM,
        FusionKind::PostAttnFiLMwithFS,
    ] {
        assert_eq!(count(k), (0, 16));
    }
}

#[test]
fn global_embedding_contract() {
    let (mut store, gen) = build(FusionKind::Additive, 1, 1);
    perturb(&mut store, 2, 0.3);
    let eval = |t: f64| {
        let mut g = Graph::<f32>::new();
        let p = store.bind(&mut g, false);
        let v = gen.global_embedding(&mut g, &p, 1.0, 10.0, t).unwrap();
        assert_eq!(g.shape(v), &[1, 8]);
        g.value(v).data().to_vec()
    };
    assert_eq!(eval(0.3), eval(0.3));
    assert_ne!(eval(0.1), eval(0.9));
    let mut g = Graph::<f32>::new();
    let p = store.bind(&mut g, false);
    assert!(gen.global_embedding(&mut g, &p, 0.0, -1.0, 0.5).is_err());
    assert!(gen.global_embedding(&mut g, &p, 0.0, 0.0, 0.5).is_err());
    assert!(gen.global_embedding(&mut g, &p, -1.0, 2.0, 0.5).is_err());
}

#[test]
fn film_identities() {
    let mut g = Graph::<f64>::new();
    let h = Tensor::<f64>::randn(&[4, 6], 1.0, &mut rng(3));
    let hv = g.constant(h.clone());
    let ones = g.constant(Tensor::ones(&[1, 6]));
    let zeros = g.constant(Tensor::zeros(&[1, 6]));
    let y = film_apply(&mut g, hv, ones, zeros).unwrap();
    assert_eq!(g.value(y).data(), h.data());

    let beta = Tensor::<f64>::randn(&[1, 6], 1.0, &mut rng(4));
    let bv = g.constant(beta.clone());
    let y = film_apply(&mut g, hv, zeros, bv).unwrap();
    for row in g.value(y).data().chunks(6) {
        assert_eq!(row, beta.data());
    }

    let gamma = Tensor::<f64>::randn(&[1, 6], 1.0, &mut rng(5));
    let gv = g.constant(gamma.clone());
    let y = film_apply(&mut g, hv, gv, bv).unwrap();
    let out = g.value(y).data().to_vec();
    for (i, j) in [(0usize, 1usize), (1, 3), (2, 0)] {
        for c in 0..6 {
            let lhs = out[i * 6 + c] - out[j * 6 + c];
            let rhs = gamma.data()[c] * (h.data()[i * 6 + c] - h.data()[j * 6 + c]);
            assert!((lhs - rhs).abs() < 1e-6);
        }
    }

    let bad = g.constant(Tensor::ones(&[1, 5]));
    assert!(matches!(
        film_apply(&mut g, hv, bad, zeros),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn fresh_film_is_identity() {
    let mut store = ParamStore::new();
    let film = Film::new(&mut store, "f", 8, &mut rng(6));
    let mut g = Graph::<f32>::new();
    let p = store.bind(&mut g, false);
    let h = Tensor::<f32>::randn(&[3, 8], 1.0, &mut rng(7));
    let hv = g.constant(h.clone());
    let temb = timestep_embedding(&mut g, 0.37, 8).unwrap();
    let y = film.modulate(&mut g, &p, hv, temb).unwrap();
    assert_eq!(g.value(y).data(), h.data());
}

fn fuse_with(
    store: &ParamStore,
    fusion: &Fusion,
    hs: &Tensor<f32>,
    hr: &Tensor<f32>,
    t: f64,
) -> Result<Vec<f32>> {
    let mut g = Graph::<f32>::new();
    let p = store.bind(&mut g, false);
    let a = g.constant(hs.clone());
    let b = g.constant(hr.clone());
    let ctx = StepContext {
        t,
        temb: timestep_embedding(&mut g, t, 8)?,
    };
    let y = fusion.combine(&mut g, &p, Some(a), Some(b), ctx)?;
    Ok(g.value(y).data().to_vec())
}

fn fusion(kind: FusionKind) -> (ParamStore, Fusion) {
    let mut store = ParamStore::new();
    let f = Fusion::new(
        &mut store,
        "fusion",
        8,
        FusionStrategy::of(kind),
        &mut rng(8),
    );
    (store, f)
}

#[test]
fn fuse_examples() {
    let hs = Tensor::<f32>::randn(&[4, 8], 1.0, &mut rng(9));
    let hr = Tensor::<f32>::randn(&[4, 8], 1.0, &mut rng(10));

    let (mut store, f) = fusion(FusionKind::Weighted);
    set_all(&mut store, "gate.fc2.bias", 50.0);
    assert_eq!(fuse_with(&store, &f, &hs, &hr, 0.4).unwrap(), hs.data());
    set_all(&mut store, "gate.fc2.bias", -50.0);
    assert_eq!(fuse_with(&store, &f, &hs, &hr, 0.4).unwrap(), hr.data());

    let (store, f) = fusion(FusionKind::Additive);
    assert_eq!(fuse_with(&store, &f, &hs, &hs, 0.4).unwrap(), hs.data());

    let (store, f) = fusion(FusionKind::FeatureSelection);
    assert_eq!(fuse_with(&store, &f, &hs, &hr, 0.5).unwrap(), hs.data());
    assert_eq!(fuse_with(&store, &f, &hs, &hr, 0.2).unwrap(), hr.data());
    assert_eq!(fuse_with(&store, &f, &hs, &hr, 0.1).unwrap(), hr.data());

    assert!(fuse_with(&store, &f, &hs, &hr, 1.5).is_err());
    let short = Tensor::<f32>::zeros(&[3, 8]);
    assert!(fuse_with(&store, &f, &hs, &short, 0.5).is_err());
}

#[test]
fn fresh_weighted_gate_is_one_half() {
    let (store, f) = fusion(FusionKind::Weighted);
    let mut g = Graph::<f32>::new();
    let p = store.bind(&mut g, false);
    let temb = timestep_embedding(&mut g, 0.8, 8).unwrap();
    let a = f.alpha(&mut g, &p, temb).unwrap();
    assert_eq!(g.value(a).data(), &[0.5]);
}

#[test]
fn block_preserves_shape_for_every_strategy() {
    let (h, c) = block_inputs(11);
    for kind in FusionKind::ALL {
        let (mut store, gen) = build(kind, 1, 12);
        perturb(&mut store, 13, 0.2);
        for t in [0.1, 0.5] {
            let out = run_block(&store, &gen.blocks[0], &h, [&c[0], &c[1], &c[2]], t);
            assert!(out.iter().all(|v| v.is_finite()), "{kind}");
        }
    }
}

#[test]
fn zero_value_projections_silence_conditioning() {
    let (h, c) = block_inputs(14);
    let (_, c2) = block_inputs(15);
    let (mut store, gen) = build(FusionKind::Additive, 1, 16);
    for branch in ["emo_attn.v", "sem_attn.v", "rhy_attn.v"] {
        set_all(&mut store, branch, 0.0);
    }
    let block = &gen.blocks[0];
    let out_a = run_block(&store, block, &h, [&c[0], &c[1], &c[2]], 0.5);
    let out_b = run_block(&store, block, &h, [&c2[0], &c2[1], &c2[2]], 0.5);
    assert_eq!(out_a, out_b);

    // h + SelfAttn path + FFN(LN(0)) path, built from the same sublayers.
    let mut g = Graph::<f32>::new();
    let p = store.bind(&mut g, false);
    let hv = g.constant(h.clone());
    let rope = RopeTables::new(&mut g, 5, 4).unwrap();
    let x = block.ln_self.forward(&mut g, &p, hv).unwrap();
    let a = block
        .self_attn
        .forward(&mut g, &p, x, x, Some(&rope), None)
        .unwrap();
    let h_self = g.add(hv, a).unwrap();
    let zero = g.constant(Tensor::zeros(&[5, 8]));
    let x = block.ln_ffn.forward(&mut g, &p, zero).unwrap();
    let f = block.ffn.forward(&mut g, &p, x).unwrap();
    let expected = g.add(h_self, f).unwrap();
    assert_eq!(out_a, g.value(expected).data());
}

#[test]
fn zeroed_output_projections_make_every_block_the_identity() {
    let (h, c) = block_inputs(17);
    for kind in FusionKind::ALL {
        let (mut store, gen) = build(kind, 1, 18);
        perturb(&mut store, 19, 0.2);
        for pat in [
            "self_attn.o",
            "emo_attn.o",
            "sem_attn.o",
            "rhy_attn.o",
            "ffn.fc2",
        ] {
            set_all(&mut store, pat, 0.0);
        }
        for t in [0.1, 0.7] {
            let out = run_block(&store, &gen.blocks[0], &h, [&c[0], &c[1], &c[2]], t);
            assert_eq!(out, h.data(), "{kind} at t={t}");
        }
    }
}

#[test]
fn feature_selection_branch_symmetry() {
    let (h, c) = block_inputs(20);
    let (mut store, gen) = build(FusionKind::FeatureSelection, 1, 21);
    perturb(&mut store, 22, 0.2);
    // Give the rhythmic branch the semantic branch's weights.
    for w in ["q", "k", "v", "o"] {
        let src = store
            .by_name(&format!("generator.blocks.0.sem_attn.{w}.weight"))
            .unwrap()
            .data()
            .to_vec();
        store
            .set(&format!("generator.blocks.0.rhy_attn.{w}.weight"), src)
            .unwrap();
    }
    let block = &gen.blocks[0];
    let sem_route = run_block(&store, block, &h, [&c[0], &c[1], &c[2]], 0.5);
    let rhy_route = run_block(&store, block, &h, [&c[0], &c[2], &c[1]], 0.1);
    assert_eq!(
        sem_route,
        run_block(&store, block, &h, [&c[0], &c[1], &c[0]], 0.5)
    );
    assert_eq!(
        rhy_route,
        run_block(&store, block, &h, [&c[0], &c[2], &c[1]], 0.2)
    );
    assert_eq!(sem_route, rhy_route);
}

/// Builds a generator of `kind` that shares every common parameter with `base`.
fn sibling(kind: FusionKind, base: &ParamStore, blocks: usize) -> (ParamStore, Generator) {
    let (mut store, gen) = build(kind, blocks, 99);
    copy_shared(&mut store, base);
    (store, gen)
}

#[test]
fn degeneracy_lattice() {
    let x = inputs(23, 3, 5);
    let (mut base, _) = build(FusionKind::Additive, 2, 24);
    perturb(&mut base, 25, 0.2);
    let (add_store, add_gen) = sibling(FusionKind::Additive, &base, 2);
    let (mut w_store, w_gen) = sibling(FusionKind::Weighted, &base, 2);
    let (fs_store, fs_gen) = sibling(FusionKind::FeatureSelection, &base, 2);
    let (film_store, film_gen) = sibling(FusionKind::PostAttnFiLM, &base, 2);

    for t in [0.05, 0.3, 0.9] {
        let additive = run(&add_store, &add_gen, &x, t, false);
        assert_eq!(
            run(&w_store, &w_gen, &x, t, false),
            additive,
            "weighted α=0.5 at t={t}"
        );
        assert_eq!(
            run(&film_store, &film_gen, &x, t, false),
            additive,
            "FiLM identity at t={t}"
        );
    }

    set_all(&mut w_store, "gate.fc2.bias", 60.0);
    assert_eq!(
        run(&w_store, &w_gen, &x, 0.6, false),
        run(&fs_store, &fs_gen, &x, 0.6, false)
    );
    set_all(&mut w_store, "gate.fc2.bias", -60.0);
    assert_eq!(
        run(&w_store, &w_gen, &x, 0.15, false),
        run(&fs_store, &fs_gen, &x, 0.15, false)
    );
}

#[test]
fn generator_forward_contract() {
    let x = inputs(26, 3, 5);
    let (mut store, gen) = build(FusionKind::PostAttnFiLMwithFS, 2, 27);
    assert!(
        run(&store, &gen, &x, 0.5, false).iter().all(|&v| v == 0.0),
        "zero output projection"
    );
    perturb(&mut store, 28, 0.2);
    let a = run(&store, &gen, &x, 0.5, false);
    assert_eq!(a, run(&store, &gen, &x, 0.5, false));
    assert_ne!(
        a,
        run(&store, &gen, &x, 0.5, true),
        "null tokens change the prediction"
    );

    let long = inputs(29, 3, 7);
    let mut g = Graph::<f32>::new();
    let p = store.bind(&mut g, false);
    let c = cond_inputs(&mut g, &long);
    let z = g.constant(long.z.clone());
    assert!(matches!(
        gen.predict(&mut g, &p, z, &c, 0.5, false),
        Err(Error::SequenceTooLong { len: 7, max: 6 })
    ));
    let wrong = g.constant(Tensor::zeros(&[3, 5]));
    assert!(matches!(
        gen.predict(&mut g, &p, wrong, &c, 0.5, false),
        Err(Error::ShapeMismatch { .. })
    ));
    let z = g.constant(x.z.clone());
    assert!(gen.predict(&mut g, &p, z, &c, 1.5, false).is_err());
}

fn generator_grad_error(kind: FusionKind, blocks: usize, t: f64, drop: bool) -> f64 {
    let x = inputs(30, 3, 4);
    let (mut store, gen) = build(kind, blocks, 31);
    perturb(&mut store, 32, 0.3);
    let target = Tensor::<f64>::randn(&[4, 4], 1.0, &mut rng(33));
    let s64 = store.cast::<f64>();
    grad_check_many(
        |g, vars| {
            let p = Bound::from_vars(vars.to_vec());
            let c = cond_inputs(g, &x);
            let z = g.constant(x.z.cast());
            let v = gen.predict(g, &p, z, &c, t, drop)?;
            let y = g.constant(target.clone());
            g.mse_loss(v, y)
        },
        s64.tensors(),
        1e-5,
    )
    .unwrap()
}

#[test]
fn every_strategy_passes_grad_check_on_one_block() {
    for kind in FusionKind::ALL {
        for t in [0.1, 0.6] {
            let err = generator_grad_error(kind, 1, t, false);
            assert!(err < 1e-3, "{kind} at t={t}: {err}");
        }
    }
    let err = generator_grad_error(FusionKind::Additive, 1, 0.4, true);
    assert!(err < 1e-3, "unconditional branch: {err}");
}

#[test]
fn two_block_generator_passes_grad_check() {
    let err = generator_grad_error(FusionKind::PostAttnFiLMwithFS, 2, 0.5, false);
    assert!(err < 1e-3, "{err}");
}
