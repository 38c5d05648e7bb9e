mod common;

use common::*;
use crossdepict_core::autodiff::{gradient, Tape, Var};
use crossdepict_core::data::{make_scenario, stack, Batch, Example, MultiDomainDataset};
use crossdepict_core::model::{Activation, FeatureNetSpec, HeadMode, Model};
use crossdepict_core::train::*;
use crossdepict_core::{Error, ParamSet, Tensor};
use rand::Rng;

fn toy_model(dim: usize, classes: usize, mode: HeadMode, act: Activation) -> Model {
    let spec = FeatureNetSpec {
        widths: vec![dim, 16, 12],
        activation: act,
        seed: 3,
    };
    Model::init(spec, classes, mode, 4).unwrap()
}

fn toy_config(iterations: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        batch_size: 16,
        lr: 0.02,
        decay_period: 200,
        eval_interval: 50,
        seed: 17,
        ..TrainConfig::desk()
    }
}

fn full_batch_loss(model: &Model, examples: &[&Example]) -> f64 {
    let b = stack(examples).unwrap();
    crossdepict_core::autodiff::cross_entropy(&model.forward(&b.features).unwrap(), &b.labels).unwrap()
}

#[test]
fn schedule_matches_documented_values() {
    let cfg = TrainConfig::paper();
    assert_eq!(lr_schedule(0, &cfg), 5e-4);
    assert_eq!(lr_schedule(14_999, &cfg), 5e-4);
    assert!((lr_schedule(15_000, &cfg) - 4.8e-4).abs() < 1e-18);
    let desk = TrainConfig::desk();
    assert_eq!((desk.iterations, desk.decay_period), (3000, 1000));
}

fn scalar_set(v: f64) -> ParamSet {
    ParamSet::new([("x", Tensor::vector(vec![v]))]).unwrap()
}

#[test]
fn momentum_matches_scalar_recursion() {
    let cfg = TrainConfig {
        lr: 0.1,
        decay: 0.5,
        decay_period: 2,
        momentum: 0.9,
        weight_decay: 0.01,
        ..TrainConfig::desk()
    };
    let g = 0.5;
    let mut p = scalar_set(1.0);
    let mut state = SgdState::new(&p);
    let (mut theta, mut v) = (1.0f64, 0.0f64);
    for t in 0..7 {
        sgd_step(&mut p, &scalar_set(g), &mut state, &cfg, &[true]).unwrap();
        v = 0.9 * v + (g + 0.01 * theta);
        theta -= 0.1 * 0.5f64.powi((t / 2) as i32) * v;
        assert!((p.get("x").unwrap().data()[0] - theta).abs() < 1e-15);
    }
    assert_eq!(state.step, 7);
}

#[test]
fn two_momentum_steps_move_by_lr_g_times_2_9() {
    let cfg = TrainConfig {
        lr: 0.01,
        weight_decay: 0.0,
        ..TrainConfig::desk()
    };
    let mut p = scalar_set(0.0);
    let mut s = SgdState::new(&p);
    for _ in 0..2 {
        sgd_step(&mut p, &scalar_set(3.0), &mut s, &cfg, &[true]).unwrap();
    }
    assert!((p.get("x").unwrap().data()[0] + 0.01 * 3.0 * 2.9).abs() < 1e-15);
}

#[test]
fn sgd_reductions() {
    let plain = TrainConfig {
        lr: 0.25,
        momentum: 0.0,
        weight_decay: 0.0,
        ..TrainConfig::desk()
    };
    let mut p = scalar_set(2.0);
    let mut s = SgdState::new(&p);
    sgd_step(&mut p, &scalar_set(1.0), &mut s, &plain, &[true]).unwrap();
    assert_eq!(p.get("x").unwrap().data(), &[1.75]);

    let mut q = scalar_set(2.0);
    let mut s = SgdState::new(&q);
    sgd_step(&mut q, &scalar_set(0.0), &mut s, &TrainConfig { weight_decay: 0.0, ..TrainConfig::desk() }, &[true])
        .unwrap();
    assert_eq!(q.get("x").unwrap().data(), &[2.0]);

    let other = ParamSet::new([("y", Tensor::vector(vec![1.0]))]).unwrap();
    assert!(sgd_step(&mut q, &other, &mut s, &plain, &[true]).is_err());
}

#[test]
fn baseline_descends_on_separable_data() {
    let ds = blobs(3, 30, 2, 4, 1);
    let sc = make_scenario(&ds, "d2", 0).unwrap();
    let model = toy_model(4, 2, HeadMode::Trainable, Activation::Relu);
    let train: Vec<&Example> = sc.train_domains().iter().flat_map(|&d| sc.train_examples(d).unwrap()).collect();
    let before = full_batch_loss(&model, &train);
    let out = train_baseline(model, &sc, &toy_config(500)).unwrap();
    let after = full_batch_loss(&out.last, &train);
    assert!(after < before, "{after} !< {before}");
    assert_eq!(out.curve.len(), 500);
    assert_eq!(out.checkpoints.len(), 10);
    assert!(out.curve.iter().all(|s| s.loss.is_finite()));
}

#[test]
fn identical_seeds_give_identical_runs() {
    let ds = blobs(3, 20, 3, 5, 2);
    let sc = make_scenario(&ds, "d0", 1).unwrap();
    let run = || train_baseline(toy_model(5, 3, HeadMode::Trainable, Activation::Tanh), &sc, &toy_config(200)).unwrap();
    let (a, b) = (run(), run());
    assert!(a.curve.iter().zip(&b.curve).all(|(x, y)| x.loss.to_bits() == y.loss.to_bits()));
    assert!(a.last.param_set().bit_eq(&b.last.param_set()));
    assert_eq!(a.checkpoints, b.checkpoints);
}

#[test]
fn best_model_matches_its_checkpoint_digest() {
    let ds = blobs(3, 20, 3, 5, 3);
    let sc = make_scenario(&ds, "d1", 1).unwrap();
    let out = train_baseline(toy_model(5, 3, HeadMode::Trainable, Activation::Relu), &sc, &toy_config(300)).unwrap();
    assert_eq!(out.best.param_set().digest(), out.best_checkpoint().digest);
    let best = out.best_val_acc();
    assert!(out.checkpoints.iter().all(|c| c.val_acc <= best));
    assert!(out.checkpoints[..out.best_index].iter().all(|c| c.val_acc < best));
}

#[test]
fn fixed_head_bytes_survive_training() {
    let ds = blobs(3, 20, 4, 6, 4);
    let sc = make_scenario(&ds, "d2", 2).unwrap();
    for mode in [HeadMode::FixedRandom, HeadMode::FixedOrthogonal] {
        let model = toy_model(6, 4, mode, Activation::Relu);
        let init = model.head.to_bytes();
        let out = train_fixed_head(model, &sc, &toy_config(1000)).unwrap();
        assert_eq!(out.last.head.to_bytes(), init);
        assert_eq!(out.best.head.to_bytes(), init);
    }
    let trainable = toy_model(6, 4, HeadMode::Trainable, Activation::Relu);
    assert!(matches!(train_fixed_head(trainable, &sc, &toy_config(10)), Err(Error::Config(_))));
    let frozen = toy_model(6, 4, HeadMode::FixedRandom, Activation::Relu);
    assert!(matches!(train_baseline(frozen, &sc, &toy_config(10)), Err(Error::Config(_))));
}

#[test]
fn zero_rate_fixed_head_stays_at_chance() {
    let ds = blobs(3, 25, 4, 6, 5);
    let sc = make_scenario(&ds, "d0", 3).unwrap();
    let mut total = 0.0;
    let seeds = 12;
    for seed in 0..seeds {
        let spec = FeatureNetSpec {
            widths: vec![6, 16, 12],
            activation: Activation::Relu,
            seed,
        };
        let model = Model::init(spec, 4, HeadMode::FixedRandom, 100 + seed).unwrap();
        let init = model.param_set();
        let out = train_fixed_head(model, &sc, &TrainConfig { lr: 0.0, ..toy_config(20) }).unwrap();
        assert!(out.last.param_set().bit_eq(&init));
        total += crossdepict_core::eval::evaluate_accuracy(&out.last, &sc.test_examples()).unwrap();
    }
    let mean = total / seeds as f64;
    assert!((mean - 25.0).abs() < 12.0, "mean accuracy {mean}");
}

// MLDG

fn quadratic_config(beta: f64, mode: GradientMode) -> MldgConfig {
    MldgConfig {
        alpha: 0.3,
        beta,
        gamma: 0.1,
        constant_gamma: false,
        mode,
    }
}

fn half_sq(tape: &mut Tape, v: Var, c: Option<Var>) -> Var {
    let d = match c {
        Some(c) => tape.sub(v, c).unwrap(),
        None => v,
    };
    let sq = tape.dot(d, d).unwrap();
    tape.scale(sq, 0.5).unwrap()
}

#[test]
fn mldg_quadratic_closed_form() {
    let mut r = rng(8);
    let theta = random_tensor(&mut r, &[6], 2.0);
    let c = random_tensor(&mut r, &[6], 2.0);
    let params = ParamSet::new([("t", theta.clone())]).unwrap();
    for (beta, mode) in [(1.0, GradientMode::Exact), (0.7, GradientMode::Exact), (0.7, GradientMode::FirstOrder)] {
        let cfg = quadratic_config(beta, mode);
        let cc = c.clone();
        let (_, g) = mldg_meta_gradient_with(
            &params,
            &[true],
            &cfg,
            |tape, v| Ok(half_sq(tape, v[0], None)),
            move |tape, v| {
                let cv = tape.constant(cc.clone());
                Ok(half_sq(tape, v[0], Some(cv)))
            },
        )
        .unwrap();
        let a = cfg.alpha;
        for j in 0..6 {
            let (t, cj) = (theta.data()[j], c.data()[j]);
            let expected = match mode {
                GradientMode::Exact => t + beta * (1.0 - a) * ((1.0 - a) * t - cj),
                GradientMode::FirstOrder => t + beta * ((1.0 - a) * t - cj),
            };
            assert!((g.get("t").unwrap().data()[j] - expected).abs() < 1e-10);
        }
    }
}

fn tanh_toy(seed: u64) -> (ParamSet, Tensor, Vec<usize>, Tensor, Vec<usize>) {
    let mut r = rng(seed);
    let p = tanh_net_params(&mut r, [8, 16, 4]);
    let xa = random_tensor(&mut r, &[32, 8], 1.0);
    let ya = random_labels(&mut r, 32, 4);
    let xb = random_tensor(&mut r, &[32, 8], 1.0);
    let yb = random_labels(&mut r, 32, 4);
    (p, xa, ya, xb, yb)
}

/// `F(p) + beta G(p - alpha grad F(p))` with hand-written gradients.
fn manual_meta_objective(p: &ParamSet, xa: &Tensor, ya: &[usize], xb: &Tensor, yb: &[usize], alpha: f64, beta: f64) -> f64 {
    let (f, gf) = tanh_net_manual(p, xa, ya);
    let shifted = p.axpy(-alpha, &gf).unwrap();
    let (g, _) = tanh_net_manual(&shifted, xb, yb);
    f + beta * g
}

#[test]
fn mldg_exact_gradient_matches_finite_differences() {
    let (p, xa, ya, xb, yb) = tanh_toy(31);
    let cfg = MldgConfig {
        alpha: 0.01,
        beta: 1.0,
        ..MldgConfig::default()
    };
    let (value, g) = mldg_meta_gradient_with(
        &p,
        &[true; 4],
        &cfg,
        |tape, v| tanh_net_loss(tape, v, &xa, &ya),
        |tape, v| tanh_net_loss(tape, v, &xb, &yb),
    )
    .unwrap();
    let direct = manual_meta_objective(&p, &xa, &ya, &xb, &yb, 0.01, 1.0);
    assert!((value - direct).abs() < 1e-12);
    let flat = p.flatten();
    let fd = central_diff(&flat, 1e-4, |x| {
        manual_meta_objective(&p.unflatten(x).unwrap(), &xa, &ya, &xb, &yb, 0.01, 1.0)
    });
    let worst = g
        .flatten()
        .iter()
        .zip(&fd)
        .map(|(&a, &b)| rel_err(a, b, 1e-4))
        .fold(0.0, f64::max);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn mldg_first_order_drops_the_hessian_term() {
    let (p, xa, ya, xb, yb) = tanh_toy(32);
    let cfg = MldgConfig {
        alpha: 0.05,
        beta: 0.5,
        mode: GradientMode::FirstOrder,
        ..MldgConfig::default()
    };
    let (_, g) = mldg_meta_gradient_with(
        &p,
        &[true; 4],
        &cfg,
        |tape, v| tanh_net_loss(tape, v, &xa, &ya),
        |tape, v| tanh_net_loss(tape, v, &xb, &yb),
    )
    .unwrap();
    let (_, gf) = tanh_net_manual(&p, &xa, &ya);
    let (_, gg) = tanh_net_manual(&p.axpy(-0.05, &gf).unwrap(), &xb, &yb);
    let expected = gf.axpy(0.5, &gg).unwrap();
    for (a, b) in g.flatten().iter().zip(expected.flatten()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn mldg_with_zero_beta_is_the_meta_train_gradient() {
    let (p, xa, ya, xb, yb) = tanh_toy(33);
    let cfg = MldgConfig {
        beta: 0.0,
        ..MldgConfig::default()
    };
    let (v, g) = mldg_meta_gradient_with(
        &p,
        &[true; 4],
        &cfg,
        |tape, v| tanh_net_loss(tape, v, &xa, &ya),
        |tape, v| tanh_net_loss(tape, v, &xb, &yb),
    )
    .unwrap();
    let (v0, g0) = gradient(&p, |tape, v| tanh_net_loss(tape, v, &xa, &ya)).unwrap();
    assert_eq!(v.to_bits(), v0.to_bits());
    assert!(g.bit_eq(&g0));
}

#[test]
fn mldg_without_meta_test_weight_follows_the_baseline_trajectory() {
    let ds = blobs(4, 15, 3, 5, 6);
    let sc = make_scenario(&ds, "d3", 5).unwrap();
    let cfg = toy_config(500);
    let model = toy_model(5, 3, HeadMode::Trainable, Activation::Relu);
    let mldg = MldgConfig {
        alpha: 0.05,
        beta: 0.0,
        gamma: cfg.lr,
        constant_gamma: false,
        mode: GradientMode::Exact,
    };
    let a = train_mldg(model.clone(), &sc, &cfg, &mldg).unwrap();
    let b = train_sgd(model, &sc, &cfg, Sampling::MetaTrainOnly).unwrap();
    assert_eq!(a.curve.len(), 500);
    assert!(a.curve.iter().zip(&b.curve).all(|(x, y)| x.loss.to_bits() == y.loss.to_bits()));
    assert!(a.last.param_set().bit_eq(&b.last.param_set()));
}

#[test]
fn mldg_respects_a_fixed_head() {
    let ds = blobs(3, 15, 3, 5, 7);
    let sc = make_scenario(&ds, "d0", 5).unwrap();
    let model = toy_model(5, 3, HeadMode::FixedOrthogonal, Activation::Tanh);
    let init = model.head.to_bytes();
    let out = train_mldg(model, &sc, &toy_config(100), &MldgConfig::with_rate(0.02)).unwrap();
    assert_eq!(out.last.head.to_bytes(), init);
}

// MetaReg

fn joint(psi: &ParamSet, theta: &ParamSet) -> ParamSet {
    ParamSet::new(psi.iter().chain(theta.iter()).map(|(n, t)| (n.to_string(), t.clone()))).unwrap()
}

fn toy_batches(ds: &MultiDomainDataset, seed: u64) -> Vec<Batch> {
    let mut r = rng(seed);
    ds.domains()
        .iter()
        .map(|d| {
            let picks: Vec<&Example> = (0..8).map(|_| &d.examples[r.random_range(0..d.examples.len())]).collect();
            stack(&picks).unwrap()
        })
        .collect()
}

#[test]
fn one_domain_phase1_step_is_one_plain_baseline_step() {
    let ds = blobs(1, 10, 3, 5, 8);
    let model = toy_model(5, 3, HeadMode::Trainable, Activation::Relu);
    let all = model.param_set();
    let (mut psi, theta) = split_task(&all).unwrap();
    let mut thetas = vec![theta];
    let batches = toy_batches(&ds, 1);
    metareg_phase1_step(&mut psi, &mut thetas, &batches, Activation::Relu, 0.03).unwrap();

    let mut expected = all.clone();
    let (_, g) = gradient(&all, |tape, v| batch_loss(tape, Activation::Relu, v, &batches[0])).unwrap();
    let plain = TrainConfig {
        lr: 0.03,
        momentum: 0.0,
        weight_decay: 0.0,
        ..TrainConfig::desk()
    };
    sgd_step(&mut expected, &g, &mut SgdState::new(&all), &plain, &[true; 6]).unwrap();
    assert!(joint(&psi, &thetas[0]).bit_eq(&expected));
}

#[test]
fn phase1_updates_shared_parameters_sequentially() {
    let ds = blobs(2, 10, 3, 5, 9);
    let model = toy_model(5, 3, HeadMode::Trainable, Activation::Tanh);
    let (psi0, theta0) = split_task(&model.param_set()).unwrap();
    let mut r = rng(4);
    let theta1 = theta0.map(|v| v + r.random_range(-0.1..0.1));
    let batches = toy_batches(&ds, 2);
    let (mut psi, mut thetas) = (psi0.clone(), vec![theta0.clone(), theta1.clone()]);
    metareg_phase1_step(&mut psi, &mut thetas, &batches, Activation::Tanh, 0.05).unwrap();

    // domain 0, then domain 1 starting from the updated shared parameters
    let k = psi0.len();
    let step = |p: &ParamSet, b: &Batch| {
        let (_, g) = gradient(p, |tape, v| batch_loss(tape, Activation::Tanh, v, b)).unwrap();
        p.zip_map(&g, |x, dx| x - 0.05 * dx).unwrap()
    };
    let first = step(&joint(&psi0, &theta0), &batches[0]);
    let psi_mid = ParamSet::new(first.iter().take(k).map(|(n, t)| (n.to_string(), t.clone()))).unwrap();
    let second = step(&joint(&psi_mid, &theta1), &batches[1]);
    assert!(joint(&psi, &thetas[1]).bit_eq(&second));
    let theta0_new = ParamSet::new(first.iter().skip(k).map(|(n, t)| (n.to_string(), t.clone()))).unwrap();
    assert!(thetas[0].bit_eq(&theta0_new));
}

/// Four inputs at the origin, one per class, with zero weights: the
/// cross-entropy gradient vanishes exactly.
fn zero_gradient_setup() -> (ParamSet, ParamSet, Batch) {
    let model = Model::init(
        FeatureNetSpec {
            widths: vec![3, 5, 6],
            activation: Activation::Tanh,
            seed: 1,
        },
        4,
        HeadMode::Trainable,
        1,
    )
    .unwrap();
    let (psi, task) = split_task(&model.param_set()).unwrap();
    let task = task.map(|_| 0.0);
    let batch = Batch {
        features: Tensor::zeros(&[4, 3]),
        labels: vec![0, 1, 2, 3],
    };
    (psi, task, batch)
}

#[test]
fn zero_gradients_leave_phase1_and_phi_unchanged() {
    let (psi, task, batch) = zero_gradient_setup();
    let (mut p, mut t) = (psi.clone(), vec![task.clone()]);
    metareg_phase1_step(&mut p, &mut t, &[batch.clone()], Activation::Tanh, 0.1).unwrap();
    assert!(p.bit_eq(&psi) && t[0].bit_eq(&task));

    let mut r = rng(3);
    let theta = task.map(|_| r.random_range(-0.5..0.5));
    let phi = task.map(|_| 0.01);
    let mut un = metareg_inner_unroll(&theta, &phi, &psi, &[batch.clone()], Activation::Tanh, 0.1, GradientMode::Exact).unwrap();
    let updated = metareg_meta_update(&phi, &batch, &psi, &task, Activation::Tanh, &mut un.sensitivity, 0.1).unwrap();
    assert!(updated.bit_eq(&phi));
}

#[test]
fn zero_inner_steps_are_rejected() {
    let (psi, task, _) = zero_gradient_setup();
    let phi = task.map(|_| 0.0);
    let r = metareg_inner_unroll(&task, &phi, &psi, &[], Activation::Tanh, 0.1, GradientMode::Exact);
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn one_step_unroll_without_regularizer_is_plain_sgd() {
    let (p, xa, ya, _, _) = tanh_toy(40);
    let phi = p.map(|_| 0.0);
    let empty = ParamSet::new(Vec::<(String, Tensor)>::new()).unwrap();
    let batch = Batch {
        features: xa.clone(),
        labels: ya.clone(),
    };
    for mode in [GradientMode::Exact, GradientMode::FirstOrder] {
        let mut un = metareg_inner_unroll(&p, &phi, &empty, &[batch.clone()], Activation::Tanh, 0.2, mode).unwrap();
        let (_, g) = tanh_net_manual(&p, &xa, &ya);
        let expected = p.axpy(-0.2, &g).unwrap();
        for (a, b) in un.beta.flatten().iter().zip(expected.flatten()) {
            assert!((a - b).abs() < 1e-14);
        }
        let j = un.sensitivity.to_dense().unwrap();
        let flat = p.flatten();
        for (i, row) in j.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                let expected = if i == k { -0.2 * flat[i].signum() } else { 0.0 };
                assert!((v - expected).abs() < 1e-15, "J[{i}][{k}] = {v}");
            }
        }
    }
}

/// Scalar losses `L_i(b) = a_i/2 (b - c_i)^2`.
fn scalar_unroll(theta: f64, phi: f64, alpha: f64, a: &[f64], c: &[f64], mode: GradientMode) -> Unroll {
    let (a, c) = (a.to_vec(), c.to_vec());
    metareg_inner_unroll_with(&scalar_set(theta), &scalar_set(phi), a.len(), alpha, mode, move |tape, beta, i| {
        let ci = tape.constant(Tensor::vector(vec![c[i]]));
        let d = tape.sub(beta[0], ci)?;
        let sq = tape.dot(d, d)?;
        tape.scale(sq, a[i] / 2.0)
    })
    .unwrap()
}

#[test]
fn two_step_scalar_sensitivity_follows_the_hand_recursion() {
    let (alpha, phi) = (0.1, 0.3);
    let (a, c) = ([2.0, 0.5], [-1.0, 4.0]);
    let theta = 0.7;
    let mut un = scalar_unroll(theta, phi, alpha, &a, &c, GradientMode::Exact);
    let s0 = 1.0;
    let b1 = theta - alpha * (a[0] * (theta - c[0]) + phi * s0);
    let s1 = b1.signum();
    let b2 = b1 - alpha * (a[1] * (b1 - c[1]) + phi * s1);
    let j1 = -alpha * s0;
    let j2 = (1.0 - alpha * a[1]) * j1 - alpha * s1;
    assert!((un.beta.flatten()[0] - b2).abs() < 1e-15);
    assert!((un.sensitivity.to_dense().unwrap()[0][0] - j2).abs() < 1e-15);
    let mut fo = scalar_unroll(theta, phi, alpha, &a, &c, GradientMode::FirstOrder);
    assert!((fo.sensitivity.to_dense().unwrap()[0][0] + alpha * (s0 + s1)).abs() < 1e-15);

    // one regularizer update against L_b(b) = (b - 2)^2 / 2
    let grad_b = un.beta.flatten()[0] - 2.0;
    let updated = un.sensitivity.apply_transpose(&scalar_set(grad_b)).unwrap();
    let phi_new = phi - alpha * updated.flatten()[0];
    assert!((phi_new - (phi - alpha * j2 * (b2 - 2.0))).abs() < 1e-15);
}

#[test]
fn unrolled_sensitivity_matches_finite_differences() {
    let (p, _, _, xb, yb) = tanh_toy(41);
    let mut r = rng(42);
    let inner: Vec<Batch> = (0..3)
        .map(|_| Batch {
            features: random_tensor(&mut r, &[32, 8], 1.0),
            labels: random_labels(&mut r, 32, 4),
        })
        .collect();
    let phi = p.map(|_| r.random_range(0.0..0.05));
    let alpha = 0.1;
    let empty = ParamSet::new(Vec::<(String, Tensor)>::new()).unwrap();
    let meta_test = Batch {
        features: xb.clone(),
        labels: yb.clone(),
    };
    let mut un = metareg_inner_unroll(&p, &phi, &empty, &inner, Activation::Tanh, alpha, GradientMode::Exact).unwrap();
    let (_, gb) = tanh_net_manual(&un.beta, &xb, &yb);
    let analytic = un.sensitivity.apply_transpose(&gb).unwrap().flatten();

    // independent unroll with hand-written gradients
    let unroll = |phi_flat: &[f64]| {
        let phi = p.unflatten(phi_flat).unwrap();
        let mut beta = p.clone();
        for b in &inner {
            let (_, g) = tanh_net_manual(&beta, &b.features, &b.labels);
            let reg = phi.zip_map(&beta, |f, x| f * x.signum() * f64::from(x != 0.0)).unwrap();
            beta = beta.zip_map(&g.zip_map(&reg, |x, y| x + y).unwrap(), |x, d| x - alpha * d).unwrap();
        }
        tanh_net_manual(&beta, &meta_test.features, &meta_test.labels).0
    };
    let fd = central_diff(&phi.flatten(), 1e-5, unroll);

    let mut near_zero = vec![false; p.num_scalars()];
    for it in un.path.iter().chain(std::iter::once(&un.beta)) {
        for (flag, v) in near_zero.iter_mut().zip(it.flatten()) {
            *flag |= v.abs() < 1e-3;
        }
    }
    let mut checked = 0;
    let mut worst = 0.0f64;
    for (i, (&a, &b)) in analytic.iter().zip(&fd).enumerate() {
        if near_zero[i] {
            continue;
        }
        checked += 1;
        worst = worst.max(rel_err(a, b, 1e-8));
    }
    assert!(checked > p.num_scalars() * 9 / 10);
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn zero_regularizer_final_training_is_the_baseline() {
    let ds = blobs(3, 15, 3, 5, 10);
    let sc = make_scenario(&ds, "d1", 6).unwrap();
    let model = toy_model(5, 3, HeadMode::Trainable, Activation::Relu);
    let (_, task) = split_task(&model.param_set()).unwrap();
    let cfg = toy_config(500);
    let a = metareg_final_train(model.clone(), &sc, &cfg, &task.map(|_| 0.0)).unwrap();
    let b = train_baseline(model, &sc, &cfg).unwrap();
    assert!(a.curve.iter().zip(&b.curve).all(|(x, y)| x.loss.to_bits() == y.loss.to_bits()));
    assert!(a.last.param_set().bit_eq(&b.last.param_set()));
}

#[test]
fn large_regularizer_shrinks_the_task_network() {
    let ds = blobs(3, 15, 3, 5, 11);
    let sc = make_scenario(&ds, "d1", 7).unwrap();
    let model = toy_model(5, 3, HeadMode::Trainable, Activation::Relu);
    let (_, task) = split_task(&model.param_set()).unwrap();
    // subgradient steps chatter around zero with amplitude about lr phi / (1 - momentum)
    let cfg = TrainConfig {
        weight_decay: 0.0,
        lr: 0.002,
        ..toy_config(1000)
    };
    let free = metareg_final_train(model.clone(), &sc, &cfg, &task.map(|_| 0.0)).unwrap();
    let shrunk = metareg_final_train(model, &sc, &cfg, &task.map(|_| 1.0)).unwrap();
    let norm = |m: &Model| split_task(&m.param_set()).unwrap().1.norm();
    let (a, b) = (norm(&free.last), norm(&shrunk.last));
    assert!(b < 0.1 * a, "{b} vs {a}");
}

#[test]
fn metareg_runs_end_to_end() {
    let ds = blobs(3, 20, 3, 5, 12);
    let sc = make_scenario(&ds, "d2", 8).unwrap();
    let model = toy_model(5, 3, HeadMode::Trainable, Activation::Relu);
    let cfg = MetaRegConfig {
        phase1_iterations: 20,
        meta_iterations: 20,
        ..MetaRegConfig::with_rate(0.02)
    };
    let out = train_metareg(model.clone(), &sc, &toy_config(200), &cfg).unwrap();
    assert_eq!(out.meta_losses.len(), 20);
    assert!(out.meta_losses.iter().all(|l| l.is_finite()));
    assert!(out.phi.flatten().iter().any(|&p| p != cfg.phi_init));
    let again = train_metareg(model, &sc, &toy_config(200), &cfg).unwrap();
    assert!(again.phi.bit_eq(&out.phi));
    assert_eq!(sc.held_out_requests(), 0);
}
