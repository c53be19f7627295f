use super::*;
use crate::angular::AngularOperator;
use crate::losses::LossSpec;
use crate::network::{preset, NetworkSpec, OperatorConfig, PresetOptions, RescaleConfig};
use crate::rng::Rng;

fn mini(op: Option<OperatorConfig>, input: [usize; 3], classes: usize) -> NetworkSpec {
    preset(
        "mini",
        input,
        classes,
        &PresetOptions {
            op,
            ..Default::default()
        },
    )
    .unwrap()
}

fn batch(n: usize, shape: &[usize], classes: usize, seed: u64) -> (Vec<Tensor>, Vec<usize>) {
    let mut rng = Rng::new(seed);
    let xs = (0..n).map(|_| Tensor::from_fn(shape, |_| rng.normal())).collect();
    let ys = (0..n).map(|_| rng.below(classes)).collect();
    (xs, ys)
}

#[test]
fn schedule_examples() {
    let s = Schedule {
        base_lr: 0.001,
        boundaries: vec![34_000, 54_000],
        divisor: 10.0,
    };
    assert_eq!(lr_at(&s, 0), 0.001);
    assert!((lr_at(&s, 40_000) - 1e-4).abs() <= 1e-18);
    assert!((lr_at(&s, 60_000) - 1e-5).abs() <= 1e-18);
    assert_eq!(lr_at(&s, 33_999), 0.001);
    assert_eq!(lr_at(&s, 34_000), lr_at(&s, 40_000));
    s.validate(64_000).unwrap();
    assert!(s.validate(54_000).is_err());
    let bad = Schedule {
        boundaries: vec![5, 5],
        ..s.clone()
    };
    assert!(bad.validate(10).is_err());
}

#[test]
fn adam_first_step_moves_by_lr() {
    // bias correction makes the first step lr * sign(g), up to eps
    let mut p = vec![1.0, -2.0, 0.5];
    let g = vec![0.3, -7.0, 1e-3];
    let (mut m, mut v) = (vec![0.0; 3], vec![0.0; 3]);
    adam_update(&mut p, &g, &mut m, &mut v, 1, 0.01);
    let expect = [0.99, -1.99, 0.49];
    for (a, b) in p.iter().zip(expect) {
        assert!((a - b).abs() <= 1e-7, "{a} vs {b}");
    }
}

#[test]
fn sgd_momentum_accumulates() {
    let mut p = vec![0.0];
    let mut vel = vec![0.0];
    sgd_update(&mut p, &[1.0], &mut vel, 0.9, 0.1);
    sgd_update(&mut p, &[1.0], &mut vel, 0.9, 0.1);
    assert!((vel[0] - 1.9).abs() <= 1e-15);
    assert!((p[0] + 0.29).abs() <= 1e-15);
}

#[test]
fn replaying_gradients_reproduces_the_trajectory() {
    let spec = mini(Some(OperatorConfig::Cosine {}), [1, 8, 8], 3);
    let model = Model::build(&spec, LossSpec::Softmax, &mut Rng::new(1)).unwrap();
    let mut rng = Rng::new(2);
    let stream: Vec<Vec<Vec<f64>>> = (0..5)
        .map(|_| {
            model
                .param_infos()
                .iter()
                .map(|i| (0..i.len()).map(|_| rng.normal()).collect())
                .collect()
        })
        .collect();
    for cfg in [OptimizerConfig::Adam {}, OptimizerConfig::Sgd { momentum: 0.9 }] {
        let run = || {
            let mut m = model.clone();
            let mut opt = OptimizerState::new(cfg, &m);
            for g in &stream {
                opt.apply(&mut m, g, 1e-3).unwrap();
            }
            m.param_values()
        };
        let (a, b) = (run(), run());
        let bits = |v: &Vec<Vec<f64>>| v.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let spec = mini(Some(OperatorConfig::Sigmoid { k: 0.3 }), [1, 8, 8], 3);
    let mut model = Model::build(&spec, LossSpec::Softmax, &mut Rng::new(4)).unwrap();
    let (xs, ys) = batch(4, &[1, 8, 8], 3, 5);
    let before = model.param_values();
    let mut opt = OptimizerState::new(OptimizerConfig::Adam {}, &model);
    let cfg = StepConfig::default();
    let a = train_step(&mut model, &xs, &ys, &mut opt, 0.0, &cfg, 0).unwrap();
    assert_eq!(model.param_values(), before);
    let b = train_step(&mut model, &xs, &ys, &mut opt, 0.0, &cfg, 1).unwrap();
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());
}

fn memorize(op: Option<OperatorConfig>, steps: usize) -> f64 {
    let spec = mini(op, [3, 16, 16], 10);
    let mut model = Model::build(&spec, LossSpec::Softmax, &mut Rng::new(6)).unwrap();
    let (xs, ys) = batch(1, &[3, 16, 16], 10, 7);
    let mut opt = OptimizerState::new(OptimizerConfig::Adam {}, &model);
    let cfg = StepConfig::default();
    for it in 0..steps {
        train_step(&mut model, &xs, &ys, &mut opt, 1e-3, &cfg, it).unwrap();
    }
    model.loss(&xs, &ys, Mode::Train, &cfg.reg).unwrap()
}

#[test]
fn memorizes_one_sample() {
    let l = memorize(None, 200);
    assert!(l < 0.01, "loss after 200 steps: {l}");
}

#[test]
fn sphere_network_memorizes_one_sample() {
    // bounded features give the plain softmax head smaller logits, so the
    // sphere network needs more steps to reach the same loss
    let l = memorize(Some(OperatorConfig::Cosine {}), 400);
    assert!(l < 0.01, "loss after 400 steps: {l}");
}

#[test]
fn seeded_runs_repeat_exactly() {
    let run = || {
        let spec = mini(Some(OperatorConfig::Learnable { k0: 0.5, shared: false }), [1, 8, 8], 3);
        let mut rng = Rng::new(42);
        let mut model = Model::build(&spec, LossSpec::WSoftmax { g: AngularOperator::Cosine }, &mut rng).unwrap();
        let mut opt = OptimizerState::new(OptimizerConfig::Adam {}, &model);
        let cfg = StepConfig::default();
        (0..10)
            .map(|it| {
                let (xs, ys) = batch(4, &[1, 8, 8], 3, rng.next_u64());
                train_step(&mut model, &xs, &ys, &mut opt, 1e-2, &cfg, it)
                    .unwrap()
                    .loss
                    .to_bits()
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn curvature_is_clamped_after_updates() {
    let spec = mini(Some(OperatorConfig::Learnable { k0: 0.5, shared: false }), [1, 8, 8], 3);
    let mut model = Model::build(&spec, LossSpec::Softmax, &mut Rng::new(1)).unwrap();
    let (xs, ys) = batch(4, &[1, 8, 8], 3, 2);
    let mut opt = OptimizerState::new(OptimizerConfig::Sgd { momentum: 0.0 }, &model);
    let cfg = StepConfig {
        k_min: 0.2,
        ..Default::default()
    };
    // a huge step throws k far off in both directions
    train_step(&mut model, &xs, &ys, &mut opt, 1e4, &cfg, 0).unwrap();
    for (_, ks) in model.learnable_k() {
        assert!(ks.iter().all(|&k| k >= 0.2));
    }
}

#[test]
fn non_finite_loss_reports_the_iteration() {
    let spec = mini(None, [1, 8, 8], 3);
    let mut model = Model::build(&spec, LossSpec::Softmax, &mut Rng::new(1)).unwrap();
    let (xs, ys) = batch(2, &[1, 8, 8], 3, 2);
    model.visit_params_mut(&mut |_, role, p| {
        if role == ParamRole::HeadWeight {
            p[0] = f64::NAN;
        }
    });
    let mut opt = OptimizerState::new(OptimizerConfig::Adam {}, &model);
    let r = train_step(&mut model, &xs, &ys, &mut opt, 1e-3, &StepConfig::default(), 17);
    assert!(matches!(r, Err(Error::Divergence { iteration: 17 })), "{r:?}");
}

#[test]
fn baseline_network_gradcheck() {
    let spec = mini(None, [2, 8, 8], 4);
    let model = Model::build(&spec, LossSpec::Softmax, &mut Rng::new(3)).unwrap();
    let (xs, ys) = batch(3, &[2, 8, 8], 4, 4);
    let r = gradient_check(&model, &xs, &ys, &Regularization::default(), &GradCheckOptions::default()).unwrap();
    assert!(r.passes(1e-4), "{r:?}");
}

fn sphere_gradcheck(batchnorm: bool, rescale: Option<RescaleConfig>, seed: u64) -> GradCheckReport {
    let opts = PresetOptions {
        op: Some(OperatorConfig::Sigmoid { k: 0.3 }),
        batchnorm,
        rescale,
        ..Default::default()
    };
    let spec = preset("mini", [3, 8, 8], 5, &opts).unwrap();
    let loss = LossSpec::GaSoftmax {
        g: AngularOperator::sigmoid(0.3).unwrap(),
        m: 4,
    };
    let model = Model::build(&spec, loss, &mut Rng::new(seed)).unwrap();
    let (xs, ys) = batch(3, &[3, 8, 8], 5, seed + 1);
    let reg = Regularization {
        lambda_orth: 1e-4,
        orth_head: true,
    };
    gradient_check(&model, &xs, &ys, &reg, &GradCheckOptions::default()).unwrap()
}

#[test]
fn sphere_network_gradcheck() {
    let r = sphere_gradcheck(false, Some(RescaleConfig::Learned), 8);
    assert!(r.passes(1e-4), "{r:?}");
}

#[test]
fn sphere_batchnorm_network_gradcheck() {
    let r = sphere_gradcheck(true, None, 8);
    assert!(r.passes(1e-4), "{r:?}");
}

#[test]
fn corrupted_gradient_is_flagged() {
    let spec = mini(Some(OperatorConfig::Cosine {}), [1, 8, 8], 3);
    let model = Model::build(&spec, LossSpec::Softmax, &mut Rng::new(3)).unwrap();
    let (xs, ys) = batch(2, &[1, 8, 8], 3, 4);
    let reg = Regularization::default();
    let mut grads = model.evaluate(&xs, &ys, Mode::Train, &reg).unwrap().grads;
    let last = grads.len() - 1;
    let (idx, _) = grads[last]
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .unwrap();
    grads[last][idx] *= 2.0;
    let opts = GradCheckOptions {
        per_block: usize::MAX,
        ..Default::default()
    };
    let r = gradient_check_with(&model, &xs, &ys, &reg, &grads, &opts).unwrap();
    let w = r.worst.clone().unwrap();
    assert_eq!((w.block.as_str(), w.index), ("head_weight", idx), "{r:?}");
    assert!(!r.passes(1e-4));
}

