use super::*;

fn tiny_spec(op: Option<OperatorConfig>, batchnorm: bool) -> NetworkSpec {
    let opts = PresetOptions {
        op,
        batchnorm,
        rescale: None,
        widths: Some([3, 4, 4]),
        fc: Some(6),
    };
    preset("mini", [2, 8, 8], 3, &opts).unwrap()
}

fn batch(n: usize, shape: &[usize], seed: u64) -> (Vec<Tensor>, Vec<usize>) {
    let mut rng = Rng::new(seed);
    let xs = (0..n).map(|_| Tensor::from_fn(shape, |_| rng.normal())).collect();
    let ys = (0..n).map(|i| i % 3).collect();
    (xs, ys)
}

#[test]
fn preset_layouts() {
    let spec = preset("cnn-9", [3, 32, 32], 10, &PresetOptions::default()).unwrap();
    let convs = spec
        .layers
        .iter()
        .filter(|l| matches!(l, LayerSpec::SphereConv { .. }))
        .count();
    assert_eq!(convs, 9);
    let shapes = spec.check_shapes().unwrap();
    assert_eq!(shapes.last().unwrap(), &vec![256, 1, 1]);
    // three 2x2 pools: 32 -> 4
    let pooled: Vec<_> = spec
        .layers
        .iter()
        .zip(&shapes)
        .filter(|(l, _)| matches!(l, LayerSpec::MaxPool {}))
        .map(|(_, s)| s.clone())
        .collect();
    assert_eq!(pooled, vec![vec![64, 16, 16], vec![96, 8, 8], vec![128, 4, 4]]);

    for (name, n) in [("cnn-3", 3), ("cnn-18", 18), ("cnn-45", 45), ("cnn-60", 60), ("cnn-69", 69)] {
        let s = preset(name, [3, 32, 32], 10, &PresetOptions { op: None, ..Default::default() }).unwrap();
        let convs = s.layers.iter().filter(|l| matches!(l, LayerSpec::Conv { .. })).count();
        assert_eq!(convs, n, "{name}");
    }
    assert!(matches!(
        preset("cnn-7", [3, 32, 32], 10, &PresetOptions::default()),
        Err(Error::Config(_))
    ));
    // 4x4 inputs cannot survive three pools
    assert!(preset("mini", [1, 4, 4], 10, &PresetOptions::default()).is_err());
}

#[test]
fn batchnorm_sits_between_conv_and_relu() {
    let spec = tiny_spec(Some(OperatorConfig::Cosine {}), true);
    let kinds: Vec<_> = spec.layers.iter().take(4).map(|l| format!("{l:?}")).collect();
    assert!(kinds[0].starts_with("SphereConv"));
    assert!(kinds[1].starts_with("BatchNorm"));
    assert!(kinds[2].starts_with("Relu"));
    assert!(kinds[3].starts_with("MaxPool"));
}

#[test]
fn baseline_twin_swaps_only_sphere_layers() {
    let spec = tiny_spec(Some(OperatorConfig::Sigmoid { k: 0.3 }), true);
    let twin = spec.baseline_twin();
    assert_eq!(twin.layers.len(), spec.layers.len());
    assert_eq!(twin.check_shapes().unwrap(), spec.check_shapes().unwrap());
    assert!(twin
        .layers
        .iter()
        .all(|l| !matches!(l, LayerSpec::SphereConv { .. } | LayerSpec::SphereFc { .. })));
    let plain = tiny_spec(None, true);
    assert_eq!(twin.layers, plain.layers);
}

#[test]
fn spec_round_trips_through_toml() {
    let spec = tiny_spec(Some(OperatorConfig::Learnable { k0: 0.5, shared: false }), true);
    let text = toml::to_string(&spec).unwrap();
    let back: NetworkSpec = toml::from_str(&text).unwrap();
    assert_eq!(back, spec);
    let err = toml::from_str::<NetworkSpec>(&format!("bogus = 1\n{text}"));
    assert!(err.is_err());
}

#[test]
fn operator_config_defaults() {
    let c: OperatorConfig = toml::from_str("kind = \"linear\"").unwrap();
    assert_eq!(c.build(4).unwrap(), AngularOperator::linear());
    let c: OperatorConfig = toml::from_str("kind = \"learnable\"").unwrap();
    assert_eq!(c.build(4).unwrap().k_values().unwrap(), &[0.5; 4]);
    let c: OperatorConfig = toml::from_str("kind = \"learnable\"\nshared = true").unwrap();
    assert_eq!(c.build(4).unwrap().k_values().unwrap().len(), 1);
    assert!(OperatorConfig::Sigmoid { k: 0.0 }.build(1).is_err());
}

#[test]
fn param_registry_is_consistent() {
    let spec = tiny_spec(Some(OperatorConfig::Learnable { k0: 0.5, shared: false }), true);
    let model = Model::build(&spec, LossSpec::Softmax, &mut Rng::new(1)).unwrap();
    let infos = model.param_infos();
    let values = model.param_values();
    assert_eq!(infos.len(), values.len());
    for (i, v) in infos.iter().zip(&values) {
        assert_eq!(i.len(), v.len(), "{}", i.label());
    }
    assert_eq!(infos.last().unwrap().role, ParamRole::HeadWeight);
    assert_eq!(infos.last().unwrap().shape, vec![3, 6]);
    let ks = infos.iter().filter(|i| i.role == ParamRole::CurvatureK).count();
    assert_eq!(ks, 4);
    let (xs, ys) = batch(4, &[2, 8, 8], 2);
    let ev = model
        .evaluate(&xs, &ys, Mode::Train, &Regularization::default())
        .unwrap();
    assert_eq!(ev.grads.len(), infos.len());
    for (i, g) in infos.iter().zip(&ev.grads) {
        assert_eq!(i.len(), g.len(), "{}", i.label());
    }
}

#[test]
fn builds_are_seed_deterministic() {
    let spec = tiny_spec(Some(OperatorConfig::Cosine {}), false);
    let a = Model::build(&spec, LossSpec::Softmax, &mut Rng::new(5)).unwrap();
    let b = Model::build(&spec, LossSpec::Softmax, &mut Rng::new(5)).unwrap();
    let c = Model::build(&spec, LossSpec::Softmax, &mut Rng::new(6)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn zero_penalty_is_exactly_the_data_loss() {
    let spec = tiny_spec(Some(OperatorConfig::Cosine {}), false);
    let model = Model::build(&spec, LossSpec::WSoftmax { g: AngularOperator::Cosine }, &mut Rng::new(3)).unwrap();
    let (xs, ys) = batch(5, &[2, 8, 8], 4);
    let ev = model
        .evaluate(&xs, &ys, Mode::Eval, &Regularization::default())
        .unwrap();
    assert_eq!(ev.penalty, 0.0);
    assert_eq!(ev.loss, ev.data_loss);
    let l = model.loss(&xs, &ys, Mode::Eval, &Regularization::default()).unwrap();
    assert_eq!(l, ev.loss);
    let reg = Regularization { lambda_orth: 1e-2, orth_head: false };
    let ev2 = model.evaluate(&xs, &ys, Mode::Eval, &reg).unwrap();
    assert!(ev2.penalty > 0.0);
    assert_eq!(ev2.data_loss, ev.data_loss);
}

#[test]
fn hidden_kernel_scaling_leaves_sphere_loss_unchanged() {
    let spec = tiny_spec(Some(OperatorConfig::Sigmoid { k: 0.3 }), false);
    let loss = LossSpec::WSoftmax { g: AngularOperator::Cosine };
    let model = Model::build(&spec, loss, &mut Rng::new(8)).unwrap();
    let (xs, ys) = batch(3, &[2, 8, 8], 9);
    let reg = Regularization::default();
    let base = model.loss(&xs, &ys, Mode::Eval, &reg).unwrap();
    for c in [1e-3, 0.25, 4.0, 1e3] {
        let mut m = model.clone();
        m.scale_hidden_kernels(c);
        let l = m.loss(&xs, &ys, Mode::Eval, &reg).unwrap();
        assert!((l - base).abs() <= 1e-9, "c = {c}: {l} vs {base}");
    }
}

#[test]
fn batch_checks() {
    let spec = tiny_spec(None, false);
    let model = Model::build(&spec, LossSpec::Softmax, &mut Rng::new(1)).unwrap();
    let reg = Regularization::default();
    let (xs, ys) = batch(2, &[2, 8, 8], 1);
    assert!(model.evaluate(&[], &[], Mode::Eval, &reg).is_err());
    assert!(model.evaluate(&xs, &ys[..1], Mode::Eval, &reg).is_err());
    assert!(matches!(
        model.evaluate(&xs, &[0, 3], Mode::Eval, &reg),
        Err(Error::LabelOutOfRange { label: 3, classes: 3 })
    ));
    let (bad, _) = batch(2, &[2, 8, 7], 1);
    assert!(matches!(model.evaluate(&bad, &ys, Mode::Eval, &reg), Err(Error::Shape(_))));
    assert_eq!(model.predict(&xs).unwrap().len(), 2);
}

#[test]
fn commit_updates_running_stats_only_in_train_mode() {
    let spec = tiny_spec(Some(OperatorConfig::Cosine {}), true);
    let mut model = Model::build(&spec, LossSpec::Softmax, &mut Rng::new(1)).unwrap();
    let (xs, ys) = batch(4, &[2, 8, 8], 1);
    let reg = Regularization::default();
    let before = model.clone();
    let ev = model.evaluate(&xs, &ys, Mode::Eval, &reg).unwrap();
    model.commit(&ev);
    assert_eq!(model, before);
    let ev = model.evaluate(&xs, &ys, Mode::Train, &reg).unwrap();
    model.commit(&ev);
    assert_ne!(model, before);
}

#[test]
fn from_parts_checks_head_width() {
    let spec = tiny_spec(None, false);
    let model = Model::build(&spec, LossSpec::Softmax, &mut Rng::new(1)).unwrap();
    let bad_head = ClassifierHead::init(3, 7, false, &mut Rng::new(0));
    assert!(Model::from_parts(
        model.name.clone(),
        model.input_shape.clone(),
        model.layers.clone(),
        bad_head,
        LossSpec::Softmax
    )
    .is_err());
    let ok = Model::from_parts(
        model.name.clone(),
        model.input_shape.clone(),
        model.layers.clone(),
        model.head.clone(),
        LossSpec::Softmax,
    )
    .unwrap();
    assert_eq!(ok, model);
}
