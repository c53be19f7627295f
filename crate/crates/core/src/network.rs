//! Declarative architectures and the assembled model.

use serde::{Deserialize, Serialize};

use crate::angular::{AngularOperator, K_INIT};
use crate::error::{Error, Result};
use crate::layers::conv::init_he;
use crate::layers::sphere::init_sphere_kernel;
use crate::layers::{
    orthogonality_penalty, BatchNorm, Conv, ConvShape, Fc, Layer, LayerCache, LinearParams, Mode,
    ParamRole, SphereConv, SphereFc, SphereParams,
};
use crate::losses::{self, argmax, ClassifierHead, LossSpec};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Config-file form of [`AngularOperator`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OperatorConfig {
    Linear {
        #[serde(default = "default_a")]
        a: f64,
        #[serde(default = "default_b")]
        b: f64,
    },
    Cosine {},
    Sigmoid {
        k: f64,
    },
    Learnable {
        #[serde(default = "default_k0")]
        k0: f64,
        /// One curvature for the whole layer instead of one per filter.
        #[serde(default)]
        shared: bool,
    },
}

fn default_a() -> f64 {
    -2.0 / std::f64::consts::PI
}
fn default_b() -> f64 {
    1.0
}
fn default_k0() -> f64 {
    K_INIT
}
fn default_true() -> bool {
    true
}
fn default_kernel() -> usize {
    3
}
fn default_one() -> usize {
    1
}

impl OperatorConfig {
    pub fn build(&self, filters: usize) -> Result<AngularOperator> {
        match *self {
            OperatorConfig::Linear { a, b } => Ok(AngularOperator::Linear { a, b }),
            OperatorConfig::Cosine {} => Ok(AngularOperator::Cosine),
            OperatorConfig::Sigmoid { k } => AngularOperator::sigmoid(k),
            OperatorConfig::Learnable { k0, shared } => {
                AngularOperator::learnable(if shared { 1 } else { filters }, k0)
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            OperatorConfig::Linear { .. } => "linear".into(),
            OperatorConfig::Cosine {} => "cosine".into(),
            OperatorConfig::Sigmoid { k } => format!("sigmoid-{k}"),
            OperatorConfig::Learnable { .. } => "learnable".into(),
        }
    }
}

/// How the β/γ rescaling after a sphere layer is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RescaleConfig {
    Learned,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LayerSpec {
    SphereConv {
        out: usize,
        #[serde(default = "default_kernel")]
        kernel: usize,
        #[serde(default = "default_one")]
        stride: usize,
        #[serde(default = "default_one")]
        pad: usize,
        op: OperatorConfig,
        #[serde(default)]
        bias: bool,
        #[serde(default)]
        rescale: Option<RescaleConfig>,
    },
    Conv {
        out: usize,
        #[serde(default = "default_kernel")]
        kernel: usize,
        #[serde(default = "default_one")]
        stride: usize,
        #[serde(default = "default_one")]
        pad: usize,
        #[serde(default = "default_true")]
        bias: bool,
    },
    SphereFc {
        out: usize,
        op: OperatorConfig,
        #[serde(default)]
        bias: bool,
        #[serde(default)]
        rescale: Option<RescaleConfig>,
    },
    Fc {
        out: usize,
        #[serde(default = "default_true")]
        bias: bool,
    },
    Relu {},
    MaxPool {},
    BatchNorm {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub name: String,
    /// `[C, H, W]` of one input sample.
    pub input: [usize; 3],
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub head_bias: bool,
}

/// Knobs for expanding a named preset.
#[derive(Debug, Clone, PartialEq)]
pub struct PresetOptions {
    /// Sphere operator for every conv/FC layer; `None` builds the
    /// dot-product network.
    pub op: Option<OperatorConfig>,
    pub batchnorm: bool,
    pub rescale: Option<RescaleConfig>,
    /// Filters per stage; defaults to the preset's own widths.
    pub widths: Option<[usize; 3]>,
    pub fc: Option<usize>,
}

impl Default for PresetOptions {
    fn default() -> Self {
        PresetOptions {
            op: Some(OperatorConfig::Cosine {}),
            batchnorm: false,
            rescale: None,
            widths: None,
            fc: None,
        }
    }
}

pub const PRESETS: &[&str] = &["mini", "cnn-3", "cnn-9", "cnn-18", "cnn-45", "cnn-60", "cnn-69"];

/// Plain VGG-style presets: three stages of 3×3 convolutions, each followed
/// by 2×2 max pooling, then one fully connected layer. Batch norm, when
/// enabled, follows the convolutions only.
pub fn preset(name: &str, input: [usize; 3], classes: usize, opts: &PresetOptions) -> Result<NetworkSpec> {
    let (depth, widths, fc) = match name {
        "mini" => (1, [8, 16, 32], 64),
        "cnn-3" => (1, [64, 96, 128], 256),
        "cnn-9" => (3, [64, 96, 128], 256),
        "cnn-18" => (6, [64, 96, 128], 256),
        "cnn-45" => (15, [64, 96, 128], 256),
        "cnn-60" => (20, [64, 96, 128], 256),
        "cnn-69" => (23, [64, 96, 128], 256),
        _ => {
            return Err(Error::Config(format!(
                "unknown architecture preset {name:?} (known: {})",
                PRESETS.join(", ")
            )))
        }
    };
    let widths = opts.widths.unwrap_or(widths);
    let fc = opts.fc.unwrap_or(fc);
    let mut layers = Vec::new();
    let unit_tail = |layers: &mut Vec<LayerSpec>| {
        if opts.batchnorm {
            layers.push(LayerSpec::BatchNorm {});
        }
        layers.push(LayerSpec::Relu {});
    };
    for &w in &widths {
        for _ in 0..depth {
            layers.push(match &opts.op {
                Some(op) => LayerSpec::SphereConv {
                    out: w,
                    kernel: 3,
                    stride: 1,
                    pad: 1,
                    op: op.clone(),
                    bias: false,
                    rescale: opts.rescale,
                },
                None => LayerSpec::Conv {
                    out: w,
                    kernel: 3,
                    stride: 1,
                    pad: 1,
                    bias: !opts.batchnorm,
                },
            });
            unit_tail(&mut layers);
        }
        layers.push(LayerSpec::MaxPool {});
    }
    layers.push(match &opts.op {
        Some(op) => LayerSpec::SphereFc {
            out: fc,
            op: op.clone(),
            bias: false,
            rescale: opts.rescale,
        },
        None => LayerSpec::Fc { out: fc, bias: true },
    });
    layers.push(LayerSpec::Relu {});
    let spec = NetworkSpec {
        name: name.to_string(),
        input,
        classes,
        layers,
        head_bias: false,
    };
    spec.check_shapes()?;
    Ok(spec)
}

impl NetworkSpec {
    /// The same architecture with every sphere layer swapped for its
    /// dot-product counterpart, without rescaling and with a bias unless
    /// batch norm follows.
    pub fn baseline_twin(&self) -> NetworkSpec {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| (l, !matches!(self.layers.get(i + 1), Some(LayerSpec::BatchNorm {}))))
            .map(|(l, bias)| match *l {
                LayerSpec::SphereConv {
                    out,
                    kernel,
                    stride,
                    pad,
                    ..
                } => LayerSpec::Conv {
                    out,
                    kernel,
                    stride,
                    pad,
                    bias,
                },
                LayerSpec::SphereFc { out, .. } => LayerSpec::Fc { out, bias },
                ref other => other.clone(),
            })
            .collect();
        NetworkSpec {
            name: format!("{}-baseline", self.name),
            layers,
            ..self.clone()
        }
    }

    /// Shapes after each layer; errors if adjacent layers do not compose.
    pub fn check_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        let mut shape = self.input.to_vec();
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            shape = spec_out_shape(l, &shape)
                .map_err(|e| Error::Config(format!("layer {i} ({l:?}): {e}")))?;
            out.push(shape.clone());
        }
        Ok(out)
    }
}

fn spec_out_shape(l: &LayerSpec, input: &[usize]) -> Result<Vec<usize>> {
    let conv = |out: usize, kernel: usize, stride: usize, pad: usize| -> Result<Vec<usize>> {
        let geo = ConvShape {
            in_channels: input[0],
            kh: kernel,
            kw: kernel,
            stride,
            pad,
        }
        .geometry(input)?;
        if out == 0 {
            return Err(Error::shape("layer needs at least one output channel"));
        }
        Ok(vec![out, geo.out_h(), geo.out_w()])
    };
    match *l {
        LayerSpec::SphereConv {
            out,
            kernel,
            stride,
            pad,
            ..
        }
        | LayerSpec::Conv {
            out,
            kernel,
            stride,
            pad,
            ..
        } => conv(out, kernel, stride, pad),
        LayerSpec::SphereFc { out, .. } | LayerSpec::Fc { out, .. } => {
            if out == 0 {
                return Err(Error::shape("layer needs at least one output"));
            }
            Ok(vec![out, 1, 1])
        }
        LayerSpec::Relu {} | LayerSpec::BatchNorm {} => Ok(input.to_vec()),
        LayerSpec::MaxPool {} => crate::layers::pool::maxpool_out_shape(input),
    }
}

/// Where a parameter block lives.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamInfo {
    /// Layer index, or `None` for the classifier head.
    pub layer: Option<usize>,
    pub role: ParamRole,
    pub shape: Vec<usize>,
}

impl ParamInfo {
    pub fn label(&self) -> String {
        match self.layer {
            Some(l) => format!("layer{l}.{}", self.role.name()),
            None => self.role.name().to_string(),
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Extra loss terms on top of the data loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularization {
    pub lambda_orth: f64,
    /// Also penalize the classifier head's class vectors.
    pub orth_head: bool,
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization {
            lambda_orth: 0.0,
            orth_head: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    pub head: ClassifierHead,
    pub loss: LossSpec,
    head_version: u64,
}

/// Result of one forward/backward pass over a batch.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Data loss plus regularization.
    pub loss: f64,
    pub data_loss: f64,
    pub penalty: f64,
    pub correct: usize,
    /// Parameter gradients in [`Model::param_infos`] order.
    pub grads: Vec<Vec<f64>>,
    pub(crate) caches: Vec<LayerCache>,
}

impl Evaluation {
    pub fn grad_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

impl Model {
    pub fn build(spec: &NetworkSpec, loss: LossSpec, rng: &mut Rng) -> Result<Model> {
        loss.validate()?;
        let shapes = spec.check_shapes()?;
        let mut shape = spec.input.to_vec();
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (l, next) in spec.layers.iter().zip(&shapes) {
            layers.push(build_layer(l, &shape, rng)?);
            shape = next.clone();
        }
        let feat: usize = shape.iter().product();
        let head = ClassifierHead::init(spec.classes, feat, spec.head_bias, rng);
        Ok(Model {
            name: spec.name.clone(),
            input_shape: spec.input.to_vec(),
            layers,
            head,
            loss,
            head_version: 0,
        })
    }

    /// Assembles a model from parts, checking that the shapes compose.
    pub fn from_parts(
        name: String,
        input_shape: Vec<usize>,
        layers: Vec<Layer>,
        head: ClassifierHead,
        loss: LossSpec,
    ) -> Result<Model> {
        loss.validate()?;
        let mut shape = input_shape.clone();
        for l in &layers {
            shape = l.out_shape(&shape)?;
        }
        let feat: usize = shape.iter().product();
        if feat != head.dim() {
            return Err(Error::shape(format!(
                "network produces {feat} features, head expects {}",
                head.dim()
            )));
        }
        Ok(Model {
            name,
            input_shape,
            layers,
            head,
            loss,
            head_version: 0,
        })
    }

    pub fn classes(&self) -> usize {
        self.head.classes()
    }

    pub fn param_infos(&self) -> Vec<ParamInfo> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            for b in l.param_blocks() {
                out.push(ParamInfo {
                    layer: Some(i),
                    role: b.role,
                    shape: b.shape,
                });
            }
        }
        out.push(ParamInfo {
            layer: None,
            role: ParamRole::HeadWeight,
            shape: self.head.weight.shape().to_vec(),
        });
        if let Some(b) = &self.head.bias {
            out.push(ParamInfo {
                layer: None,
                role: ParamRole::HeadBias,
                shape: vec![b.len()],
            });
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_infos().iter().map(|p| p.len()).sum()
    }

    /// Parameter values in [`Model::param_infos`] order.
    pub fn param_values(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self
            .layers
            .iter()
            .flat_map(|l| l.param_blocks().into_iter().map(|b| b.data.to_vec()))
            .collect();
        out.push(self.head.weight.data().to_vec());
        if let Some(b) = &self.head.bias {
            out.push(b.clone());
        }
        out
    }

    /// Visits every parameter block mutably with its index in
    /// [`Model::param_infos`] order.
    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(usize, ParamRole, &mut [f64])) {
        let mut idx = 0;
        for l in &mut self.layers {
            l.visit_params_mut(&mut |role, p| {
                f(idx, role, p);
                idx += 1;
            });
        }
        self.head_version = self.head_version.wrapping_add(1);
        f(idx, ParamRole::HeadWeight, self.head.weight.data_mut());
        idx += 1;
        if let Some(b) = &mut self.head.bias {
            f(idx, ParamRole::HeadBias, b);
        }
    }

    /// Clamps curvatures and repairs collapsed kernel rows.
    pub fn enforce_constraints(&mut self) {
        for l in &mut self.layers {
            l.enforce_constraints();
        }
    }

    fn check_batch(&self, xs: &[Tensor], ys: Option<&[usize]>) -> Result<()> {
        if xs.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if let Some(x) = xs.iter().find(|x| x.shape() != self.input_shape.as_slice()) {
            return Err(Error::shape(format!(
                "model expects inputs of shape {:?}, got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        if let Some(ys) = ys {
            if ys.len() != xs.len() {
                return Err(Error::shape(format!(
                    "{} inputs but {} labels",
                    xs.len(),
                    ys.len()
                )));
            }
            if let Some(&y) = ys.iter().find(|&&y| y >= self.classes()) {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    classes: self.classes(),
                });
            }
        }
        Ok(())
    }

    /// Activations after every layer.
    pub fn activations(&self, xs: &[Tensor], mode: Mode) -> Result<Vec<Vec<Tensor>>> {
        self.check_batch(xs, None)?;
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut cur = xs.to_vec();
        for l in &self.layers {
            cur = l.forward(&cur, mode)?.0;
            acts.push(cur.clone());
        }
        Ok(acts)
    }

    /// Feature vectors fed to the classifier head.
    pub fn features(&self, xs: &[Tensor], mode: Mode) -> Result<Vec<Tensor>> {
        self.check_batch(xs, None)?;
        let mut cur = xs.to_vec();
        for l in &self.layers {
            cur = l.forward(&cur, mode)?.0;
        }
        Ok(cur)
    }

    pub fn logits(&self, xs: &[Tensor], mode: Mode) -> Result<Vec<Vec<f64>>> {
        self.features(xs, mode)?
            .iter()
            .map(|f| losses::head_logits(&self.loss, f.data(), &self.head))
            .collect()
    }

    pub fn predict(&self, xs: &[Tensor]) -> Result<Vec<usize>> {
        Ok(self
            .logits(xs, Mode::Eval)?
            .iter()
            .map(|l| argmax(l))
            .collect())
    }

    fn penalty(&self, reg: &Regularization, grads: Option<&mut Vec<Vec<f64>>>) -> f64 {
        if reg.lambda_orth == 0.0 {
            return 0.0;
        }
        let mut total = 0.0;
        let mut targets: Vec<(usize, &Tensor)> = Vec::new();
        let mut idx = 0;
        for l in &self.layers {
            if let Some(p) = l.sphere_params() {
                targets.push((idx, &p.weight));
            }
            idx += l.param_blocks().len();
        }
        if reg.orth_head {
            targets.push((idx, &self.head.weight));
        }
        let mut grads = grads;
        for (i, w) in targets {
            let (v, g) = orthogonality_penalty(w, reg.lambda_orth);
            total += v;
            if let Some(gs) = grads.as_deref_mut() {
                for (a, b) in gs[i].iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
        }
        total
    }

    /// Mean data loss over the batch plus regularization, without gradients.
    pub fn loss(&self, xs: &[Tensor], ys: &[usize], mode: Mode, reg: &Regularization) -> Result<f64> {
        self.check_batch(xs, Some(ys))?;
        let feats = self.features(xs, mode)?;
        let mut total = 0.0;
        for (f, &y) in feats.iter().zip(ys) {
            total += losses::head_loss(&self.loss, f.data(), &self.head, y)?.loss;
        }
        Ok(total / xs.len() as f64 + self.penalty(reg, None))
    }

    /// [`Model::loss`] together with the branch taken at every non-smooth
    /// point of the forward pass: ReLU gates, max-pool winners and, for
    /// margin losses, the piece of ψ holding each target angle.
    pub fn loss_and_branches(
        &self,
        xs: &[Tensor],
        ys: &[usize],
        mode: Mode,
        reg: &Regularization,
    ) -> Result<(f64, Vec<usize>)> {
        self.check_batch(xs, Some(ys))?;
        let mut branches = Vec::new();
        let mut cur = xs.to_vec();
        for l in &self.layers {
            let (y, c) = l.forward(&cur, mode)?;
            match &c {
                LayerCache::Relu(r) => branches.extend(r.gates()),
                LayerCache::Pool(p) => branches.extend(p.winners()),
                _ => {}
            }
            cur = y;
        }
        let mut total = 0.0;
        for (f, &y) in cur.iter().zip(ys) {
            total += losses::head_loss(&self.loss, f.data(), &self.head, y)?.loss;
            if let LossSpec::GaSoftmax { m, .. } = &self.loss {
                let theta = crate::angular::angle(self.head.weight.row(y), f.data());
                branches.push((*m as f64 * theta / std::f64::consts::PI).floor() as usize);
            }
        }
        Ok((total / xs.len() as f64 + self.penalty(reg, None), branches))
    }

    /// Forward and backward over a batch. Batch-norm statistics are left in
    /// the returned caches; apply them with [`Model::commit`].
    pub fn evaluate(
        &self,
        xs: &[Tensor],
        ys: &[usize],
        mode: Mode,
        reg: &Regularization,
    ) -> Result<Evaluation> {
        self.check_batch(xs, Some(ys))?;
        let n = xs.len() as f64;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = xs.to_vec();
        for l in &self.layers {
            let (y, c) = l.forward(&cur, mode)?;
            caches.push(c);
            cur = y;
        }

        let mut data_loss = 0.0;
        let mut correct = 0;
        let mut gw = vec![0.0; self.head.weight.len()];
        let mut gb = self.head.bias.as_ref().map(|b| vec![0.0; b.len()]);
        let mut upstream = Vec::with_capacity(cur.len());
        for (f, &y) in cur.iter().zip(ys) {
            let lg = losses::head_loss(&self.loss, f.data(), &self.head, y)?;
            data_loss += lg.loss;
            let pred = match &self.loss {
                LossSpec::GaSoftmax { .. } => {
                    argmax(&losses::head_logits(&self.loss, f.data(), &self.head)?)
                }
                _ => argmax(&lg.logits),
            };
            if pred == y {
                correct += 1;
            }
            for (a, b) in gw.iter_mut().zip(lg.grad_w.data()) {
                *a += b / n;
            }
            if let (Some(acc), Some(g)) = (gb.as_mut(), lg.grad_b) {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b / n;
                }
            }
            upstream.push(Tensor::new_unchecked(
                f.shape().to_vec(),
                lg.grad_x.iter().map(|v| v / n).collect(),
            ));
        }
        data_loss /= n;

        let mut layer_grads: Vec<Vec<Vec<f64>>> = vec![Vec::new(); self.layers.len()];
        for i in (0..self.layers.len()).rev() {
            let want_input = i > 0;
            let (gin, gp) = self.layers[i].backward(&caches[i], &upstream, want_input)?;
            layer_grads[i] = gp;
            if let Some(g) = gin {
                upstream = g;
            }
        }
        let mut grads: Vec<Vec<f64>> = layer_grads.into_iter().flatten().collect();
        grads.push(gw);
        if let Some(b) = gb {
            grads.push(b);
        }
        let penalty = self.penalty(reg, Some(&mut grads));
        Ok(Evaluation {
            loss: data_loss + penalty,
            data_loss,
            penalty,
            correct,
            grads,
            caches,
        })
    }

    /// Folds the batch statistics of a training-mode evaluation into the
    /// batch-norm running estimates.
    pub fn commit(&mut self, eval: &Evaluation) {
        for (l, c) in self.layers.iter_mut().zip(&eval.caches) {
            l.commit(c);
        }
    }

    /// Learnable curvature vectors, one entry per layer that has them.
    pub fn learnable_k(&self) -> Vec<(usize, Vec<f64>)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| {
                l.sphere_params()
                    .and_then(|p| p.op.k_values())
                    .map(|k| (i, k.to_vec()))
            })
            .collect()
    }

    /// Multiplies every hidden-layer kernel row by `c`.
    pub fn scale_hidden_kernels(&mut self, c: f64) {
        for l in &mut self.layers {
            l.visit_params_mut(&mut |role, p| {
                if matches!(role, ParamRole::SphereKernel | ParamRole::Kernel) {
                    p.iter_mut().for_each(|v| *v *= c);
                }
            });
        }
    }
}

fn build_layer(spec: &LayerSpec, input: &[usize], rng: &mut Rng) -> Result<Layer> {
    let sphere = |out: usize, d: usize, op: &OperatorConfig, bias: bool, rescale: &Option<RescaleConfig>, rng: &mut Rng| {
        let w = init_sphere_kernel(out, d, rng);
        SphereParams::new(w, op.build(out)?, bias, rescale.map(|r| r == RescaleConfig::Learned))
    };
    Ok(match spec {
        LayerSpec::SphereConv {
            out,
            kernel,
            stride,
            pad,
            op,
            bias,
            rescale,
        } => {
            let shape = ConvShape {
                in_channels: input[0],
                kh: *kernel,
                kw: *kernel,
                stride: *stride,
                pad: *pad,
            };
            Layer::SphereConv(SphereConv::new(
                sphere(*out, shape.kernel_len(), op, *bias, rescale, rng)?,
                shape,
            )?)
        }
        LayerSpec::Conv {
            out,
            kernel,
            stride,
            pad,
            bias,
        } => {
            let shape = ConvShape {
                in_channels: input[0],
                kh: *kernel,
                kw: *kernel,
                stride: *stride,
                pad: *pad,
            };
            Layer::Conv(Conv::new(
                LinearParams::new(init_he(*out, shape.kernel_len(), rng), *bias)?,
                shape,
            )?)
        }
        LayerSpec::SphereFc {
            out,
            op,
            bias,
            rescale,
        } => {
            let d = input.iter().product();
            Layer::SphereFc(SphereFc::new(sphere(*out, d, op, *bias, rescale, rng)?))
        }
        LayerSpec::Fc { out, bias } => {
            let d = input.iter().product();
            Layer::Fc(Fc::new(LinearParams::new(init_he(*out, d, rng), *bias)?))
        }
        LayerSpec::Relu {} => Layer::Relu,
        LayerSpec::MaxPool {} => Layer::MaxPool,
        LayerSpec::BatchNorm {} => Layer::BatchNorm(BatchNorm::new(input[0])),
    })
}

#[cfg(test)]
mod tests;
