//! Classification losses: plain softmax and the angular family, where class
//! logits depend on the angle between the feature and each class vector.

use serde::{Deserialize, Serialize};

use crate::angular::{dtheta_dcos, AngularOperator};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{clamp_cos, dot, norm, Tensor, EPS_CLAMP, EPS_NORM};

pub const DEFAULT_SCALE: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub enum LossSpec {
    Softmax,
    /// Unit class vectors, logits `‖x‖ g(θ_j)`.
    WSoftmax { g: AngularOperator },
    /// As `WSoftmax`, with the target logit `‖x‖ ψ(θ_y)` for margin `m`.
    GaSoftmax { g: AngularOperator, m: u32 },
    /// Feature and class vectors both normalized, logits `s cos θ_j`.
    SSoftmax { s: f64 },
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            LossSpec::WSoftmax { g } | LossSpec::GaSoftmax { g, .. } if g.is_learnable() => {
                Err(Error::InvalidArgument(
                    "loss heads take a fixed operator; learnable curvature lives in the layers"
                        .into(),
                ))
            }
            LossSpec::GaSoftmax { m: 0, .. } => {
                Err(Error::InvalidArgument("margin m must be at least 1".into()))
            }
            LossSpec::SSoftmax { s } if !(*s > 0.0 && s.is_finite()) => Err(
                Error::InvalidArgument(format!("scale s must be positive, got {s}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn is_angular(&self) -> bool {
        !matches!(self, LossSpec::Softmax)
    }

    pub fn name(&self) -> String {
        match self {
            LossSpec::Softmax => "softmax".into(),
            LossSpec::WSoftmax { g } => format!("w-softmax-{}", g.name()),
            LossSpec::GaSoftmax { g, m } => format!("ga-softmax-{}-m{m}", g.name()),
            LossSpec::SSoftmax { s } => format!("s-softmax-s{s}"),
        }
    }
}

/// Config-file form of [`LossSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LossConfig {
    Softmax {},
    WSoftmax {
        g: crate::network::OperatorConfig,
    },
    GaSoftmax {
        g: crate::network::OperatorConfig,
        #[serde(default = "default_margin")]
        m: u32,
    },
    SSoftmax {
        #[serde(default = "default_scale")]
        s: f64,
    },
}

fn default_margin() -> u32 {
    4
}

fn default_scale() -> f64 {
    DEFAULT_SCALE
}

impl LossConfig {
    pub fn build(&self) -> Result<LossSpec> {
        let spec = match self {
            LossConfig::Softmax {} => LossSpec::Softmax,
            LossConfig::WSoftmax { g } => LossSpec::WSoftmax { g: g.build(1)? },
            LossConfig::GaSoftmax { g, m } => LossSpec::GaSoftmax {
                g: g.build(1)?,
                m: *m,
            },
            LossConfig::SSoftmax { s } => LossSpec::SSoftmax { s: *s },
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    /// One class vector per row, `[K, d]`.
    pub weight: Tensor,
    pub bias: Option<Vec<f64>>,
}

impl ClassifierHead {
    pub fn new(weight: Tensor, bias: bool) -> Result<Self> {
        if weight.rank() != 2 {
            return Err(Error::shape(format!(
                "head weight must be [K, d], got {:?}",
                weight.shape()
            )));
        }
        let k = weight.rows();
        Ok(ClassifierHead {
            weight,
            bias: bias.then(|| vec![0.0; k]),
        })
    }

    /// Unit-norm Gaussian rows; the scale is irrelevant for angular losses
    /// and matches the He scale closely enough for the plain softmax.
    pub fn init(classes: usize, dim: usize, bias: bool, rng: &mut Rng) -> Self {
        let w = crate::layers::sphere::init_sphere_kernel(classes, dim, rng);
        ClassifierHead {
            weight: w,
            bias: bias.then(|| vec![0.0; classes]),
        }
    }

    pub fn classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn dim(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub logits: Vec<f64>,
    pub grad_x: Vec<f64>,
    pub grad_w: Tensor,
    pub grad_b: Option<Vec<f64>>,
}

/// Cross-entropy of `softmax(logits)` against class `y`, and its gradient
/// `softmax − onehot(y)`.
pub fn softmax_ce(logits: &[f64], y: usize) -> Result<(f64, Vec<f64>)> {
    if y >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label: y,
            classes: logits.len(),
        });
    }
    if let Some(index) = logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() - (logits[y] - mx);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / z).collect();
    grad[y] -= 1.0;
    Ok((loss, grad))
}

/// ψ(θ) for margin `m`: the monotone extension of g(mθ).
pub fn psi_margin(g: &AngularOperator, theta: f64, m: u32) -> f64 {
    g.psi(theta, m, 0)
}

pub fn w_softmax(x: &[f64], head: &ClassifierHead, g: &AngularOperator, y: usize) -> Result<LossGrad> {
    angular_loss(x, head, y, Angular::W(g))
}

pub fn ga_softmax(
    x: &[f64],
    head: &ClassifierHead,
    g: &AngularOperator,
    m: u32,
    y: usize,
) -> Result<LossGrad> {
    angular_loss(x, head, y, Angular::Ga(g, m))
}

pub fn s_softmax(x: &[f64], head: &ClassifierHead, s: f64, y: usize) -> Result<LossGrad> {
    if !(s > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "scale s must be positive, got {s}"
        )));
    }
    angular_loss(x, head, y, Angular::S(s))
}

/// Ordinary `W x + b` logits.
pub fn plain_softmax(x: &[f64], head: &ClassifierHead, y: usize) -> Result<LossGrad> {
    let logits = dot_logits(x, head)?;
    let (loss, delta) = softmax_ce(&logits, y)?;
    let (k, d) = (head.classes(), head.dim());
    let mut gw = vec![0.0; k * d];
    let mut gx = vec![0.0; d];
    for j in 0..k {
        let wj = head.weight.row(j);
        for i in 0..d {
            gw[j * d + i] = delta[j] * x[i];
            gx[i] += delta[j] * wj[i];
        }
    }
    Ok(LossGrad {
        loss,
        logits,
        grad_x: gx,
        grad_w: Tensor::new_unchecked(vec![k, d], gw),
        grad_b: head.bias.as_ref().map(|_| delta),
    })
}

/// Loss and gradients for any [`LossSpec`].
pub fn loss_and_grad(spec: &LossSpec, x: &[f64], head: &ClassifierHead, y: usize) -> Result<LossGrad> {
    match spec {
        LossSpec::Softmax => plain_softmax(x, head, y),
        LossSpec::WSoftmax { g } => w_softmax(x, head, g, y),
        LossSpec::GaSoftmax { g, m } => ga_softmax(x, head, g, *m, y),
        LossSpec::SSoftmax { s } => s_softmax(x, head, *s, y),
    }
}

/// Logits used for prediction. The margin only shapes training, so
/// GA-Softmax predicts with plain g like W-Softmax.
pub fn predict_logits(spec: &LossSpec, x: &[f64], head: &ClassifierHead) -> Result<Vec<f64>> {
    match spec {
        LossSpec::Softmax => dot_logits(x, head),
        LossSpec::WSoftmax { g } | LossSpec::GaSoftmax { g, .. } => {
            Ok(angular_parts(x, head, Angular::W(g))?.0)
        }
        LossSpec::SSoftmax { s } => Ok(angular_parts(x, head, Angular::S(*s))?.0),
    }
}

/// True for an angular loss fed an all-zero feature vector, which a ReLU in
/// front of the head can produce.
fn dead_feature(spec: &LossSpec, x: &[f64]) -> bool {
    spec.is_angular() && norm(x) <= EPS_NORM
}

/// Logits of a dead feature: the ‖x‖ → 0 limit of ‖x‖·g(θ), extended to
/// S-Softmax, so every class scores its bias alone.
fn dead_logits(head: &ClassifierHead) -> Vec<f64> {
    head.bias.clone().unwrap_or_else(|| vec![0.0; head.classes()])
}

/// [`loss_and_grad`] as the network uses it: a dead feature has no angle,
/// so it gets [`dead_logits`] and no gradient through the weights or the
/// feature, like a zero patch in a sphere convolution.
pub fn head_loss(spec: &LossSpec, x: &[f64], head: &ClassifierHead, y: usize) -> Result<LossGrad> {
    if x.len() != head.dim() || !dead_feature(spec, x) {
        return loss_and_grad(spec, x, head, y);
    }
    let logits = dead_logits(head);
    let (loss, delta) = softmax_ce(&logits, y)?;
    Ok(LossGrad {
        loss,
        logits,
        grad_x: vec![0.0; head.dim()],
        grad_w: Tensor::zeros(&[head.classes(), head.dim()]),
        grad_b: head.bias.as_ref().map(|_| delta),
    })
}

/// [`predict_logits`] with the same dead-feature limit as [`head_loss`].
pub fn head_logits(spec: &LossSpec, x: &[f64], head: &ClassifierHead) -> Result<Vec<f64>> {
    if x.len() == head.dim() && dead_feature(spec, x) {
        return Ok(dead_logits(head));
    }
    predict_logits(spec, x, head)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn dot_logits(x: &[f64], head: &ClassifierHead) -> Result<Vec<f64>> {
    if x.len() != head.dim() {
        return Err(Error::shape(format!(
            "head expects {} features, got {}",
            head.dim(),
            x.len()
        )));
    }
    Ok((0..head.classes())
        .map(|j| dot(head.weight.row(j), x) + head.bias.as_ref().map_or(0.0, |b| b[j]))
        .collect())
}

#[derive(Clone, Copy)]
enum Angular<'a> {
    W(&'a AngularOperator),
    Ga(&'a AngularOperator, u32),
    S(f64),
}

struct Parts {
    xn: f64,
    wn: Vec<f64>,
    t: Vec<f64>,
    /// ∂logit_j/∂t_j
    dt: Vec<f64>,
    /// ∂logit_j/∂‖x‖
    dxn: Vec<f64>,
}

fn angular_parts(x: &[f64], head: &ClassifierHead, kind: Angular<'_>) -> Result<(Vec<f64>, Parts)> {
    if x.len() != head.dim() {
        return Err(Error::shape(format!(
            "head expects {} features, got {}",
            head.dim(),
            x.len()
        )));
    }
    let xn = norm(x);
    if xn <= EPS_NORM {
        return Err(Error::Degenerate(format!(
            "feature vector has norm {xn:e}"
        )));
    }
    let k = head.classes();
    let mut parts = Parts {
        xn,
        wn: Vec::with_capacity(k),
        t: Vec::with_capacity(k),
        dt: Vec::with_capacity(k),
        dxn: Vec::with_capacity(k),
    };
    let mut logits = Vec::with_capacity(k);
    for j in 0..k {
        let w = head.weight.row(j);
        let wn = norm(w);
        if wn <= EPS_NORM {
            return Err(Error::DegenerateRow { row: j, norm: wn });
        }
        let t = clamp_cos(dot(w, x) / (wn * xn), EPS_CLAMP);
        let theta = t.acos();
        let (f, dfdth, dfdxn) = match kind {
            Angular::S(s) => (s * t, None, 0.0),
            // the GA target logit is replaced by the caller
            Angular::W(g) | Angular::Ga(g, _) => (xn * g.g(theta, 0), Some(xn * g.dg_dtheta(theta, 0)), g.g(theta, 0)),
        };
        let dt = match (kind, dfdth) {
            (Angular::S(s), _) => s,
            (_, Some(d)) => d * dtheta_dcos(t),
            _ => unreachable!(),
        };
        logits.push(f + head.bias.as_ref().map_or(0.0, |b| b[j]));
        parts.wn.push(wn);
        parts.t.push(t);
        parts.dt.push(dt);
        parts.dxn.push(dfdxn);
    }
    Ok((logits, parts))
}

fn angular_loss(x: &[f64], head: &ClassifierHead, y: usize, kind: Angular<'_>) -> Result<LossGrad> {
    if y >= head.classes() {
        return Err(Error::LabelOutOfRange {
            label: y,
            classes: head.classes(),
        });
    }
    let (mut logits, mut parts) = angular_parts(x, head, kind)?;
    if let Angular::Ga(g, m) = kind {
        // target logit uses ψ instead of g
        let t = parts.t[y];
        let theta = t.acos();
        let xn = parts.xn;
        let b = head.bias.as_ref().map_or(0.0, |b| b[y]);
        logits[y] = xn * g.psi(theta, m, 0) + b;
        parts.dt[y] = xn * g.dpsi_dtheta(theta, m, 0) * dtheta_dcos(t);
        parts.dxn[y] = g.psi(theta, m, 0);
    }
    let (loss, delta) = softmax_ce(&logits, y)?;

    let (k, d) = (head.classes(), head.dim());
    let xn = parts.xn;
    let mut gw = vec![0.0; k * d];
    let mut gx = vec![0.0; d];
    let mut dl_dxn = 0.0;
    for j in 0..k {
        let w = head.weight.row(j);
        let (wn, t) = (parts.wn[j], parts.t[j]);
        let s = delta[j] * parts.dt[j];
        dl_dxn += delta[j] * parts.dxn[j];
        for i in 0..d {
            let xh = x[i] / xn;
            let wh = w[i] / wn;
            gw[j * d + i] = s * (xh - t * wh) / wn;
            gx[i] += s * (wh - t * xh) / xn;
        }
    }
    for i in 0..d {
        gx[i] += dl_dxn * x[i] / xn;
    }
    Ok(LossGrad {
        loss,
        logits,
        grad_x: gx,
        grad_w: Tensor::new_unchecked(vec![k, d], gw),
        grad_b: head.bias.as_ref().map(|_| delta),
    })
}
