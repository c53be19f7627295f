//! SphereConv and Sphere-FC: responses are g(angle(kernel, patch)) rather
//! than inner products.
//!
//! Backward works through s = dL/dt, the loss gradient with respect to each
//! kernel/patch cosine t. Since t = ŵ·x̂,
//!
//!   dL/dw_f = (1/|w_f|) (Σ_p s_fp x̂_p − (Σ_p s_fp t_fp) ŵ_f)
//!   dL/dx_p = (1/|x_p|) (Σ_f s_fp ŵ_f − (Σ_f s_fp t_fp) x̂_p)
//!
//! Patches whose norm is at or below `EPS_NORM` (all-zero windows, common
//! after ReLU) produce t = 0 and are treated as constants: they receive no
//! input gradient and contribute nothing to the kernel gradient.

use crate::angular::{dtheta_dcos, AngularOperator};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{
    clamp_cos, col2im, im2col_with, matmul_nn, matmul_nt, matmul_tn, norm, PatchGeometry, Tensor,
    EPS_CLAMP, EPS_NORM,
};

use super::{ParamBlock, ParamRole};

/// Per-channel affine map applied after the angular response.
#[derive(Debug, Clone, PartialEq)]
pub struct Rescale {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub learnable: bool,
}

impl Rescale {
    pub fn identity(channels: usize, learnable: bool) -> Self {
        Rescale {
            beta: vec![1.0; channels],
            gamma: vec![0.0; channels],
            learnable,
        }
    }
}

/// Parameters shared by the convolutional and fully connected variants.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereParams {
    /// One flattened kernel per row, `[Cout, d]`.
    pub weight: Tensor,
    pub op: AngularOperator,
    pub bias: Option<Vec<f64>>,
    pub rescale: Option<Rescale>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SphereGrads {
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
    pub k: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
    pub gamma: Option<Vec<f64>>,
}

impl SphereGrads {
    /// Blocks in parameter order.
    pub fn into_blocks(self) -> Vec<Vec<f64>> {
        let mut out = vec![self.weight];
        out.extend(self.bias);
        out.extend(self.k);
        if let (Some(b), Some(g)) = (self.beta, self.gamma) {
            out.push(b);
            out.push(g);
        }
        out
    }
}

/// Everything backward needs from one sample.
#[derive(Debug, Clone)]
pub(crate) struct SampleCache {
    /// Patch rows `[P, d]`.
    x: Vec<f64>,
    xn: Vec<f64>,
    /// Clamped cosines `[F, P]`.
    t: Vec<f64>,
    /// Response before rescaling, kept only when rescaling is on.
    pre: Option<Vec<f64>>,
}

/// Unit-sphere initialization: a Gaussian row, normalized.
pub fn init_sphere_kernel(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let mut w = Tensor::from_fn(&[rows, cols], |_| rng.normal());
    for r in 0..rows {
        let n = norm(w.row(r));
        if n > EPS_NORM {
            w.row_mut(r).iter_mut().for_each(|v| *v /= n);
        } else {
            reset_row(w.row_mut(r));
        }
    }
    w
}

fn reset_row(row: &mut [f64]) {
    row.iter_mut().for_each(|v| *v = 0.0);
    row[0] = 1.0;
}

impl SphereParams {
    pub fn new(
        weight: Tensor,
        op: AngularOperator,
        bias: bool,
        rescale: Option<bool>,
    ) -> Result<Self> {
        if weight.rank() != 2 {
            return Err(Error::shape(format!(
                "sphere kernel must be [Cout, d], got {:?}",
                weight.shape()
            )));
        }
        let f = weight.rows();
        if let Some(k) = op.k_values() {
            if k.len() != 1 && k.len() != f {
                return Err(Error::shape(format!(
                    "{} curvatures for {f} filters",
                    k.len()
                )));
            }
        }
        for r in 0..f {
            let n = norm(weight.row(r));
            if n <= EPS_NORM {
                return Err(Error::DegenerateRow { row: r, norm: n });
            }
        }
        Ok(SphereParams {
            weight,
            op,
            bias: bias.then(|| vec![0.0; f]),
            rescale: rescale.map(|learnable| Rescale::identity(f, learnable)),
        })
    }

    pub fn filters(&self) -> usize {
        self.weight.rows()
    }

    pub fn kernel_len(&self) -> usize {
        self.weight.cols()
    }

    pub(crate) fn row_norms(&self) -> Vec<f64> {
        (0..self.filters())
            .map(|f| norm(self.weight.row(f)))
            .collect()
    }

    pub(crate) fn blocks(&self) -> Vec<ParamBlock<'_>> {
        let f = self.filters();
        let mut out = vec![ParamBlock {
            role: ParamRole::SphereKernel,
            shape: self.weight.shape().to_vec(),
            data: self.weight.data(),
        }];
        if let Some(b) = &self.bias {
            out.push(ParamBlock {
                role: ParamRole::Bias,
                shape: vec![f],
                data: b,
            });
        }
        if let Some(k) = self.op.k_values() {
            out.push(ParamBlock {
                role: ParamRole::CurvatureK,
                shape: vec![k.len()],
                data: k,
            });
        }
        if let Some(r) = self.rescale.as_ref().filter(|r| r.learnable) {
            out.push(ParamBlock {
                role: ParamRole::RescaleScale,
                shape: vec![f],
                data: &r.beta,
            });
            out.push(ParamBlock {
                role: ParamRole::RescaleShift,
                shape: vec![f],
                data: &r.gamma,
            });
        }
        out
    }

    pub(crate) fn visit_mut(&mut self, f: &mut dyn FnMut(ParamRole, &mut [f64])) {
        f(ParamRole::SphereKernel, self.weight.data_mut());
        if let Some(b) = &mut self.bias {
            f(ParamRole::Bias, b);
        }
        if let Some(k) = self.op.k_values_mut() {
            f(ParamRole::CurvatureK, k);
        }
        if let Some(r) = self.rescale.as_mut().filter(|r| r.learnable) {
            f(ParamRole::RescaleScale, &mut r.beta);
            f(ParamRole::RescaleShift, &mut r.gamma);
        }
    }

    /// Clamps learnable curvatures and replaces collapsed kernel rows by e_0.
    pub(crate) fn enforce_constraints(&mut self) {
        self.op.clamp_k();
        for r in 0..self.filters() {
            let row = self.weight.row_mut(r);
            if !(norm(row) > EPS_NORM) {
                reset_row(row);
            }
        }
    }

    fn zero_grads(&self) -> SphereGrads {
        let f = self.filters();
        let learn_rescale = self.rescale.as_ref().is_some_and(|r| r.learnable);
        SphereGrads {
            weight: vec![0.0; self.weight.len()],
            bias: self.bias.as_ref().map(|_| vec![0.0; f]),
            k: self.op.k_values().map(|k| vec![0.0; k.len()]),
            beta: learn_rescale.then(|| vec![0.0; f]),
            gamma: learn_rescale.then(|| vec![0.0; f]),
        }
    }

    /// Responses `[F, P]` for patch rows `x` (`[P, d]`).
    fn forward_patches(&self, wn: &[f64], x: Vec<f64>, p: usize) -> (Vec<f64>, SampleCache) {
        let (nf, d) = (self.filters(), self.kernel_len());
        let xn: Vec<f64> = (0..p).map(|i| norm(&x[i * d..(i + 1) * d])).collect();
        let mut t = matmul_nt(self.weight.data(), &x, nf, p, d);
        let mut out = vec![0.0; nf * p];
        let mut pre = self.rescale.as_ref().map(|_| vec![0.0; nf * p]);
        for f in 0..nf {
            let wf = wn[f].max(EPS_NORM);
            let b = self.bias.as_ref().map_or(0.0, |b| b[f]);
            for i in 0..p {
                let idx = f * p + i;
                let c = clamp_cos(t[idx] / (wf * xn[i].max(EPS_NORM)), EPS_CLAMP);
                t[idx] = c;
                let v = self.op.g(c.acos(), f) + b;
                out[idx] = match &self.rescale {
                    Some(r) => {
                        pre.as_mut().unwrap()[idx] = v;
                        r.beta[f] * v + r.gamma[f]
                    }
                    None => v,
                };
            }
        }
        (out, SampleCache { x, xn, t, pre })
    }

    /// Accumulates parameter gradients into `acc` and returns the gradient
    /// with respect to the patch rows when `want_x` is set.
    fn backward_patches(
        &self,
        wn: &[f64],
        cache: &SampleCache,
        gout: &[f64],
        acc: &mut SphereGrads,
        want_x: bool,
    ) -> Option<Vec<f64>> {
        let (nf, d) = (self.filters(), self.kernel_len());
        let p = cache.xn.len();
        let mut s = vec![0.0; nf * p];
        for f in 0..nf {
            let scale = self.rescale.as_ref().map_or(1.0, |r| r.beta[f]);
            let slot = self.op.k_slot(f);
            let (mut gb, mut gg, mut gbias, mut gk) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..p {
                let idx = f * p + i;
                let go = gout[idx];
                if go == 0.0 {
                    continue;
                }
                if let Some(pre) = &cache.pre {
                    gb += go * pre[idx];
                    gg += go;
                }
                let gp = go * scale;
                gbias += gp;
                let t = cache.t[idx];
                let theta = t.acos();
                if acc.k.is_some() {
                    gk += gp * self.op.dg_dk(theta, f);
                }
                if cache.xn[i] > EPS_NORM {
                    s[idx] = gp * self.op.dg_dtheta(theta, f) * dtheta_dcos(t);
                }
            }
            if let Some(v) = &mut acc.beta {
                v[f] += gb;
            }
            if let Some(v) = &mut acc.gamma {
                v[f] += gg;
            }
            if let Some(v) = &mut acc.bias {
                v[f] += gbias;
            }
            if let Some(v) = &mut acc.k {
                v[slot] += gk;
            }
        }

        // kernel gradient
        let mut sx = s.clone();
        for f in 0..nf {
            for i in 0..p {
                if cache.xn[i] > EPS_NORM {
                    sx[f * p + i] /= cache.xn[i];
                }
            }
        }
        let a = matmul_nn(&sx, &cache.x, nf, p, d);
        let w = self.weight.data();
        for f in 0..nf {
            if wn[f] <= EPS_NORM {
                continue;
            }
            let st: f64 = (0..p).map(|i| s[f * p + i] * cache.t[f * p + i]).sum();
            let coef = st / wn[f];
            let g = &mut acc.weight[f * d..(f + 1) * d];
            for j in 0..d {
                g[j] += (a[f * d + j] - coef * w[f * d + j]) / wn[f];
            }
        }

        if !want_x {
            return None;
        }
        let mut sw = s.clone();
        for f in 0..nf {
            let inv = if wn[f] > EPS_NORM { 1.0 / wn[f] } else { 0.0 };
            sw[f * p..(f + 1) * p].iter_mut().for_each(|v| *v *= inv);
        }
        let mut gx = matmul_tn(&sw, w, nf, p, d);
        for i in 0..p {
            let row = &mut gx[i * d..(i + 1) * d];
            let xn = cache.xn[i];
            if xn <= EPS_NORM {
                row.iter_mut().for_each(|v| *v = 0.0);
                continue;
            }
            let e: f64 = (0..nf).map(|f| s[f * p + i] * cache.t[f * p + i]).sum();
            let x = &cache.x[i * d..(i + 1) * d];
            for j in 0..d {
                row[j] = (row[j] - e * x[j] / xn) / xn;
            }
        }
        Some(gx)
    }
}

/// Receptive-field settings of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn kernel_len(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    pub(crate) fn geometry(&self, input: &[usize]) -> Result<PatchGeometry> {
        if input.first() != Some(&self.in_channels) {
            return Err(Error::shape(format!(
                "layer expects {} input channels, got shape {input:?}",
                self.in_channels
            )));
        }
        PatchGeometry::new(input, self.kh, self.kw, self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct SphereCache {
    pub(crate) version: u64,
    pub(crate) input_shape: Vec<usize>,
    pub(crate) out_shape: Vec<usize>,
    pub(crate) wn: Vec<f64>,
    pub(crate) samples: Vec<SampleCache>,
}

impl SphereCache {
    fn check(&self, version: u64, grads: &[Tensor]) -> Result<()> {
        if version != self.version {
            return Err(Error::StaleCache(
                "parameters changed since the forward pass".into(),
            ));
        }
        if grads.len() != self.samples.len()
            || grads.iter().any(|g| g.shape() != self.out_shape.as_slice())
        {
            return Err(Error::StaleCache(format!(
                "cache holds {} outputs of shape {:?}",
                self.samples.len(),
                self.out_shape
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SphereConv {
    pub params: SphereParams,
    pub shape: ConvShape,
    pub(crate) version: u64,
}

impl SphereConv {
    pub fn new(params: SphereParams, shape: ConvShape) -> Result<Self> {
        if params.kernel_len() != shape.kernel_len() {
            return Err(Error::shape(format!(
                "kernel rows have length {}, geometry needs {}",
                params.kernel_len(),
                shape.kernel_len()
            )));
        }
        Ok(SphereConv {
            params,
            shape,
            version: 0,
        })
    }

    pub fn out_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let geo = self.shape.geometry(input)?;
        Ok(vec![self.params.filters(), geo.out_h(), geo.out_w()])
    }

    pub fn forward(&self, xs: &[Tensor]) -> Result<(Vec<Tensor>, SphereCache)> {
        let input_shape = xs
            .first()
            .ok_or_else(|| Error::shape("empty batch"))?
            .shape()
            .to_vec();
        let geo = self.shape.geometry(&input_shape)?;
        let out_shape = vec![self.params.filters(), geo.out_h(), geo.out_w()];
        let wn = self.params.row_norms();
        let mut outs = Vec::with_capacity(xs.len());
        let mut samples = Vec::with_capacity(xs.len());
        for x in xs {
            if x.shape() != input_shape.as_slice() {
                return Err(Error::shape("batch mixes input shapes"));
            }
            let cols = im2col_with(x, &geo).into_data();
            let (out, cache) = self.params.forward_patches(&wn, cols, geo.patches());
            outs.push(Tensor::new_unchecked(out_shape.clone(), out));
            samples.push(cache);
        }
        Ok((
            outs,
            SphereCache {
                version: self.version,
                input_shape,
                out_shape,
                wn,
                samples,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &SphereCache,
        grads: &[Tensor],
        want_input: bool,
    ) -> Result<(Option<Vec<Tensor>>, SphereGrads)> {
        cache.check(self.version, grads)?;
        let geo = self.shape.geometry(&cache.input_shape)?;
        let mut acc = self.params.zero_grads();
        let mut gin = want_input.then(|| Vec::with_capacity(grads.len()));
        for (sc, g) in cache.samples.iter().zip(grads) {
            let gx = self
                .params
                .backward_patches(&cache.wn, sc, g.data(), &mut acc, want_input);
            if let (Some(gx), Some(gin)) = (gx, gin.as_mut()) {
                let cols = Tensor::new_unchecked(vec![geo.patches(), geo.patch_len()], gx);
                gin.push(col2im(&cols, &geo)?);
            }
        }
        Ok((gin, acc))
    }
}

/// Fully connected SphereConv: one patch covering the whole input.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereFc {
    pub params: SphereParams,
    pub(crate) version: u64,
}

impl SphereFc {
    pub fn new(params: SphereParams) -> Self {
        SphereFc { params, version: 0 }
    }

    pub fn out_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let d: usize = input.iter().product();
        if d != self.params.kernel_len() {
            return Err(Error::shape(format!(
                "fully connected layer expects {} inputs, got shape {input:?}",
                self.params.kernel_len()
            )));
        }
        Ok(vec![self.params.filters(), 1, 1])
    }

    pub fn forward(&self, xs: &[Tensor]) -> Result<(Vec<Tensor>, SphereCache)> {
        let input_shape = xs
            .first()
            .ok_or_else(|| Error::shape("empty batch"))?
            .shape()
            .to_vec();
        let out_shape = self.out_shape(&input_shape)?;
        let wn = self.params.row_norms();
        let mut outs = Vec::with_capacity(xs.len());
        let mut samples = Vec::with_capacity(xs.len());
        for x in xs {
            if x.shape() != input_shape.as_slice() {
                return Err(Error::shape("batch mixes input shapes"));
            }
            let (out, cache) = self.params.forward_patches(&wn, x.data().to_vec(), 1);
            outs.push(Tensor::new_unchecked(out_shape.clone(), out));
            samples.push(cache);
        }
        Ok((
            outs,
            SphereCache {
                version: self.version,
                input_shape,
                out_shape,
                wn,
                samples,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &SphereCache,
        grads: &[Tensor],
        want_input: bool,
    ) -> Result<(Option<Vec<Tensor>>, SphereGrads)> {
        cache.check(self.version, grads)?;
        let mut acc = self.params.zero_grads();
        let mut gin = want_input.then(|| Vec::with_capacity(grads.len()));
        for (sc, g) in cache.samples.iter().zip(grads) {
            let gx = self
                .params
                .backward_patches(&cache.wn, sc, g.data(), &mut acc, want_input);
            if let (Some(gx), Some(gin)) = (gx, gin.as_mut()) {
                gin.push(Tensor::new_unchecked(cache.input_shape.clone(), gx));
            }
        }
        Ok((gin, acc))
    }
}
