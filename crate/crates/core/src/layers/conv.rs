//! Dot-product baselines: ordinary convolution and fully connected layers.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{col2im, im2col_with, matmul_nn, matmul_nt, matmul_tn, Tensor};

use super::sphere::ConvShape;
use super::{ParamBlock, ParamRole};

/// He-normal initialization, std = sqrt(2 / fan_in).
pub fn init_he(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let std = (2.0 / cols as f64).sqrt();
    Tensor::from_fn(&[rows, cols], |_| std * rng.normal())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub weight: Tensor,
    pub bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearGrads {
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl LinearGrads {
    pub fn into_blocks(self) -> Vec<Vec<f64>> {
        let mut out = vec![self.weight];
        out.extend(self.bias);
        out
    }
}

impl LinearParams {
    pub fn new(weight: Tensor, bias: bool) -> Result<Self> {
        if weight.rank() != 2 {
            return Err(Error::shape(format!(
                "kernel must be [Cout, d], got {:?}",
                weight.shape()
            )));
        }
        let f = weight.rows();
        Ok(LinearParams {
            weight,
            bias: bias.then(|| vec![0.0; f]),
        })
    }

    pub fn filters(&self) -> usize {
        self.weight.rows()
    }

    pub(crate) fn blocks(&self) -> Vec<ParamBlock<'_>> {
        let mut out = vec![ParamBlock {
            role: ParamRole::Kernel,
            shape: self.weight.shape().to_vec(),
            data: self.weight.data(),
        }];
        if let Some(b) = &self.bias {
            out.push(ParamBlock {
                role: ParamRole::Bias,
                shape: vec![b.len()],
                data: b,
            });
        }
        out
    }

    pub(crate) fn visit_mut(&mut self, f: &mut dyn FnMut(ParamRole, &mut [f64])) {
        f(ParamRole::Kernel, self.weight.data_mut());
        if let Some(b) = &mut self.bias {
            f(ParamRole::Bias, b);
        }
    }

    fn forward_patches(&self, x: &[f64], p: usize) -> Vec<f64> {
        let (nf, d) = (self.weight.rows(), self.weight.cols());
        let mut out = matmul_nt(self.weight.data(), x, nf, p, d);
        if let Some(b) = &self.bias {
            for f in 0..nf {
                out[f * p..(f + 1) * p].iter_mut().for_each(|v| *v += b[f]);
            }
        }
        out
    }

    fn backward_patches(
        &self,
        x: &[f64],
        p: usize,
        gout: &[f64],
        acc: &mut LinearGrads,
        want_x: bool,
    ) -> Option<Vec<f64>> {
        let (nf, d) = (self.weight.rows(), self.weight.cols());
        let gw = matmul_nn(gout, x, nf, p, d);
        for (a, g) in acc.weight.iter_mut().zip(&gw) {
            *a += g;
        }
        if let Some(gb) = &mut acc.bias {
            for f in 0..nf {
                gb[f] += gout[f * p..(f + 1) * p].iter().sum::<f64>();
            }
        }
        want_x.then(|| matmul_tn(gout, self.weight.data(), nf, p, d))
    }

    fn zero_grads(&self) -> LinearGrads {
        LinearGrads {
            weight: vec![0.0; self.weight.len()],
            bias: self.bias.as_ref().map(|b| vec![0.0; b.len()]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearCache {
    pub(crate) version: u64,
    pub(crate) input_shape: Vec<usize>,
    pub(crate) out_shape: Vec<usize>,
    /// Patch rows per sample (the raw input for the fully connected layer).
    pub(crate) cols: Vec<Vec<f64>>,
}

impl LinearCache {
    fn check(&self, version: u64, grads: &[Tensor]) -> Result<()> {
        if version != self.version
            || grads.len() != self.cols.len()
            || grads.iter().any(|g| g.shape() != self.out_shape.as_slice())
        {
            return Err(Error::StaleCache(
                "cache does not match this layer or gradient batch".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub params: LinearParams,
    pub shape: ConvShape,
    pub(crate) version: u64,
}

impl Conv {
    pub fn new(params: LinearParams, shape: ConvShape) -> Result<Self> {
        if params.weight.cols() != shape.kernel_len() {
            return Err(Error::shape(format!(
                "kernel rows have length {}, geometry needs {}",
                params.weight.cols(),
                shape.kernel_len()
            )));
        }
        Ok(Conv {
            params,
            shape,
            version: 0,
        })
    }

    pub fn out_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let geo = self.shape.geometry(input)?;
        Ok(vec![self.params.filters(), geo.out_h(), geo.out_w()])
    }

    pub fn forward(&self, xs: &[Tensor]) -> Result<(Vec<Tensor>, LinearCache)> {
        let input_shape = xs
            .first()
            .ok_or_else(|| Error::shape("empty batch"))?
            .shape()
            .to_vec();
        let geo = self.shape.geometry(&input_shape)?;
        let out_shape = vec![self.params.filters(), geo.out_h(), geo.out_w()];
        let mut outs = Vec::with_capacity(xs.len());
        let mut cols = Vec::with_capacity(xs.len());
        for x in xs {
            if x.shape() != input_shape.as_slice() {
                return Err(Error::shape("batch mixes input shapes"));
            }
            let c = im2col_with(x, &geo).into_data();
            outs.push(Tensor::new_unchecked(
                out_shape.clone(),
                self.params.forward_patches(&c, geo.patches()),
            ));
            cols.push(c);
        }
        Ok((
            outs,
            LinearCache {
                version: self.version,
                input_shape,
                out_shape,
                cols,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &LinearCache,
        grads: &[Tensor],
        want_input: bool,
    ) -> Result<(Option<Vec<Tensor>>, LinearGrads)> {
        cache.check(self.version, grads)?;
        let geo = self.shape.geometry(&cache.input_shape)?;
        let p = geo.patches();
        let mut acc = self.params.zero_grads();
        let mut gin = want_input.then(|| Vec::with_capacity(grads.len()));
        for (c, g) in cache.cols.iter().zip(grads) {
            let gx = self
                .params
                .backward_patches(c, p, g.data(), &mut acc, want_input);
            if let (Some(gx), Some(gin)) = (gx, gin.as_mut()) {
                let t = Tensor::new_unchecked(vec![p, geo.patch_len()], gx);
                gin.push(col2im(&t, &geo)?);
            }
        }
        Ok((gin, acc))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fc {
    pub params: LinearParams,
    pub(crate) version: u64,
}

impl Fc {
    pub fn new(params: LinearParams) -> Self {
        Fc { params, version: 0 }
    }

    pub fn out_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let d: usize = input.iter().product();
        if d != self.params.weight.cols() {
            return Err(Error::shape(format!(
                "fully connected layer expects {} inputs, got shape {input:?}",
                self.params.weight.cols()
            )));
        }
        Ok(vec![self.params.filters(), 1, 1])
    }

    pub fn forward(&self, xs: &[Tensor]) -> Result<(Vec<Tensor>, LinearCache)> {
        let input_shape = xs
            .first()
            .ok_or_else(|| Error::shape("empty batch"))?
            .shape()
            .to_vec();
        let out_shape = self.out_shape(&input_shape)?;
        let mut outs = Vec::with_capacity(xs.len());
        let mut cols = Vec::with_capacity(xs.len());
        for x in xs {
            if x.shape() != input_shape.as_slice() {
                return Err(Error::shape("batch mixes input shapes"));
            }
            outs.push(Tensor::new_unchecked(
                out_shape.clone(),
                self.params.forward_patches(x.data(), 1),
            ));
            cols.push(x.data().to_vec());
        }
        Ok((
            outs,
            LinearCache {
                version: self.version,
                input_shape,
                out_shape,
                cols,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &LinearCache,
        grads: &[Tensor],
        want_input: bool,
    ) -> Result<(Option<Vec<Tensor>>, LinearGrads)> {
        cache.check(self.version, grads)?;
        let mut acc = self.params.zero_grads();
        let mut gin = want_input.then(|| Vec::with_capacity(grads.len()));
        for (c, g) in cache.cols.iter().zip(grads) {
            let gx = self
                .params
                .backward_patches(c, 1, g.data(), &mut acc, want_input);
            if let (Some(gx), Some(gin)) = (gx, gin.as_mut()) {
                gin.push(Tensor::new_unchecked(cache.input_shape.clone(), gx));
            }
        }
        Ok((gin, acc))
    }
}
