//! Network building blocks with explicit forward/backward passes over a
//! batch of `[C, H, W]` samples.

pub mod batchnorm;
pub mod conv;
pub mod orth;
pub mod pool;
pub mod sphere;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use batchnorm::BatchNorm;
pub use conv::{Conv, Fc, LinearParams};
pub use orth::orthogonality_penalty;
pub use sphere::{ConvShape, Rescale, SphereConv, SphereFc, SphereParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// What a parameter block is, which decides how the optimizer and the
/// regularizers treat it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamRole {
    SphereKernel,
    Kernel,
    Bias,
    CurvatureK,
    RescaleScale,
    RescaleShift,
    BnGamma,
    BnBeta,
    HeadWeight,
    HeadBias,
}

impl ParamRole {
    pub fn name(self) -> &'static str {
        match self {
            ParamRole::SphereKernel => "sphere_kernel",
            ParamRole::Kernel => "kernel",
            ParamRole::Bias => "bias",
            ParamRole::CurvatureK => "k",
            ParamRole::RescaleScale => "rescale_beta",
            ParamRole::RescaleShift => "rescale_gamma",
            ParamRole::BnGamma => "bn_gamma",
            ParamRole::BnBeta => "bn_beta",
            ParamRole::HeadWeight => "head_weight",
            ParamRole::HeadBias => "head_bias",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamBlock<'a> {
    pub role: ParamRole,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    SphereConv(SphereConv),
    SphereFc(SphereFc),
    Conv(Conv),
    Fc(Fc),
    Relu,
    MaxPool,
    BatchNorm(BatchNorm),
}

#[derive(Debug, Clone)]
pub enum LayerCache {
    Sphere(sphere::SphereCache),
    Linear(conv::LinearCache),
    Relu(pool::ReluCache),
    Pool(pool::PoolCache),
    BatchNorm(batchnorm::BnCache),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::SphereConv(_) => "sphere_conv",
            Layer::SphereFc(_) => "sphere_fc",
            Layer::Conv(_) => "conv",
            Layer::Fc(_) => "fc",
            Layer::Relu => "relu",
            Layer::MaxPool => "maxpool",
            Layer::BatchNorm(_) => "batchnorm",
        }
    }

    pub fn out_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::SphereConv(l) => l.out_shape(input),
            Layer::SphereFc(l) => l.out_shape(input),
            Layer::Conv(l) => l.out_shape(input),
            Layer::Fc(l) => l.out_shape(input),
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool => pool::maxpool_out_shape(input),
            Layer::BatchNorm(l) => l.out_shape(input),
        }
    }

    pub fn sphere_params(&self) -> Option<&SphereParams> {
        match self {
            Layer::SphereConv(l) => Some(&l.params),
            Layer::SphereFc(l) => Some(&l.params),
            _ => None,
        }
    }

    pub fn sphere_params_mut(&mut self) -> Option<&mut SphereParams> {
        self.bump();
        match self {
            Layer::SphereConv(l) => Some(&mut l.params),
            Layer::SphereFc(l) => Some(&mut l.params),
            _ => None,
        }
    }

    /// Parameter blocks in the fixed order used by gradients and optimizers.
    pub fn param_blocks(&self) -> Vec<ParamBlock<'_>> {
        match self {
            Layer::SphereConv(l) => l.params.blocks(),
            Layer::SphereFc(l) => l.params.blocks(),
            Layer::Conv(l) => l.params.blocks(),
            Layer::Fc(l) => l.params.blocks(),
            Layer::BatchNorm(l) => l.blocks(),
            Layer::Relu | Layer::MaxPool => Vec::new(),
        }
    }

    /// Visits parameter blocks mutably, in `param_blocks` order. Any cache
    /// taken before this call is invalidated.
    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamRole, &mut [f64])) {
        self.bump();
        match self {
            Layer::SphereConv(l) => l.params.visit_mut(f),
            Layer::SphereFc(l) => l.params.visit_mut(f),
            Layer::Conv(l) => l.params.visit_mut(f),
            Layer::Fc(l) => l.params.visit_mut(f),
            Layer::BatchNorm(l) => l.visit_mut(f),
            Layer::Relu | Layer::MaxPool => {}
        }
    }

    fn bump(&mut self) {
        let v = match self {
            Layer::SphereConv(l) => &mut l.version,
            Layer::SphereFc(l) => &mut l.version,
            Layer::Conv(l) => &mut l.version,
            Layer::Fc(l) => &mut l.version,
            Layer::BatchNorm(l) => &mut l.version,
            Layer::Relu | Layer::MaxPool => return,
        };
        *v = v.wrapping_add(1);
    }

    pub(crate) fn enforce_constraints(&mut self) {
        match self {
            Layer::SphereConv(l) => l.params.enforce_constraints(),
            Layer::SphereFc(l) => l.params.enforce_constraints(),
            _ => {}
        }
    }

    pub fn forward(&self, xs: &[Tensor], mode: Mode) -> Result<(Vec<Tensor>, LayerCache)> {
        Ok(match self {
            Layer::SphereConv(l) => {
                let (y, c) = l.forward(xs)?;
                (y, LayerCache::Sphere(c))
            }
            Layer::SphereFc(l) => {
                let (y, c) = l.forward(xs)?;
                (y, LayerCache::Sphere(c))
            }
            Layer::Conv(l) => {
                let (y, c) = l.forward(xs)?;
                (y, LayerCache::Linear(c))
            }
            Layer::Fc(l) => {
                let (y, c) = l.forward(xs)?;
                (y, LayerCache::Linear(c))
            }
            Layer::Relu => {
                let (y, c) = pool::relu_forward(xs);
                (y, LayerCache::Relu(c))
            }
            Layer::MaxPool => {
                let (y, c) = pool::maxpool_forward(xs)?;
                (y, LayerCache::Pool(c))
            }
            Layer::BatchNorm(l) => {
                let (y, c) = l.forward(xs, mode)?;
                (y, LayerCache::BatchNorm(c))
            }
        })
    }

    /// Input gradients (when `want_input`) and parameter gradients in
    /// `param_blocks` order.
    pub fn backward(
        &self,
        cache: &LayerCache,
        grads: &[Tensor],
        want_input: bool,
    ) -> Result<(Option<Vec<Tensor>>, Vec<Vec<f64>>)> {
        match (self, cache) {
            (Layer::SphereConv(l), LayerCache::Sphere(c)) => {
                let (gi, gp) = l.backward(c, grads, want_input)?;
                Ok((gi, gp.into_blocks()))
            }
            (Layer::SphereFc(l), LayerCache::Sphere(c)) => {
                let (gi, gp) = l.backward(c, grads, want_input)?;
                Ok((gi, gp.into_blocks()))
            }
            (Layer::Conv(l), LayerCache::Linear(c)) => {
                let (gi, gp) = l.backward(c, grads, want_input)?;
                Ok((gi, gp.into_blocks()))
            }
            (Layer::Fc(l), LayerCache::Linear(c)) => {
                let (gi, gp) = l.backward(c, grads, want_input)?;
                Ok((gi, gp.into_blocks()))
            }
            (Layer::Relu, LayerCache::Relu(c)) => {
                Ok((Some(pool::relu_backward(c, grads)?), Vec::new()))
            }
            (Layer::MaxPool, LayerCache::Pool(c)) => {
                Ok((Some(pool::maxpool_backward(c, grads)?), Vec::new()))
            }
            (Layer::BatchNorm(l), LayerCache::BatchNorm(c)) => {
                let (gi, gp) = l.backward(c, grads)?;
                Ok((Some(gi), gp))
            }
            _ => Err(Error::StaleCache(format!(
                "cache was not produced by a {} layer",
                self.kind()
            ))),
        }
    }

    /// Folds training-mode batch statistics into running estimates.
    pub fn commit(&mut self, cache: &LayerCache) {
        if let (Layer::BatchNorm(l), LayerCache::BatchNorm(c)) = (self, cache) {
            l.commit(c);
        }
    }
}
