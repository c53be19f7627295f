//! Per-channel batch normalization (the dot-product baseline's normalizer).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Mode, ParamBlock, ParamRole};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
    pub(crate) version: u64,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    version: u64,
    shape: Vec<usize>,
    train: bool,
    xhat: Vec<Vec<f64>>,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    /// Unbiased batch variance, what the running estimate tracks.
    batch_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
            version: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn out_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 3 || input[0] != self.channels() {
            return Err(Error::shape(format!(
                "batch norm over {} channels got shape {input:?}",
                self.channels()
            )));
        }
        Ok(input.to_vec())
    }

    pub(crate) fn blocks(&self) -> Vec<ParamBlock<'_>> {
        let c = self.channels();
        vec![
            ParamBlock {
                role: ParamRole::BnGamma,
                shape: vec![c],
                data: &self.gamma,
            },
            ParamBlock {
                role: ParamRole::BnBeta,
                shape: vec![c],
                data: &self.beta,
            },
        ]
    }

    pub(crate) fn visit_mut(&mut self, f: &mut dyn FnMut(ParamRole, &mut [f64])) {
        f(ParamRole::BnGamma, &mut self.gamma);
        f(ParamRole::BnBeta, &mut self.beta);
    }

    /// Pure forward pass. In training mode the batch statistics land in the
    /// cache; [`BatchNorm::commit`] folds them into the running estimates.
    pub fn forward(&self, xs: &[Tensor], mode: Mode) -> Result<(Vec<Tensor>, BnCache)> {
        let shape = xs
            .first()
            .ok_or_else(|| Error::shape("empty batch"))?
            .shape()
            .to_vec();
        self.out_shape(&shape)?;
        if xs.iter().any(|x| x.shape() != shape.as_slice()) {
            return Err(Error::shape("batch mixes input shapes"));
        }
        let c = self.channels();
        let hw = shape[1] * shape[2];
        let train = mode == Mode::Train;
        let count = (xs.len() * hw) as f64;
        if train && xs.len() < 2 {
            return Err(Error::InvalidArgument(
                "batch norm needs at least 2 samples in training mode".into(),
            ));
        }

        let (mean, var_b, var_u) = if train {
            let mut mean = vec![0.0; c];
            for x in xs {
                for ch in 0..c {
                    mean[ch] += x.data()[ch * hw..(ch + 1) * hw].iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count);
            let mut ss = vec![0.0; c];
            for x in xs {
                for ch in 0..c {
                    ss[ch] += x.data()[ch * hw..(ch + 1) * hw]
                        .iter()
                        .map(|v| (v - mean[ch]) * (v - mean[ch]))
                        .sum::<f64>();
                }
            }
            let var_b: Vec<f64> = ss.iter().map(|s| s / count).collect();
            let var_u: Vec<f64> = ss.iter().map(|s| s / (count - 1.0)).collect();
            (mean, var_b, var_u)
        } else {
            (
                self.running_mean.clone(),
                self.running_var.clone(),
                self.running_var.clone(),
            )
        };
        let inv_std: Vec<f64> = var_b.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();

        let mut outs = Vec::with_capacity(xs.len());
        let mut xhats = Vec::with_capacity(xs.len());
        for x in xs {
            let mut xhat = x.data().to_vec();
            let mut out = vec![0.0; xhat.len()];
            for ch in 0..c {
                for i in ch * hw..(ch + 1) * hw {
                    xhat[i] = (xhat[i] - mean[ch]) * inv_std[ch];
                    out[i] = self.gamma[ch] * xhat[i] + self.beta[ch];
                }
            }
            outs.push(Tensor::new_unchecked(shape.clone(), out));
            xhats.push(xhat);
        }
        Ok((
            outs,
            BnCache {
                version: self.version,
                shape,
                train,
                xhat: xhats,
                inv_std,
                batch_mean: mean,
                batch_var: var_u,
            },
        ))
    }

    /// Exponential-moving-average update of the running statistics from a
    /// training-mode forward pass.
    pub fn commit(&mut self, cache: &BnCache) {
        if !cache.train {
            return;
        }
        let m = self.momentum;
        for ch in 0..self.channels() {
            self.running_mean[ch] = (1.0 - m) * self.running_mean[ch] + m * cache.batch_mean[ch];
            self.running_var[ch] = (1.0 - m) * self.running_var[ch] + m * cache.batch_var[ch];
        }
    }

    /// Returns input gradients and `[dgamma, dbeta]`.
    pub fn backward(
        &self,
        cache: &BnCache,
        grads: &[Tensor],
    ) -> Result<(Vec<Tensor>, Vec<Vec<f64>>)> {
        if cache.version != self.version
            || grads.len() != cache.xhat.len()
            || grads.iter().any(|g| g.shape() != cache.shape.as_slice())
        {
            return Err(Error::StaleCache(
                "batch norm cache does not match this gradient batch".into(),
            ));
        }
        let c = self.channels();
        let hw = cache.shape[1] * cache.shape[2];
        let count = (grads.len() * hw) as f64;
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for (g, xh) in grads.iter().zip(&cache.xhat) {
            for ch in 0..c {
                for i in ch * hw..(ch + 1) * hw {
                    dgamma[ch] += g.data()[i] * xh[i];
                    dbeta[ch] += g.data()[i];
                }
            }
        }
        let outs = grads
            .iter()
            .zip(&cache.xhat)
            .map(|(g, xh)| {
                let mut dx = vec![0.0; xh.len()];
                for ch in 0..c {
                    let k = self.gamma[ch] * cache.inv_std[ch];
                    for i in ch * hw..(ch + 1) * hw {
                        dx[i] = if cache.train {
                            k * (g.data()[i] - dbeta[ch] / count - xh[i] * dgamma[ch] / count)
                        } else {
                            k * g.data()[i]
                        };
                    }
                }
                Tensor::new_unchecked(cache.shape.clone(), dx)
            })
            .collect();
        Ok((outs, vec![dgamma, dbeta]))
    }
}
