//! ReLU and 2×2 max pooling.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct ReluCache {
    /// Inputs that were strictly positive.
    mask: Vec<Vec<bool>>,
    shape: Vec<usize>,
}

impl ReluCache {
    /// Which inputs passed the gate, flattened over the batch.
    pub(crate) fn gates(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().flatten().map(|&on| on as usize)
    }
}

pub fn relu_forward(xs: &[Tensor]) -> (Vec<Tensor>, ReluCache) {
    let shape = xs.first().map(|x| x.shape().to_vec()).unwrap_or_default();
    let mut mask = Vec::with_capacity(xs.len());
    let outs = xs
        .iter()
        .map(|x| {
            mask.push(x.data().iter().map(|&v| v > 0.0).collect());
            Tensor::new_unchecked(
                x.shape().to_vec(),
                // NaN passes through so divergence stays visible downstream
                x.data().iter().map(|&v| if v.is_nan() { v } else { v.max(0.0) }).collect(),
            )
        })
        .collect();
    (outs, ReluCache { mask, shape })
}

pub fn relu_backward(cache: &ReluCache, grads: &[Tensor]) -> Result<Vec<Tensor>> {
    if grads.len() != cache.mask.len() || grads.iter().any(|g| g.shape() != cache.shape) {
        return Err(Error::StaleCache("relu gradient batch does not match".into()));
    }
    Ok(grads
        .iter()
        .zip(&cache.mask)
        .map(|(g, m)| {
            Tensor::new_unchecked(
                g.shape().to_vec(),
                g.data()
                    .iter()
                    .zip(m)
                    .map(|(&v, &on)| if on { v } else { 0.0 })
                    .collect(),
            )
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    input_shape: Vec<usize>,
    out_shape: Vec<usize>,
    /// Flat input index chosen by each output cell.
    argmax: Vec<Vec<usize>>,
}

impl PoolCache {
    pub(crate) fn winners(&self) -> impl Iterator<Item = usize> + '_ {
        self.argmax.iter().flatten().copied()
    }
}

pub fn maxpool_out_shape(input: &[usize]) -> Result<Vec<usize>> {
    match *input {
        [c, h, w] if h >= 2 && w >= 2 => Ok(vec![c, h / 2, w / 2]),
        _ => Err(Error::shape(format!(
            "2x2 pooling needs a [C, H, W] input with H, W >= 2, got {input:?}"
        ))),
    }
}

/// Non-overlapping 2×2 max pooling; odd trailing rows/columns are dropped
/// and ties go to the first element in row-major scan order.
pub fn maxpool_forward(xs: &[Tensor]) -> Result<(Vec<Tensor>, PoolCache)> {
    let input_shape = xs
        .first()
        .ok_or_else(|| Error::shape("empty batch"))?
        .shape()
        .to_vec();
    let out_shape = maxpool_out_shape(&input_shape)?;
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let mut outs = Vec::with_capacity(xs.len());
    let mut argmax = Vec::with_capacity(xs.len());
    for x in xs {
        if x.shape() != input_shape.as_slice() {
            return Err(Error::shape("batch mixes input shapes"));
        }
        let d = x.data();
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut arg = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = (ch * h + 2 * y) * w + 2 * xx;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = (ch * h + 2 * y + dy) * w + 2 * xx + dx;
                        if d[i] > d[best] || (d[i].is_nan() && !d[best].is_nan()) {
                            best = i;
                        }
                    }
                    out.push(d[best]);
                    arg.push(best);
                }
            }
        }
        outs.push(Tensor::new_unchecked(out_shape.clone(), out));
        argmax.push(arg);
    }
    Ok((
        outs,
        PoolCache {
            input_shape,
            out_shape,
            argmax,
        },
    ))
}

pub fn maxpool_backward(cache: &PoolCache, grads: &[Tensor]) -> Result<Vec<Tensor>> {
    if grads.len() != cache.argmax.len() || grads.iter().any(|g| g.shape() != cache.out_shape) {
        return Err(Error::StaleCache("pool gradient batch does not match".into()));
    }
    Ok(grads
        .iter()
        .zip(&cache.argmax)
        .map(|(g, arg)| {
            let mut gin = Tensor::zeros(&cache.input_shape);
            let d = gin.data_mut();
            for (&i, &v) in arg.iter().zip(g.data()) {
                d[i] += v;
            }
            gin
        })
        .collect())
}
