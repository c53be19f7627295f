//! Binary model checkpoints.
//!
//! Layout, all integers little-endian: magic `SPHN`, format version (u32),
//! model name, input shape, loss, then one record per layer (kind tag,
//! geometry, operator, parameter blocks as raw f64) and the classifier head.
//! Parameters are stored bit for bit.

use std::path::Path;

use crate::angular::AngularOperator;
use crate::error::{Error, Result};
use crate::layers::{
    BatchNorm, Conv, ConvShape, Fc, Layer, LinearParams, Rescale, SphereConv, SphereFc,
    SphereParams,
};
use crate::losses::{ClassifierHead, LossSpec};
use crate::network::Model;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SPHN";
pub const FORMAT_VERSION: u32 = 1;

const WHAT: &str = "checkpoint";

pub fn save(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.str(&model.name);
    w.dims(&model.input_shape);
    w.loss(&model.loss);
    w.u32(model.layers.len() as u32);
    for l in &model.layers {
        w.layer(l);
    }
    w.tensor(&model.head.weight);
    w.opt_vec(model.head.bias.as_deref());
    w.0
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::format(WHAT, "missing SPHN magic"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::format(
            WHAT,
            format!("unsupported format version {version} (expected {FORMAT_VERSION})"),
        ));
    }
    let name = r.str()?;
    let input_shape = r.dims()?;
    let loss = r.loss()?;
    let n = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        layers.push(r.layer()?);
    }
    let weight = r.tensor()?;
    let bias = r.opt_vec()?;
    if r.pos != bytes.len() {
        return Err(Error::format(
            WHAT,
            format!("{} trailing bytes", bytes.len() - r.pos),
        ));
    }
    let mut head = ClassifierHead::new(weight, bias.is_some())?;
    if let Some(b) = bias {
        if b.len() != head.classes() {
            return Err(Error::format(WHAT, "head bias length does not match classes"));
        }
        head.bias = Some(b);
    }
    Model::from_parts(name, input_shape, layers, head, loss)
}

const TAG_SPHERE_CONV: u8 = 1;
const TAG_SPHERE_FC: u8 = 2;
const TAG_CONV: u8 = 3;
const TAG_FC: u8 = 4;
const TAG_RELU: u8 = 5;
const TAG_POOL: u8 = 6;
const TAG_BN: u8 = 7;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn dims(&mut self, d: &[usize]) {
        self.u32(d.len() as u32);
        d.iter().for_each(|&x| self.u64(x as u64));
    }
    fn vec(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|&x| self.f64(x));
    }
    fn opt_vec(&mut self, v: Option<&[f64]>) {
        match v {
            Some(v) => {
                self.u8(1);
                self.vec(v);
            }
            None => self.u8(0),
        }
    }
    fn tensor(&mut self, t: &Tensor) {
        self.dims(t.shape());
        t.data().iter().for_each(|&x| self.f64(x));
    }
    fn op(&mut self, op: &AngularOperator) {
        match op {
            AngularOperator::Linear { a, b } => {
                self.u8(0);
                self.f64(*a);
                self.f64(*b);
            }
            AngularOperator::Cosine => self.u8(1),
            AngularOperator::Sigmoid { k } => {
                self.u8(2);
                self.f64(*k);
            }
            AngularOperator::LearnableSigmoid { k, k_min } => {
                self.u8(3);
                self.f64(*k_min);
                self.vec(k);
            }
        }
    }
    fn loss(&mut self, l: &LossSpec) {
        match l {
            LossSpec::Softmax => self.u8(0),
            LossSpec::WSoftmax { g } => {
                self.u8(1);
                self.op(g);
            }
            LossSpec::GaSoftmax { g, m } => {
                self.u8(2);
                self.op(g);
                self.u32(*m);
            }
            LossSpec::SSoftmax { s } => {
                self.u8(3);
                self.f64(*s);
            }
        }
    }
    fn conv_shape(&mut self, s: &ConvShape) {
        for v in [s.in_channels, s.kh, s.kw, s.stride, s.pad] {
            self.u64(v as u64);
        }
    }
    fn sphere(&mut self, p: &SphereParams) {
        self.op(&p.op);
        self.tensor(&p.weight);
        self.opt_vec(p.bias.as_deref());
        match &p.rescale {
            None => self.u8(0),
            Some(r) => {
                self.u8(if r.learnable { 2 } else { 1 });
                self.vec(&r.beta);
                self.vec(&r.gamma);
            }
        }
    }
    fn linear(&mut self, p: &LinearParams) {
        self.tensor(&p.weight);
        self.opt_vec(p.bias.as_deref());
    }
    fn layer(&mut self, l: &Layer) {
        match l {
            Layer::SphereConv(c) => {
                self.u8(TAG_SPHERE_CONV);
                self.conv_shape(&c.shape);
                self.sphere(&c.params);
            }
            Layer::SphereFc(f) => {
                self.u8(TAG_SPHERE_FC);
                self.sphere(&f.params);
            }
            Layer::Conv(c) => {
                self.u8(TAG_CONV);
                self.conv_shape(&c.shape);
                self.linear(&c.params);
            }
            Layer::Fc(f) => {
                self.u8(TAG_FC);
                self.linear(&f.params);
            }
            Layer::Relu => self.u8(TAG_RELU),
            Layer::MaxPool => self.u8(TAG_POOL),
            Layer::BatchNorm(b) => {
                self.u8(TAG_BN);
                self.f64(b.eps);
                self.f64(b.momentum);
                for v in [&b.gamma, &b.beta, &b.running_mean, &b.running_var] {
                    self.vec(v);
                }
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                WHAT,
                format!("truncated at byte {} (wanted {n} more)", self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::format(WHAT, "size overflows usize"))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::format(WHAT, "name is not UTF-8"))
    }
    fn dims(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()? as usize;
        if n > 8 {
            return Err(Error::format(WHAT, format!("rank {n} is implausible")));
        }
        (0..n).map(|_| self.usize()).collect()
    }
    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::format(WHAT, "block too large"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn vec(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        self.floats(n)
    }
    fn opt_vec(&mut self) -> Result<Option<Vec<f64>>> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.vec()?)),
            t => Err(Error::format(WHAT, format!("bad presence flag {t}"))),
        }
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let dims = self.dims()?;
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::format(WHAT, "tensor too large"))?;
        let data = self.floats(n)?;
        Tensor::new(dims, data)
    }
    fn op(&mut self) -> Result<AngularOperator> {
        Ok(match self.u8()? {
            0 => AngularOperator::Linear {
                a: self.f64()?,
                b: self.f64()?,
            },
            1 => AngularOperator::Cosine,
            2 => AngularOperator::Sigmoid { k: self.f64()? },
            3 => {
                let k_min = self.f64()?;
                AngularOperator::LearnableSigmoid {
                    k_min,
                    k: self.vec()?,
                }
            }
            t => return Err(Error::format(WHAT, format!("unknown operator tag {t}"))),
        })
    }
    fn loss(&mut self) -> Result<LossSpec> {
        Ok(match self.u8()? {
            0 => LossSpec::Softmax,
            1 => LossSpec::WSoftmax { g: self.op()? },
            2 => LossSpec::GaSoftmax {
                g: self.op()?,
                m: self.u32()?,
            },
            3 => LossSpec::SSoftmax { s: self.f64()? },
            t => return Err(Error::format(WHAT, format!("unknown loss tag {t}"))),
        })
    }
    fn conv_shape(&mut self) -> Result<ConvShape> {
        Ok(ConvShape {
            in_channels: self.usize()?,
            kh: self.usize()?,
            kw: self.usize()?,
            stride: self.usize()?,
            pad: self.usize()?,
        })
    }
    fn sphere(&mut self) -> Result<SphereParams> {
        let op = self.op()?;
        let weight = self.tensor()?;
        let bias = self.opt_vec()?;
        let rescale = match self.u8()? {
            0 => None,
            f @ (1 | 2) => Some(Rescale {
                beta: self.vec()?,
                gamma: self.vec()?,
                learnable: f == 2,
            }),
            t => return Err(Error::format(WHAT, format!("bad rescale flag {t}"))),
        };
        let mut p = SphereParams::new(weight, op, bias.is_some(), rescale.as_ref().map(|r| r.learnable))?;
        let f = p.filters();
        if bias.as_ref().is_some_and(|b| b.len() != f)
            || rescale.as_ref().is_some_and(|r| r.beta.len() != f || r.gamma.len() != f)
        {
            return Err(Error::format(WHAT, "per-filter block length does not match kernels"));
        }
        p.bias = bias;
        p.rescale = rescale;
        Ok(p)
    }
    fn linear(&mut self) -> Result<LinearParams> {
        let weight = self.tensor()?;
        let bias = self.opt_vec()?;
        let mut p = LinearParams::new(weight, bias.is_some())?;
        if bias.as_ref().is_some_and(|b| b.len() != p.filters()) {
            return Err(Error::format(WHAT, "bias length does not match kernels"));
        }
        p.bias = bias;
        Ok(p)
    }
    fn layer(&mut self) -> Result<Layer> {
        Ok(match self.u8()? {
            TAG_SPHERE_CONV => {
                let shape = self.conv_shape()?;
                Layer::SphereConv(SphereConv::new(self.sphere()?, shape)?)
            }
            TAG_SPHERE_FC => Layer::SphereFc(SphereFc::new(self.sphere()?)),
            TAG_CONV => {
                let shape = self.conv_shape()?;
                Layer::Conv(Conv::new(self.linear()?, shape)?)
            }
            TAG_FC => Layer::Fc(Fc::new(self.linear()?)),
            TAG_RELU => Layer::Relu,
            TAG_POOL => Layer::MaxPool,
            TAG_BN => {
                let eps = self.f64()?;
                let momentum = self.f64()?;
                let gamma = self.vec()?;
                let mut b = BatchNorm::new(gamma.len());
                b.eps = eps;
                b.momentum = momentum;
                b.gamma = gamma;
                b.beta = self.vec()?;
                b.running_mean = self.vec()?;
                b.running_var = self.vec()?;
                let c = b.channels();
                if b.beta.len() != c || b.running_mean.len() != c || b.running_var.len() != c {
                    return Err(Error::format(WHAT, "batch-norm blocks disagree in length"));
                }
                Layer::BatchNorm(b)
            }
            t => return Err(Error::format(WHAT, format!("unknown layer tag {t}"))),
        })
    }
}
