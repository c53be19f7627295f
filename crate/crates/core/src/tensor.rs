//! Dense row-major `f64` tensors and the handful of kernels the layers need.
//!
//! Patch matrices produced by [`im2col`] are laid out channel-major within a
//! row: entry `c * kh * kw + i * kw + j` of a row holds channel `c`, kernel
//! offset `(i, j)`. Flattened kernels use the same layout, so a kernel row and
//! a patch row can be dotted directly.

use crate::error::{Error, Result};

/// Floor applied to vector norms before dividing by them.
pub const EPS_NORM: f64 = 1e-12;
/// Cosines are clamped to `[-1 + EPS_CLAMP, 1 - EPS_CLAMP]` before `acos`.
pub const EPS_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, rejecting zero extents, length mismatches and
    /// non-finite entries.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape, data.len())?;
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Tensor { shape, data })
    }

    /// Skips the finiteness scan. The shape/length invariant is still
    /// enforced.
    pub fn new_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Same data, new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        check_shape(shape, self.data.len())?;
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Row `r` of a rank-2 tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.shape[1];
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn set2(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.shape[1];
        self.data[r * cols + c] = v;
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut t = self.clone();
        t.scale(c);
        t
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose2(&self) -> Tensor {
        let (r, c) = (self.shape[0], self.shape[1]);
        Tensor::from_fn(&[c, r], |i| self.data[(i % r) * c + i / r])
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::shape(format!(
            "extents must be positive, got {shape:?}"
        )));
    }
    let n: usize = shape.iter().product();
    if n != len {
        return Err(Error::shape(format!(
            "shape {shape:?} holds {n} values, data has {len}"
        )));
    }
    Ok(())
}

/// Sequential left-to-right dot product; the fixed order keeps results
/// bit-reproducible.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine of the angle between `w` and `x`, with both norms floored at
/// `eps_norm` and the result clamped away from ±1 by `eps_clamp`.
pub fn safe_cos(w: &[f64], x: &[f64], eps_norm: f64, eps_clamp: f64) -> f64 {
    let denom = norm(w).max(eps_norm) * norm(x).max(eps_norm);
    clamp_cos(dot(w, x) / denom, eps_clamp)
}

#[inline]
pub(crate) fn clamp_cos(t: f64, eps_clamp: f64) -> f64 {
    t.clamp(-1.0 + eps_clamp, 1.0 - eps_clamp)
}

/// Divides every row by its Euclidean norm.
pub fn row_l2_normalize(m: &Tensor) -> Result<Tensor> {
    if m.rank() != 2 {
        return Err(Error::shape(format!(
            "row_l2_normalize expects a matrix, got shape {:?}",
            m.shape()
        )));
    }
    let mut out = m.clone();
    for r in 0..m.rows() {
        let n = norm(m.row(r));
        if n < EPS_NORM {
            return Err(Error::DegenerateRow { row: r, norm: n });
        }
        out.row_mut(r).iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

/// Geometry of a strided, zero-padded 2-D window sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl PatchGeometry {
    pub fn new(
        input_shape: &[usize],
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let [channels, height, width] = match *input_shape {
            [c, h, w] => [c, h, w],
            _ => {
                return Err(Error::shape(format!(
                    "expected a [C, H, W] input, got {input_shape:?}"
                )))
            }
        };
        if stride == 0 {
            return Err(Error::shape("stride must be at least 1"));
        }
        if kh == 0 || kw == 0 || kh > height + 2 * pad || kw > width + 2 * pad {
            return Err(Error::shape(format!(
                "kernel {kh}x{kw} does not fit a {height}x{width} input with padding {pad}"
            )));
        }
        Ok(PatchGeometry {
            channels,
            height,
            width,
            kh,
            kw,
            stride,
            pad,
        })
    }

    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.pad - self.kw) / self.stride + 1
    }

    pub fn patches(&self) -> usize {
        self.out_h() * self.out_w()
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    /// Calls `f(patch, column, input_index)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (oh, ow) = (self.out_h(), self.out_w());
        let (h, w) = (self.height as isize, self.width as isize);
        for py in 0..oh {
            for px in 0..ow {
                let p = py * ow + px;
                let y0 = (py * self.stride) as isize - self.pad as isize;
                let x0 = (px * self.stride) as isize - self.pad as isize;
                for c in 0..self.channels {
                    for i in 0..self.kh {
                        let y = y0 + i as isize;
                        if y < 0 || y >= h {
                            continue;
                        }
                        for j in 0..self.kw {
                            let x = x0 + j as isize;
                            if x < 0 || x >= w {
                                continue;
                            }
                            let col = (c * self.kh + i) * self.kw + j;
                            let src = (c * self.height + y as usize) * self.width + x as usize;
                            f(p, col, src);
                        }
                    }
                }
            }
        }
    }
}

/// Unfolds every receptive field of `input` (shape `[C, H, W]`) into a row
/// of the returned `[P, C * kh * kw]` matrix.
pub fn im2col(input: &Tensor, kh: usize, kw: usize, stride: usize, pad: usize) -> Result<Tensor> {
    let geo = PatchGeometry::new(input.shape(), kh, kw, stride, pad)?;
    Ok(im2col_with(input, &geo))
}

pub(crate) fn im2col_with(input: &Tensor, geo: &PatchGeometry) -> Tensor {
    let d = geo.patch_len();
    let mut out = vec![0.0; geo.patches() * d];
    let src = input.data();
    geo.for_each_tap(|p, col, s| out[p * d + col] = src[s]);
    Tensor::new_unchecked(vec![geo.patches(), d], out)
}

/// Adjoint of [`im2col`]: scatters patch rows back onto a `[C, H, W]` grid,
/// summing overlapping contributions and dropping padded taps.
pub fn col2im(cols: &Tensor, geo: &PatchGeometry) -> Result<Tensor> {
    if cols.shape() != [geo.patches(), geo.patch_len()] {
        return Err(Error::shape(format!(
            "col2im expects [{}, {}], got {:?}",
            geo.patches(),
            geo.patch_len(),
            cols.shape()
        )));
    }
    let d = geo.patch_len();
    let mut out = vec![0.0; geo.channels * geo.height * geo.width];
    let src = cols.data();
    geo.for_each_tap(|p, col, s| out[s] += src[p * d + col]);
    Ok(Tensor::new_unchecked(
        vec![geo.channels, geo.height, geo.width],
        out,
    ))
}

/// `a [m, k]` times the transpose of `b [n, k]`, giving `[m, n]`.
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = dot(ar, &b[j * k..(j + 1) * k]);
        }
    }
    out
}

/// `a [m, n]` (used as given) times `b [n, k]`, giving `[m, k]`.
pub(crate) fn matmul_nn(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let orow = &mut out[i * k..(i + 1) * k];
        for l in 0..n {
            let s = a[i * n + l];
            if s == 0.0 {
                continue;
            }
            let brow = &b[l * k..(l + 1) * k];
            for j in 0..k {
                orow[j] += s * brow[j];
            }
        }
    }
    out
}

/// Transpose of `a [m, n]` times `b [m, k]`, giving `[n, k]`.
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for l in 0..m {
        let brow = &b[l * k..(l + 1) * k];
        for i in 0..n {
            let s = a[l * n + i];
            if s == 0.0 {
                continue;
            }
            let orow = &mut out[i * k..(i + 1) * k];
            for j in 0..k {
                orow[j] += s * brow[j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn rejects_non_finite_and_bad_lengths() {
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(Tensor::new(vec![3], vec![1.0, 2.0]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
        assert!(Tensor::new(vec![2, 1], vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn im2col_identity_patch() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let cols = im2col(&x, 2, 2, 1, 0).unwrap();
        assert_eq!(cols.shape(), &[1, 4]);
        assert_eq!(cols.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn im2col_enumerates_windows() {
        let x = Tensor::new(vec![1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let cols = im2col(&x, 2, 2, 1, 0).unwrap();
        assert_eq!(cols.shape(), &[4, 4]);
        assert_eq!(cols.row(0), &[1.0, 2.0, 4.0, 5.0]);
        assert_eq!(cols.row(1), &[2.0, 3.0, 5.0, 6.0]);
        assert_eq!(cols.row(2), &[4.0, 5.0, 7.0, 8.0]);
        assert_eq!(cols.row(3), &[5.0, 6.0, 8.0, 9.0]);
    }

    #[test]
    fn im2col_zero_border() {
        let x = Tensor::new(vec![1, 1, 1], vec![7.0]).unwrap();
        let cols = im2col(&x, 3, 3, 1, 1).unwrap();
        assert_eq!(cols.data(), &[0.0, 0.0, 0.0, 0.0, 7.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn im2col_channel_major_and_stride() {
        // two channels, stride 2 over a 4x4 grid
        let x = Tensor::from_fn(&[2, 4, 4], |i| i as f64);
        let cols = im2col(&x, 2, 2, 2, 0).unwrap();
        assert_eq!(cols.shape(), &[4, 8]);
        assert_eq!(cols.row(3), &[10.0, 11.0, 14.0, 15.0, 26.0, 27.0, 30.0, 31.0]);
    }

    #[test]
    fn im2col_kernel_too_large() {
        let x = Tensor::zeros(&[1, 2, 2]);
        assert!(matches!(im2col(&x, 3, 3, 1, 0), Err(Error::Shape(_))));
        assert!(im2col(&x, 2, 2, 0, 0).is_err());
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let mut rng = Rng::new(11);
        for &(c, h, w, k, s, p) in &[
            (1, 3, 3, 2, 1, 0),
            (2, 5, 4, 3, 1, 1),
            (3, 7, 7, 3, 2, 1),
            (2, 6, 6, 2, 2, 0),
        ] {
            let a = Tensor::from_fn(&[c, h, w], |_| rng.normal());
            let geo = PatchGeometry::new(a.shape(), k, k, s, p).unwrap();
            let b = Tensor::from_fn(&[geo.patches(), geo.patch_len()], |_| rng.normal());
            let lhs = im2col_with(&a, &geo).dot(&b);
            let rhs = a.dot(&col2im(&b, &geo).unwrap());
            assert!((lhs - rhs).abs() <= 1e-10, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn safe_cos_examples() {
        let t = safe_cos(&[1.0, 0.0], &[1.0, 0.0], EPS_NORM, EPS_CLAMP);
        assert_eq!(t, 1.0 - EPS_CLAMP);
        assert_eq!(safe_cos(&[1.0, 0.0], &[0.0, 1.0], EPS_NORM, EPS_CLAMP), 0.0);
        assert_eq!(safe_cos(&[0.0, 0.0], &[1.0, 0.0], 1e-12, EPS_CLAMP), 0.0);
    }

    #[test]
    fn row_normalize_examples() {
        let m = Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap();
        let n = row_l2_normalize(&m).unwrap();
        assert!((n.data()[0] - 0.6).abs() < 1e-15 && (n.data()[1] - 0.8).abs() < 1e-15);

        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(row_l2_normalize(&eye).unwrap(), eye);

        let z = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            row_l2_normalize(&z),
            Err(Error::DegenerateRow { row: 1, .. })
        ));
    }

    #[test]
    fn matmul_helpers_agree() {
        let mut rng = Rng::new(3);
        let a: Vec<f64> = (0..6).map(|_| rng.normal()).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|_| rng.normal()).collect(); // 4x3 or 3x4
        let nt = matmul_nt(&a, &b, 2, 4, 3);
        // b viewed as [4,3]; its transpose is [3,4]
        let bt: Vec<f64> = (0..12).map(|i| b[(i % 4) * 3 + i / 4]).collect();
        let nn = matmul_nn(&a, &bt, 2, 3, 4);
        for (x, y) in nt.iter().zip(&nn) {
            assert!((x - y).abs() < 1e-14);
        }
        let at: Vec<f64> = (0..6).map(|i| a[(i % 2) * 3 + i / 2]).collect(); // 3x2
        let tn = matmul_tn(&at, &bt, 3, 2, 4);
        for (x, y) in tn.iter().zip(&nn) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vec3() -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(-10.0f64..10.0, 3)
        }

        proptest! {
            #[test]
            fn safe_cos_symmetric_and_scale_invariant(
                w in vec3(), x in vec3(), c in 0.01f64..100.0
            ) {
                prop_assume!(norm(&w) > 1e-3 && norm(&x) > 1e-3);
                let t = safe_cos(&w, &x, EPS_NORM, EPS_CLAMP);
                prop_assert!((t - safe_cos(&x, &w, EPS_NORM, EPS_CLAMP)).abs() <= 1e-12);
                let cw: Vec<f64> = w.iter().map(|v| v * c).collect();
                prop_assert!((t - safe_cos(&cw, &x, EPS_NORM, EPS_CLAMP)).abs() <= 1e-12);
                let cx: Vec<f64> = x.iter().map(|v| v * c).collect();
                prop_assert!((t - safe_cos(&w, &cx, EPS_NORM, EPS_CLAMP)).abs() <= 1e-12);
            }
        }
    }
}
