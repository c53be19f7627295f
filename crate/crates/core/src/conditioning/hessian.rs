use super::FactorizationProblem;
use crate::error::Result;
use crate::tensor::{matmul_nt, matmul_tn, Tensor};

/// `A ⊠ B` for `A: [n, r]`, `B: [m, k]`: a `k × r` grid of `n × m` blocks
/// whose block `(p, q)` is `A[:, q] B[:, p]ᵀ`.
pub fn boxtimes(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, r) = (a.rows(), a.cols());
    let (m, k) = (b.rows(), b.cols());
    let mut out = Tensor::zeros(&[n * k, m * r]);
    for p in 0..k {
        for q in 0..r {
            for i in 0..n {
                for j in 0..m {
                    out.set2(p * n + i, q * m + j, a.get2(i, q) * b.get2(j, p));
                }
            }
        }
    }
    out
}

struct Layout {
    n: usize,
    m: usize,
    k: usize,
}

impl Layout {
    fn of(p: &FactorizationProblem) -> Self {
        Layout {
            n: p.n(),
            m: p.m(),
            k: p.k(),
        }
    }

    fn u(&self, i: usize, a: usize) -> usize {
        a * self.n + i
    }

    fn v(&self, j: usize, b: usize) -> usize {
        self.n * self.k + b * self.m + j
    }

    fn dim(&self) -> usize {
        (self.n + self.m) * self.k
    }
}

fn gram(t: &Tensor) -> Vec<f64> {
    matmul_tn(t.data(), t.data(), t.rows(), t.cols(), t.cols())
}

/// Hessian of `½‖F − U Vᵀ‖²_F`:
///
/// ```text
/// [ VᵀV ⊗ I_n          I_k ⊗ R + U ⊠ V ]
/// [ (I_k ⊗ R + U ⊠ V)ᵀ  UᵀU ⊗ I_m      ]      R = U Vᵀ − F
/// ```
pub fn hessian_g(p: &FactorizationProblem) -> Tensor {
    let l = Layout::of(p);
    let (n, m, k) = (l.n, l.m, l.k);
    let r = p.residual();
    let (vtv, utu) = (gram(&p.v), gram(&p.u));
    let bx = boxtimes(&p.u, &p.v);
    let mut h = Tensor::zeros(&[l.dim(), l.dim()]);
    for a in 0..k {
        for b in 0..k {
            for i in 0..n {
                h.set2(l.u(i, a), l.u(i, b), vtv[a * k + b]);
            }
            for j in 0..m {
                h.set2(l.v(j, a), l.v(j, b), utu[a * k + b]);
            }
            for i in 0..n {
                for j in 0..m {
                    let mut x = bx.get2(a * n + i, b * m + j);
                    if a == b {
                        x += r.get2(i, j);
                    }
                    h.set2(l.u(i, a), l.v(j, b), x);
                    h.set2(l.v(j, b), l.u(i, a), x);
                }
            }
        }
    }
    h
}

/// Hessian of `U, V ↦ G(D_U U, D_V V)` at a point with unit-norm rows,
/// by the chain rule through the row normalization.
pub fn hessian_gs(p: &FactorizationProblem) -> Result<Tensor> {
    p.check_unit_rows()?;
    let l = Layout::of(p);
    let (n, m, k) = (l.n, l.m, l.k);
    let r = p.residual();
    let (vtv, utu) = (gram(&p.v), gram(&p.u));
    // ∂G/∂Ũ = R V and ∂G/∂Ṽ = Rᵀ U
    let gu = Tensor::new_unchecked(vec![n, k], crate::tensor::matmul_nn(r.data(), p.v.data(), n, m, k));
    let gv = Tensor::new_unchecked(vec![m, k], matmul_tn(r.data(), p.u.data(), n, m, k));
    let proj = |x: &[f64]| -> Vec<f64> {
        let mut pm = vec![0.0; k * k];
        for a in 0..k {
            for b in 0..k {
                pm[a * k + b] = if a == b { 1.0 } else { 0.0 } - x[a] * x[b];
            }
        }
        pm
    };
    let mut h = Tensor::zeros(&[l.dim(), l.dim()]);

    // diagonal blocks: P G P plus the curvature of the normalization
    let mut row_block = |x: &[f64], g: &[f64], gram: &[f64], idx: &dyn Fn(usize) -> usize| {
        let pm = proj(x);
        let ug: f64 = x.iter().zip(g).map(|(a, b)| a * b).sum();
        for a in 0..k {
            for b in a..k {
                let mut s = 0.0;
                for c in 0..k {
                    for d in 0..k {
                        s += pm[a * k + c] * gram[c * k + d] * pm[d * k + b];
                    }
                }
                s -= g[a] * x[b] + g[b] * x[a] - 3.0 * x[a] * x[b] * ug;
                if a == b {
                    s -= ug;
                }
                h.set2(idx(a), idx(b), s);
                h.set2(idx(b), idx(a), s);
            }
        }
    };
    for i in 0..n {
        row_block(p.u.row(i), gu.row(i), &vtv, &|a| l.u(i, a));
    }
    for j in 0..m {
        row_block(p.v.row(j), gv.row(j), &utu, &|b| l.v(j, b));
    }

    for i in 0..n {
        let (ui, pi) = (p.u.row(i), proj(p.u.row(i)));
        for j in 0..m {
            let (vj, pj) = (p.v.row(j), proj(p.v.row(j)));
            let piv: Vec<f64> = (0..k).map(|a| (0..k).map(|c| pi[a * k + c] * vj[c]).sum()).collect();
            let pju: Vec<f64> = (0..k).map(|b| (0..k).map(|c| pj[b * k + c] * ui[c]).sum()).collect();
            let rij = r.get2(i, j);
            for a in 0..k {
                for b in 0..k {
                    let pp: f64 = (0..k).map(|c| pi[a * k + c] * pj[c * k + b]).sum();
                    let x = piv[a] * pju[b] + rij * pp;
                    h.set2(l.u(i, a), l.v(j, b), x);
                    h.set2(l.v(j, b), l.u(i, a), x);
                }
            }
        }
    }
    Ok(h)
}

/// `A ⊛_k B`: row `i` of the `[n, k]` result is `A[i,:]·B[i,:]` repeated.
fn circledast(a: &[f64], b: &[f64], n: usize, m: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let s: f64 = (0..m).map(|j| a[i * m + j] * b[i * m + j]).sum();
        out[i * k..(i + 1) * k].fill(s);
    }
    out
}

/// The normalized-factor Hessian block formulas transcribed term by term,
/// with `I_m` in the V-block Kronecker factor so the shapes agree. Kept to
/// compare against [`hessian_gs`]; the result is in general not symmetric.
pub fn hessian_gs_as_printed(p: &FactorizationProblem) -> Tensor {
    let l = Layout::of(p);
    let (n, m, k) = (l.n, l.m, l.k);
    let ft = p.f.transpose2();
    let uvt = matmul_nt(p.u.data(), p.v.data(), n, m, k);
    let vut = matmul_nt(p.v.data(), p.u.data(), m, n, k);
    let r: Vec<f64> = uvt.iter().zip(p.f.data()).map(|(a, b)| a - b).collect();
    let rt: Vec<f64> = vut.iter().zip(ft.data()).map(|(a, b)| a - b).collect();
    let two_u: Vec<f64> = uvt.iter().zip(p.f.data()).map(|(a, b)| 2.0 * a - b).collect();
    let two_v: Vec<f64> = vut.iter().zip(ft.data()).map(|(a, b)| 2.0 * a - b).collect();
    let (vtv, utu) = (gram(&p.v), gram(&p.u));
    let cu = circledast(&r, &uvt, n, m, k);
    let cv = circledast(&rt, &vut, m, n, k);
    let bx = boxtimes(&p.u, &p.v);

    let mut h = Tensor::zeros(&[l.dim(), l.dim()]);
    for a in 0..k {
        for b in 0..k {
            for i in 0..n {
                // (2UVᵀ − F) V[:, b] at row i
                let t: f64 = (0..m).map(|j| two_u[i * m + j] * p.v.get2(j, b)).sum();
                let mut x = vtv[a * k + b] - p.u.get2(i, a) * t;
                if a == b {
                    x -= cu[i * k + a];
                }
                h.set2(l.u(i, a), l.u(i, b), x);
            }
            for j in 0..m {
                let t: f64 = (0..n).map(|i| two_v[j * n + i] * p.u.get2(i, b)).sum();
                let mut x = utu[a * k + b] - p.v.get2(j, a) * t;
                if a == b {
                    x -= cv[j * k + a];
                }
                h.set2(l.v(j, a), l.v(j, b), x);
            }
            for i in 0..n {
                let uu = p.u.get2(i, a) * p.u.get2(i, b);
                for j in 0..m {
                    let mut x = bx.get2(a * n + i, b * m + j) - two_u[i * m + j] * uu;
                    if a == b {
                        x += r[i * m + j];
                    }
                    h.set2(l.u(i, a), l.v(j, b), x);
                    h.set2(l.v(j, b), l.u(i, a), x);
                }
            }
        }
    }
    h
}
