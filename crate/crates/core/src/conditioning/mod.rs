//! Conditioning of the one-layer factorization `F ≈ U Vᵀ`, with and without
//! row normalization of the factors.
//!
//! Parameters are vectorized column by column: entry `U[i, a]` sits at
//! `a·n + i` and `V[j, b]` at `n·k + b·m + j`.

mod hessian;
mod jacobi;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{matmul_nt, norm, Tensor};

pub use hessian::{boxtimes, hessian_g, hessian_gs, hessian_gs_as_printed};
pub use jacobi::{spectrum, symmetric_eigenvalues, SpectrumReport, ZERO_TOL};

/// Rows must be unit norm to this tolerance where normalization is assumed.
pub const UNIT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct FactorizationProblem {
    /// `[n, k]`
    pub u: Tensor,
    /// `[m, k]`
    pub v: Tensor,
    /// `[n, m]`
    pub f: Tensor,
}

impl FactorizationProblem {
    pub fn new(u: Tensor, v: Tensor, f: Tensor) -> Result<Self> {
        if u.rank() != 2 || v.rank() != 2 || f.rank() != 2 {
            return Err(Error::shape("U, V and F must be matrices"));
        }
        if u.cols() != v.cols() || f.shape() != [u.rows(), v.rows()] {
            return Err(Error::shape(format!(
                "U {:?}, V {:?} and F {:?} do not form F ≈ U Vᵀ",
                u.shape(),
                v.shape(),
                f.shape()
            )));
        }
        Ok(FactorizationProblem { u, v, f })
    }

    /// Unit-norm Gaussian rows and `F = U Vᵀ` exactly.
    pub fn balanced_optimum(n: usize, m: usize, k: usize, rng: &mut Rng) -> Result<Self> {
        if n == 0 || m == 0 || k == 0 {
            return Err(Error::InvalidArgument("n, m and k must be positive".into()));
        }
        let u = crate::layers::sphere::init_sphere_kernel(n, k, rng);
        let v = crate::layers::sphere::init_sphere_kernel(m, k, rng);
        let f = Tensor::new_unchecked(vec![n, m], matmul_nt(u.data(), v.data(), n, m, k));
        Ok(FactorizationProblem { u, v, f })
    }

    pub fn n(&self) -> usize {
        self.u.rows()
    }

    pub fn m(&self) -> usize {
        self.v.rows()
    }

    pub fn k(&self) -> usize {
        self.u.cols()
    }

    pub fn dim(&self) -> usize {
        (self.n() + self.m()) * self.k()
    }

    /// `U Vᵀ − F`, `[n, m]`.
    pub fn residual(&self) -> Tensor {
        let (n, m, k) = (self.n(), self.m(), self.k());
        let mut r = matmul_nt(self.u.data(), self.v.data(), n, m, k);
        r.iter_mut().zip(self.f.data()).for_each(|(a, b)| *a -= b);
        Tensor::new_unchecked(vec![n, m], r)
    }

    /// `(cU, V/c)` with the same target.
    pub fn scaled(&self, c: f64) -> Self {
        FactorizationProblem {
            u: self.u.scaled(c),
            v: self.v.scaled(1.0 / c),
            f: self.f.clone(),
        }
    }

    /// Both factors with unit-norm rows.
    pub fn normalized(&self) -> Result<Self> {
        Ok(FactorizationProblem {
            u: crate::tensor::row_l2_normalize(&self.u)?,
            v: crate::tensor::row_l2_normalize(&self.v)?,
            f: self.f.clone(),
        })
    }

    /// Parameters in the fixed vectorization order.
    pub fn params(&self) -> Vec<f64> {
        let (n, m, k) = (self.n(), self.m(), self.k());
        let mut out = vec![0.0; self.dim()];
        for a in 0..k {
            for i in 0..n {
                out[a * n + i] = self.u.get2(i, a);
            }
            for j in 0..m {
                out[n * k + a * m + j] = self.v.get2(j, a);
            }
        }
        out
    }

    /// Inverse of [`FactorizationProblem::params`].
    pub fn with_params(&self, p: &[f64]) -> Self {
        let (n, m, k) = (self.n(), self.m(), self.k());
        let mut q = self.clone();
        for a in 0..k {
            for i in 0..n {
                q.u.set2(i, a, p[a * n + i]);
            }
            for j in 0..m {
                q.v.set2(j, a, p[n * k + a * m + j]);
            }
        }
        q
    }

    pub(crate) fn check_unit_rows(&self) -> Result<()> {
        for (name, t) in [("U", &self.u), ("V", &self.v)] {
            for r in 0..t.rows() {
                let nr = norm(t.row(r));
                if (nr - 1.0).abs() > UNIT_TOL {
                    return Err(Error::Precondition(format!(
                        "row {r} of {name} has norm {nr}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `½ ‖F − U Vᵀ‖²_F`
pub fn objective_g(p: &FactorizationProblem) -> f64 {
    0.5 * p.residual().data().iter().map(|r| r * r).sum::<f64>()
}

/// `½ ‖F − D_U U Vᵀ D_V‖²_F`, with `D` the inverse row norms.
pub fn objective_gs(p: &FactorizationProblem) -> Result<f64> {
    Ok(objective_g(&p.normalized()?))
}

/// Least-squares slope of `log y` against `log x`; `None` without two
/// distinct x values.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 1e-300 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub c: f64,
    pub kappa_g: f64,
    pub lambda_max_g: f64,
    pub lambda_min_nz_g: f64,
    /// Largest element-wise gap between the normalized-problem spectrum at
    /// `c` and at `c = 1`.
    pub spectrum_gs_maxdiff: f64,
    pub trace_identity_err: f64,
    pub spectrum_gs: Vec<f64>,
}

/// For each `c`: the spectrum of ∇²G at `(cU, V/c)` and of ∇²G_S at the
/// row-normalized scaled point, against the unscaled problem.
pub fn scaling_experiment(p: &FactorizationProblem, c_list: &[f64]) -> Result<Vec<ScalingRow>> {
    let res = p.residual().norm();
    if res > 1e-10 {
        return Err(Error::Precondition(format!(
            "not at a global optimum: ‖F − U Vᵀ‖ = {res:e}"
        )));
    }
    p.check_unit_rows()?;
    if let Some(&c) = c_list.iter().find(|&&c| !(c > 0.0 && c.is_finite())) {
        return Err(Error::InvalidArgument(format!("scale c must be positive, got {c}")));
    }
    let base = symmetric_eigenvalues(&hessian_gs(&p.normalized()?)?)?;
    let (n, m) = (p.n() as f64, p.m() as f64);
    let tr_vv: f64 = p.v.data().iter().map(|x| x * x).sum();
    let tr_uu: f64 = p.u.data().iter().map(|x| x * x).sum();
    c_list
        .iter()
        .map(|&c| {
            let q = p.scaled(c);
            let h = hessian_g(&q);
            let rep = spectrum(&h, ZERO_TOL)?;
            let trace: f64 = (0..h.rows()).map(|i| h.get2(i, i)).sum();
            let expect = n * tr_vv / (c * c) + c * c * m * tr_uu;
            let gs = symmetric_eigenvalues(&hessian_gs(&q.normalized()?)?)?;
            let maxdiff = gs
                .iter()
                .zip(&base)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            Ok(ScalingRow {
                c,
                kappa_g: rep.kappa,
                lambda_max_g: rep.lambda_max,
                lambda_min_nz_g: rep.lambda_min_nonzero,
                spectrum_gs_maxdiff: maxdiff,
                trace_identity_err: (trace - expect).abs(),
                spectrum_gs: gs,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub c_list: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            n: 8,
            m: 8,
            k: 2,
            c_list: vec![1.0, 2.0, 4.0, 8.0],
            seeds: (0..10).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<(u64, ScalingRow)>,
    /// Pooled log-log slope of κ(∇²G) against c.
    pub slope: Option<f64>,
    pub per_seed_slopes: Vec<(u64, Option<f64>)>,
}

impl SweepResult {
    pub fn max_spectrum_gs_diff(&self) -> f64 {
        self.rows.iter().map(|r| r.1.spectrum_gs_maxdiff).fold(0.0, f64::max)
    }

    pub fn max_trace_identity_err(&self) -> f64 {
        self.rows.iter().map(|r| r.1.trace_identity_err).fold(0.0, f64::max)
    }
}

/// One balanced optimum per seed, each run through [`scaling_experiment`].
pub fn sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    let mut rows = Vec::new();
    let mut per_seed = Vec::new();
    for &seed in &cfg.seeds {
        let p = FactorizationProblem::balanced_optimum(cfg.n, cfg.m, cfg.k, &mut Rng::new(seed))?;
        let table = scaling_experiment(&p, &cfg.c_list)?;
        let pts: Vec<(f64, f64)> = table.iter().map(|r| (r.c, r.kappa_g)).collect();
        per_seed.push((seed, loglog_slope(&pts)));
        rows.extend(table.into_iter().map(|r| (seed, r)));
    }
    let pts: Vec<(f64, f64)> = rows.iter().map(|(_, r)| (r.c, r.kappa_g)).collect();
    Ok(SweepResult {
        rows,
        slope: loglog_slope(&pts),
        per_seed_slopes: per_seed,
    })
}
