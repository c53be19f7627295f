use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Eigenvalues with `|λ| ≤ ZERO_TOL · max|λ|` count as zero.
pub const ZERO_TOL: f64 = 1e-9;

const SYMMETRY_TOL: f64 = 1e-10;
const OFF_DIAG_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub lambda_max: f64,
    pub lambda_min_nonzero: f64,
    /// `λ_max / λ_min_nonzero`, both in magnitude.
    pub kappa: f64,
    pub zero_tol: f64,
    pub zero_count: usize,
}

/// All eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(h: &Tensor) -> Result<Vec<f64>> {
    if h.rank() != 2 || h.rows() != h.cols() {
        return Err(Error::shape(format!("expected a square matrix, got {:?}", h.shape())));
    }
    let d = h.rows();
    let mut a = h.data().to_vec();
    let fro = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for i in 0..d {
        for j in 0..i {
            let gap = (a[i * d + j] - a[j * d + i]).abs();
            if gap > SYMMETRY_TOL * fro.max(1.0) {
                return Err(Error::Precondition(format!(
                    "matrix is not symmetric: |H[{i},{j}] − H[{j},{i}]| = {gap:e}"
                )));
            }
        }
    }
    if let Some(index) = a.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    s += a[i * d + j] * a[i * d + j];
                }
            }
        }
        s.sqrt()
    };
    let mut sweeps = 0;
    while off(&a) > OFF_DIAG_TOL * fro {
        if sweeps == MAX_SWEEPS {
            return Err(Error::Numerical(format!(
                "Jacobi did not converge in {MAX_SWEEPS} sweeps"
            )));
        }
        sweeps += 1;
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (a[p * d + p], a[q * d + q]);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..d {
                    let (arp, arq) = (a[r * d + p], a[r * d + q]);
                    a[r * d + p] = c * arp - s * arq;
                    a[r * d + q] = s * arp + c * arq;
                }
                for r in 0..d {
                    let (apr, aqr) = (a[p * d + r], a[q * d + r]);
                    a[p * d + r] = c * apr - s * aqr;
                    a[q * d + r] = s * apr + c * aqr;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..d).map(|i| a[i * d + i]).collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

pub fn spectrum(h: &Tensor, zero_tol: f64) -> Result<SpectrumReport> {
    let eigenvalues = symmetric_eigenvalues(h)?;
    let lambda_max = eigenvalues.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if lambda_max == 0.0 {
        return Err(Error::DegenerateSpectrum);
    }
    let cut = zero_tol * lambda_max;
    let zero_count = eigenvalues.iter().filter(|x| x.abs() <= cut).count();
    let lambda_min_nonzero = eigenvalues
        .iter()
        .map(|x| x.abs())
        .filter(|&x| x > cut)
        .fold(f64::INFINITY, f64::min);
    Ok(SpectrumReport {
        lambda_max,
        lambda_min_nonzero,
        kappa: lambda_max / lambda_min_nonzero,
        zero_tol,
        zero_count,
        eigenvalues,
    })
}
