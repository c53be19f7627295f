//! Angular response functions g(θ) and their derivatives.
//!
//! The sigmoid operator is written here in the equivalent form
//! `g(θ) = tanh((π/2 − θ) / 2k) / tanh(π / 4k)`, which avoids the
//! exponential overflow of the ratio-of-exponentials form at small k.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};
use crate::tensor::{dot, norm, safe_cos, EPS_CLAMP, EPS_NORM};

/// Lower bound applied to learnable curvatures after every update.
pub const K_MIN: f64 = 1e-2;
/// Initial value for learnable curvatures.
pub const K_INIT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub enum AngularOperator {
    Linear { a: f64, b: f64 },
    Cosine,
    Sigmoid { k: f64 },
    /// One curvature per output filter, or a single shared value when `k`
    /// has length 1.
    LearnableSigmoid { k: Vec<f64>, k_min: f64 },
}

impl Default for AngularOperator {
    fn default() -> Self {
        AngularOperator::Cosine
    }
}

impl AngularOperator {
    pub fn linear() -> Self {
        AngularOperator::Linear {
            a: -2.0 / PI,
            b: 1.0,
        }
    }

    pub fn sigmoid(k: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigmoid curvature must be positive, got {k}"
            )));
        }
        Ok(AngularOperator::Sigmoid { k })
    }

    /// Learnable sigmoid with `filters` curvatures (1 for layer-shared), all
    /// starting at `k0`.
    pub fn learnable(filters: usize, k0: f64) -> Result<Self> {
        if filters == 0 || !(k0 >= K_MIN && k0.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learnable sigmoid needs at least one k >= {K_MIN}, got {filters} x {k0}"
            )));
        }
        Ok(AngularOperator::LearnableSigmoid {
            k: vec![k0; filters],
            k_min: K_MIN,
        })
    }

    pub fn is_learnable(&self) -> bool {
        matches!(self, AngularOperator::LearnableSigmoid { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            AngularOperator::Linear { .. } => "linear",
            AngularOperator::Cosine => "cosine",
            AngularOperator::Sigmoid { .. } => "sigmoid",
            AngularOperator::LearnableSigmoid { .. } => "learnable",
        }
    }

    /// Curvature used for `filter`, if this is a sigmoid variant.
    #[inline]
    pub fn k_for(&self, filter: usize) -> Option<f64> {
        match self {
            AngularOperator::Sigmoid { k } => Some(*k),
            AngularOperator::LearnableSigmoid { k, .. } => {
                Some(if k.len() == 1 { k[0] } else { k[filter] })
            }
            _ => None,
        }
    }

    /// Index into the learnable `k` vector that `filter` reads.
    #[inline]
    pub fn k_slot(&self, filter: usize) -> usize {
        match self {
            AngularOperator::LearnableSigmoid { k, .. } if k.len() == 1 => 0,
            _ => filter,
        }
    }

    pub fn k_values(&self) -> Option<&[f64]> {
        match self {
            AngularOperator::LearnableSigmoid { k, .. } => Some(k),
            _ => None,
        }
    }

    pub fn k_values_mut(&mut self) -> Option<&mut [f64]> {
        match self {
            AngularOperator::LearnableSigmoid { k, .. } => Some(k),
            _ => None,
        }
    }

    /// Pulls every learnable curvature back up to `k_min`.
    pub fn clamp_k(&mut self) {
        if let AngularOperator::LearnableSigmoid { k, k_min } = self {
            let lo = *k_min;
            k.iter_mut().for_each(|v| *v = v.max(lo));
        }
    }

    #[inline]
    pub fn g(&self, theta: f64, filter: usize) -> f64 {
        match self {
            AngularOperator::Linear { a, b } => a * theta + b,
            AngularOperator::Cosine => theta.cos(),
            _ => sigmoid_g(theta, self.k_for(filter).unwrap()),
        }
    }

    #[inline]
    pub fn dg_dtheta(&self, theta: f64, filter: usize) -> f64 {
        match self {
            AngularOperator::Linear { a, .. } => *a,
            AngularOperator::Cosine => -theta.sin(),
            _ => sigmoid_dg_dtheta(theta, self.k_for(filter).unwrap()),
        }
    }

    /// ∂g/∂k; zero for the variants without a curvature.
    #[inline]
    pub fn dg_dk(&self, theta: f64, filter: usize) -> f64 {
        match self.k_for(filter) {
            Some(k) => sigmoid_dg_dk(theta, k),
            None => 0.0,
        }
    }

    /// Margin extension ψ(θ) of g for an integer margin `m`. For the cosine
    /// operator this is the piecewise `(−1)^j cos(mθ) − 2j` on
    /// `[jπ/m, (j+1)π/m]`; the linear and sigmoid operators are already
    /// monotone on the whole real line, so ψ(θ) = g(mθ).
    #[inline]
    pub fn psi(&self, theta: f64, m: u32, filter: usize) -> f64 {
        match self {
            AngularOperator::Cosine => {
                let j = psi_piece(theta, m);
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * (m as f64 * theta).cos() - 2.0 * j as f64
            }
            _ => self.g(m as f64 * theta, filter),
        }
    }

    #[inline]
    pub fn dpsi_dtheta(&self, theta: f64, m: u32, filter: usize) -> f64 {
        let mf = m as f64;
        match self {
            AngularOperator::Cosine => {
                let j = psi_piece(theta, m);
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                -sign * mf * (mf * theta).sin()
            }
            _ => mf * self.dg_dtheta(mf * theta, filter),
        }
    }

    #[inline]
    pub fn dpsi_dk(&self, theta: f64, m: u32, filter: usize) -> f64 {
        match self {
            AngularOperator::Cosine => 0.0,
            _ => self.dg_dk(m as f64 * theta, filter),
        }
    }
}

/// Index j of the piece of [0, π] that θ falls in for margin m.
#[inline]
fn psi_piece(theta: f64, m: u32) -> u32 {
    let j = (theta * m as f64 / PI).floor();
    if j <= 0.0 {
        0
    } else {
        (j as u32).min(m.saturating_sub(1))
    }
}

#[inline]
fn sech2(z: f64) -> f64 {
    let c = z.cosh();
    1.0 / (c * c)
}

#[inline]
pub fn sigmoid_g(theta: f64, k: f64) -> f64 {
    ((FRAC_PI_2 - theta) / (2.0 * k)).tanh() / (PI / (4.0 * k)).tanh()
}

#[inline]
pub fn sigmoid_dg_dtheta(theta: f64, k: f64) -> f64 {
    let z = (FRAC_PI_2 - theta) / (2.0 * k);
    -sech2(z) / (2.0 * k * (PI / (4.0 * k)).tanh())
}

#[inline]
pub fn sigmoid_dg_dk(theta: f64, k: f64) -> f64 {
    let z = (FRAC_PI_2 - theta) / (2.0 * k);
    let a = PI / (4.0 * k);
    let ta = a.tanh();
    (-z * sech2(z) / ta + a * z.tanh() * sech2(a) / (ta * ta)) / k
}

/// Angle between `w` and `x`, strictly inside (0, π) because of the cosine
/// clamp.
pub fn angle(w: &[f64], x: &[f64]) -> f64 {
    safe_cos(w, x, EPS_NORM, EPS_CLAMP).acos()
}

/// dθ/dt for θ = acos(t).
#[inline]
pub fn dtheta_dcos(t: f64) -> f64 {
    -1.0 / (1.0 - t * t).sqrt()
}

/// Gradients of `angle(w, x)` with respect to `w` and `x`.
pub fn dtheta_dvec(w: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if w.len() != x.len() {
        return Err(Error::shape(format!(
            "angle between vectors of length {} and {}",
            w.len(),
            x.len()
        )));
    }
    let (nw, nx) = (norm(w), norm(x));
    if nw <= EPS_NORM || nx <= EPS_NORM {
        return Err(Error::Degenerate(format!(
            "angle gradient needs nonzero vectors, got norms {nw:e} and {nx:e}"
        )));
    }
    let t = (dot(w, x) / (nw * nx)).clamp(-1.0 + EPS_CLAMP, 1.0 - EPS_CLAMP);
    let s = dtheta_dcos(t);
    let gw = w
        .iter()
        .zip(x)
        .map(|(wi, xi)| s * (xi / (nw * nx) - t * wi / (nw * nw)))
        .collect();
    let gx = w
        .iter()
        .zip(x)
        .map(|(wi, xi)| s * (wi / (nw * nx) - t * xi / (nx * nx)))
        .collect();
    Ok((gw, gx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    fn all_ops() -> Vec<AngularOperator> {
        vec![
            AngularOperator::linear(),
            AngularOperator::Cosine,
            AngularOperator::Sigmoid { k: 0.1 },
            AngularOperator::Sigmoid { k: 0.3 },
            AngularOperator::Sigmoid { k: 0.7 },
            AngularOperator::learnable(3, K_INIT).unwrap(),
        ]
    }

    #[test]
    fn angle_examples() {
        // acos(1 - e) = sqrt(2e) * (1 + e/12 + ...), so the bound carries a
        // relative slack of order e
        let lim = (2.0 * EPS_CLAMP).sqrt() * (1.0 + EPS_CLAMP);
        assert!(angle(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]) <= lim);
        assert_eq!(angle(&[1.0, 0.0], &[0.0, 1.0]), FRAC_PI_2);
        assert!(angle(&[1.0, 0.0], &[-1.0, 0.0]) >= PI - lim);
    }

    #[test]
    fn g_examples() {
        assert!(AngularOperator::linear().g(FRAC_PI_2, 0).abs() < 1e-15);
        assert_eq!(AngularOperator::Cosine.g(PI, 0), -1.0);
        let s = AngularOperator::Sigmoid { k: 0.3 };
        assert!((s.g(0.0, 0) - 1.0).abs() < 1e-15);
        assert!((s.g(PI, 0) + 1.0).abs() < 1e-15);
        assert_eq!(AngularOperator::Sigmoid { k: 0.5 }.g(FRAC_PI_2, 0), 0.0);
    }

    #[test]
    fn sigmoid_matches_exponential_form() {
        // the operator as a ratio of exponentials with its leading coefficient
        let direct = |theta: f64, k: f64| {
            let e = (-PI / (2.0 * k)).exp();
            let u = (theta / k - PI / (2.0 * k)).exp();
            (1.0 + e) / (1.0 - e) * (1.0 - u) / (1.0 + u)
        };
        for &k in &[0.1, 0.3, 0.5, 0.7, 2.0] {
            for i in 0..=50 {
                let th = PI * i as f64 / 50.0;
                assert!((sigmoid_g(th, k) - direct(th, k)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn dg_dtheta_examples() {
        assert_eq!(AngularOperator::Cosine.dg_dtheta(FRAC_PI_2, 0), -1.0);
        for th in [0.0, 1.0, 3.0] {
            assert_eq!(AngularOperator::linear().dg_dtheta(th, 0), -2.0 / PI);
        }
        let s = AngularOperator::Sigmoid { k: 0.3 };
        let h = 1e-6;
        let fd = (s.g(FRAC_PI_2 + h, 0) - s.g(FRAC_PI_2 - h, 0)) / (2.0 * h);
        assert!(rel(s.dg_dtheta(FRAC_PI_2, 0), fd) <= 1e-8);
    }

    #[test]
    fn dg_dtheta_matches_fd_everywhere() {
        let h = 1e-6;
        for op in all_ops() {
            for i in 1..40 {
                let th = PI * i as f64 / 40.0 + 0.013;
                let fd = (op.g(th + h, 0) - op.g(th - h, 0)) / (2.0 * h);
                let an = op.dg_dtheta(th, 0);
                assert!((an - fd).abs() <= 1e-7 * an.abs().max(1.0), "{op:?} {th}");
                assert!(an <= 0.0);
            }
        }
    }

    #[test]
    fn dg_dk_examples() {
        let op = AngularOperator::learnable(1, 0.5).unwrap();
        assert_eq!(op.dg_dk(FRAC_PI_2, 0), 0.0);

        let th = PI / 4.0;
        let h = 1e-6;
        let fd = (sigmoid_g(th, 0.5 + h) - sigmoid_g(th, 0.5 - h)) / (2.0 * h);
        assert!(rel(op.dg_dk(th, 0), fd) <= 1e-8);

        assert!(sigmoid_dg_dk(th, 50.0).abs() <= 1e-3);
    }

    #[test]
    fn dg_dk_matches_fd_on_grid() {
        let h = 1e-7;
        for &k in &[0.1, 0.3, 0.7, 1.5] {
            for i in 1..30 {
                let th = PI * i as f64 / 30.0;
                let fd = (sigmoid_g(th, k + h) - sigmoid_g(th, k - h)) / (2.0 * h);
                let an = sigmoid_dg_dk(th, k);
                assert!((an - fd).abs() <= 1e-6 * an.abs().max(1e-3), "k={k} th={th}");
            }
        }
    }

    #[test]
    fn dtheta_dvec_examples() {
        let (gw, _) = dtheta_dvec(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(gw, vec![0.0, -1.0]);
        assert!(dtheta_dvec(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn dtheta_dvec_tangent_to_w() {
        let mut rng = Rng::new(21);
        for _ in 0..100 {
            let w: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
            let x: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
            let (gw, gx) = dtheta_dvec(&w, &x).unwrap();
            assert!(dot(&gw, &w).abs() <= 1e-9);
            assert!(dot(&gx, &x).abs() <= 1e-9);
        }
    }

    #[test]
    fn dtheta_dvec_matches_fd() {
        let mut rng = Rng::new(22);
        let h = 1e-6;
        for _ in 0..50 {
            let w: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
            let x: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
            let th = angle(&w, &x);
            if !(0.2..PI - 0.2).contains(&th) {
                continue;
            }
            let (gw, gx) = dtheta_dvec(&w, &x).unwrap();
            for i in 0..5 {
                let (mut wp, mut wm) = (w.clone(), w.clone());
                wp[i] += h;
                wm[i] -= h;
                let fd = (angle(&wp, &x) - angle(&wm, &x)) / (2.0 * h);
                assert!((gw[i] - fd).abs() <= 1e-6 * gw[i].abs().max(1e-2));
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[i] += h;
                xm[i] -= h;
                let fd = (angle(&w, &xp) - angle(&w, &xm)) / (2.0 * h);
                assert!((gx[i] - fd).abs() <= 1e-6 * gx[i].abs().max(1e-2));
            }
        }
    }

    #[test]
    fn sigmoid_limits() {
        let lin = AngularOperator::linear();
        let wide = AngularOperator::Sigmoid { k: 100.0 };
        let worst = (0..=1000)
            .map(|i| PI * i as f64 / 1000.0)
            .map(|th| (wide.g(th, 0) - lin.g(th, 0)).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.02, "{worst}");

        let step = AngularOperator::Sigmoid { k: 0.01 };
        assert!(step.g(FRAC_PI_2 - 0.1, 0) >= 0.99);
        assert!(step.g(FRAC_PI_2 + 0.1, 0) <= -0.99);
    }

    #[test]
    fn learnable_shared_and_per_filter() {
        let mut op = AngularOperator::LearnableSigmoid {
            k: vec![0.2, 0.4],
            k_min: K_MIN,
        };
        assert_eq!(op.k_for(1), Some(0.4));
        assert_eq!(op.k_slot(1), 1);
        op.k_values_mut().unwrap()[0] = -3.0;
        op.clamp_k();
        assert_eq!(op.k_values().unwrap()[0], K_MIN);

        let shared = AngularOperator::learnable(1, 0.5).unwrap();
        assert_eq!(shared.k_for(7), Some(0.5));
        assert_eq!(shared.k_slot(7), 0);
        assert!(AngularOperator::learnable(0, 0.5).is_err());
        assert!(AngularOperator::sigmoid(0.0).is_err());
    }

    #[test]
    fn psi_reduces_to_g_at_unit_margin() {
        for op in all_ops() {
            for i in 0..=200 {
                let th = PI * i as f64 / 200.0;
                assert!((op.psi(th, 1, 0) - op.g(th, 0)).abs() <= 1e-12);
                assert!((op.dpsi_dtheta(th, 1, 0) - op.dg_dtheta(th, 0)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn psi_cosine_examples() {
        let c = AngularOperator::Cosine;
        assert!((c.psi(PI / 4.0, 4, 0) + 1.0).abs() <= 1e-12);
        // left limit from the j = 0 piece agrees
        let left = (4.0 * (PI / 4.0 - 1e-12)).cos();
        assert!((left + 1.0).abs() <= 1e-10);
        for j in 1..4 {
            let knot = j as f64 * PI / 4.0;
            assert!(c.dpsi_dtheta(knot, 4, 0).abs() <= 1e-12);
        }
        let lin = AngularOperator::linear();
        for th in [0.0, 0.3, 1.9, PI] {
            assert!((lin.dpsi_dtheta(th, 4, 0) + 8.0 / PI).abs() <= 1e-15);
        }
        assert!((lin.psi(0.7, 4, 0) - (1.0 - 8.0 / PI * 0.7)).abs() <= 1e-15);
    }

    #[test]
    fn psi_cosine_continuous_and_monotone() {
        let c = AngularOperator::Cosine;
        for m in [2u32, 3, 4] {
            for j in 1..m {
                let knot = j as f64 * PI / m as f64;
                let lo = c.psi(knot - 1e-13, m, 0);
                let hi = c.psi(knot + 1e-13, m, 0);
                assert!((lo - hi).abs() <= 1e-11, "m={m} j={j}");
            }
            assert!((c.psi(PI, m, 0) - (1.0 - 2.0 * m as f64)).abs() <= 1e-12);
        }
        for m in [2u32, 4] {
            let mut prev = f64::INFINITY;
            for i in 0..1000 {
                let v = c.psi(PI * i as f64 / 999.0, m, 0);
                assert!(v <= prev + 1e-12);
                prev = v;
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn op_strategy() -> impl Strategy<Value = AngularOperator> {
            prop_oneof![
                Just(AngularOperator::linear()),
                Just(AngularOperator::Cosine),
                (0.01f64..5.0).prop_map(|k| AngularOperator::Sigmoid { k }),
                (0.01f64..5.0).prop_map(|k| AngularOperator::LearnableSigmoid {
                    k: vec![k],
                    k_min: K_MIN
                }),
            ]
        }

        fn vec_d(d: usize) -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(-5.0f64..5.0, d)
        }

        proptest! {
            #[test]
            fn g_bounded(op in op_strategy(), w in vec_d(6), x in vec_d(6)) {
                let v = op.g(angle(&w, &x), 0);
                prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&v));
            }

            #[test]
            fn g_scale_invariant(
                op in op_strategy(), w in vec_d(4), x in vec_d(4), c in 1e-3f64..1e3
            ) {
                prop_assume!(norm(&w) > 1e-3 && norm(&x) > 1e-3);
                let cw: Vec<f64> = w.iter().map(|v| v * c).collect();
                let a = op.g(angle(&w, &x), 0);
                let b = op.g(angle(&cw, &x), 0);
                prop_assert!((a - b).abs() <= 1e-10);
            }

            #[test]
            fn g_non_increasing(k in prop::sample::select(vec![0.1, 0.3, 0.7])) {
                for op in [
                    AngularOperator::linear(),
                    AngularOperator::Cosine,
                    AngularOperator::Sigmoid { k },
                    AngularOperator::LearnableSigmoid { k: vec![k], k_min: K_MIN },
                ] {
                    let mut prev = f64::INFINITY;
                    for i in 0..1000 {
                        let v = op.g(PI * i as f64 / 999.0, 0);
                        prop_assert!(v <= prev);
                        prev = v;
                    }
                }
            }
        }
    }
}
