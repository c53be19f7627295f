//! Orthogonality penalty on kernel matrices.
//!
//! Kernels are stored as rows, so the Gram matrix over kernels is `W Wᵀ`.
//! When there are more kernels than dimensions (`Cout > d`) that Gram
//! cannot reach the identity, and the penalty switches to `Wᵀ W`.

use crate::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};

/// `λ ‖G − I‖²_F` and its gradient with respect to `w` (`[Cout, d]`).
pub fn orthogonality_penalty(w: &Tensor, lambda: f64) -> (f64, Tensor) {
    let (r, c) = (w.rows(), w.cols());
    if lambda == 0.0 {
        return (0.0, Tensor::zeros(w.shape()));
    }
    let rows_gram = r <= c;
    let n = if rows_gram { r } else { c };
    let mut gram = if rows_gram {
        matmul_nt(w.data(), w.data(), r, r, c)
    } else {
        matmul_tn(w.data(), w.data(), r, c, c)
    };
    for i in 0..n {
        gram[i * n + i] -= 1.0;
    }
    let value = lambda * gram.iter().map(|v| v * v).sum::<f64>();
    // d/dW ‖WWᵀ − I‖² = 4 (WWᵀ − I) W, and 4 W (WᵀW − I) for the other Gram
    let mut grad = if rows_gram {
        matmul_nn(&gram, w.data(), r, r, c)
    } else {
        matmul_nn(w.data(), &gram, r, c, c)
    };
    grad.iter_mut().for_each(|g| *g *= 4.0 * lambda);
    (value, Tensor::new_unchecked(w.shape().to_vec(), grad))
}
