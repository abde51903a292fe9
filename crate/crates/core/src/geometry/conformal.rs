//! Closed forms for conformally flat metrics `g = e^w δ`.

use super::Christoffel;
use crate::linalg::{Mat, Vect};

/// `Γ^i_{jk} = ½ (δ_ij ∂_k w + δ_ik ∂_j w - δ_jk ∂_i w)`.
pub fn conformal_christoffel<const N: usize>(grad_w: &Vect<N>) -> Christoffel<N> {
    let mut out = Christoffel::<N>::zeros();
    for i in 0..N {
        let m = &mut out.0[i];
        for j in 0..N {
            m[(i, j)] += 0.5 * grad_w[j];
            m[(j, i)] += 0.5 * grad_w[j];
            m[(j, j)] -= 0.5 * grad_w[i];
        }
    }
    out
}

/// Ricci tensor of `e^w δ` from the Euclidean gradient and Hessian of `w`.
pub fn conformal_ricci<const N: usize>(grad_w: &Vect<N>, hess_w: &Mat<N>) -> Mat<N> {
    let n = N as f64;
    let lap = hess_w.trace();
    let g2 = grad_w.norm_squared();
    let outer = grad_w * grad_w.transpose();
    (hess_w * 0.5 - outer * 0.25) * (-(n - 2.0)) - Mat::<N>::identity() * (0.5 * lap + 0.25 * (n - 2.0) * g2)
}
