//! Small dense linear algebra on stack matrices.

use nalgebra::{DMatrix, SMatrix, SVector};

use crate::error::{Error, Result};

pub type Mat<const N: usize> = SMatrix<f64, N, N>;
pub type Vect<const N: usize> = SVector<f64, N>;

/// Relative tolerance used when deciding whether a matrix is symmetric.
const SYMMETRY_TOL: f64 = 1e-10;

fn symmetrize<const N: usize>(m: &Mat<N>) -> Mat<N> {
    (m + m.transpose()) * 0.5
}

fn check_spd<const N: usize>(m: &Mat<N>) -> Result<()> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NotPositiveDefinite(f64::NAN));
    }
    if (m - m.transpose()).amax() > SYMMETRY_TOL * scale {
        return Err(Error::NotPositiveDefinite(f64::NAN));
    }
    Ok(())
}

/// Symmetric positive definite square root.
///
/// Diagonal inputs (every conformally flat metric) take a fast path; the
/// general case goes through the symmetric eigendecomposition.
pub fn sym_sqrt<const N: usize>(m: &Mat<N>) -> Result<Mat<N>> {
    spd_power(m, 0.5)
}

/// Inverse of the symmetric positive definite square root.
pub fn sym_inv_sqrt<const N: usize>(m: &Mat<N>) -> Result<Mat<N>> {
    spd_power(m, -0.5)
}

fn spd_power<const N: usize>(m: &Mat<N>, power: f64) -> Result<Mat<N>> {
    check_spd(m)?;
    if is_diagonal(m) {
        let mut out = Mat::<N>::zeros();
        for i in 0..N {
            let d = m[(i, i)];
            if d <= 0.0 {
                return Err(Error::NotPositiveDefinite(d));
            }
            out[(i, i)] = d.powf(power);
        }
        return Ok(out);
    }
    let eig = dynamic(m).symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        return Err(Error::NotPositiveDefinite(min));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.powf(power)));
    let q = &eig.eigenvectors;
    let out = q * d * q.transpose();
    Ok(symmetrize(&Mat::<N>::from_fn(|i, j| out[(i, j)])))
}

// Generic-size eigensolvers need dimension arithmetic that const generics
// cannot express, so the (rare, tiny) non-diagonal cases go through DMatrix.
fn dynamic<const N: usize>(m: &Mat<N>) -> DMatrix<f64> {
    let s = symmetrize(m);
    DMatrix::from_fn(N, N, |i, j| s[(i, j)])
}

fn is_diagonal<const N: usize>(m: &Mat<N>) -> bool {
    (0..N).all(|i| (0..N).all(|j| i == j || m[(i, j)] == 0.0))
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse<const N: usize>(m: &Mat<N>) -> Result<Mat<N>> {
    if is_diagonal(m) {
        let mut out = Mat::<N>::zeros();
        for i in 0..N {
            let d = m[(i, i)];
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::NotPositiveDefinite(d));
            }
            out[(i, i)] = 1.0 / d;
        }
        return Ok(out);
    }
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(dynamic(m).symmetric_eigenvalues().min()))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn sorted_eigenvalues<const N: usize>(m: &Mat<N>) -> Vect<N> {
    let mut vals: Vec<f64> = if is_diagonal(m) {
        (0..N).map(|i| m[(i, i)]).collect()
    } else {
        dynamic(m).symmetric_eigenvalues().iter().copied().collect()
    };
    vals.sort_by(|a, b| a.total_cmp(b));
    Vect::<N>::from_iterator(vals)
}

/// Max-abs entry norm.
pub fn max_abs<const N: usize, const M: usize>(m: &SMatrix<f64, N, M>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}
