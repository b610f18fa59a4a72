//! Dense symmetric linear algebra and Gaussian sampling shared by every other module.
//!
//! Everything here is 64-bit and deterministic: the eigen solver is a cyclic
//! Jacobi iteration with a fixed sweep order, and all randomness flows through
//! [`SeededRng`] streams.

mod eigen;
mod rng;

pub use eigen::{sqrtm_psd, sym_eigen, sym_map, EigenDecomp, SymMatrix};
pub use rng::{SeededRng, Stream};

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Haar-distributed orthogonal matrix: QR of a standard Gaussian matrix with
/// the signs of `diag(R)` folded into `Q`.
pub fn random_orthogonal(d: usize, rng: &mut SeededRng) -> Result<Matrix> {
    if d == 0 {
        return Err(Error::invalid("random_orthogonal: dimension must be >= 1"));
    }
    let g = Matrix::from_fn(d, d, |_, _| rng.standard_normal());
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

/// `n` rows of `mean + factor * z` with `z ~ N(0, I)`.
pub fn sample_gaussian(mean: &Vector, factor: &Matrix, n: usize, rng: &mut SeededRng) -> Matrix {
    let d = mean.len();
    assert_eq!(factor.nrows(), d, "factor rows must match the mean dimension");
    let k = factor.ncols();
    // z is filled row by row so the draw order does not depend on storage layout
    let mut z = Matrix::zeros(n, k);
    for i in 0..n {
        for j in 0..k {
            z[(i, j)] = rng.standard_normal();
        }
    }
    let mut out = z * factor.transpose();
    for mut row in out.row_iter_mut() {
        row += mean.transpose();
    }
    out
}

/// Column means of an `n x d` sample matrix.
pub fn column_mean(x: &Matrix) -> Vector {
    let n = x.nrows().max(1) as f64;
    x.row_sum().transpose() / n
}

/// `(1/n) X^T X`.
pub fn second_moment(x: &Matrix) -> SymMatrix {
    let n = x.nrows().max(1) as f64;
    SymMatrix::symmetrize(&(x.transpose() * x / n))
}

/// Biased (maximum-likelihood) covariance of the rows of `x`.
pub fn sample_covariance(x: &Matrix) -> SymMatrix {
    let mean = column_mean(x);
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    second_moment(&centered)
}

/// Mean of the squared row norms.
pub fn mean_sq_norm(x: &Matrix) -> f64 {
    let n = x.nrows().max(1) as f64;
    x.iter().map(|v| v * v).sum::<f64>() / n
}

#[cfg(test)]
pub(crate) fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}
