#[cfg(test)]
use super::max_abs;
use super::{Matrix, Vector};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;
const OFF_DIAGONAL_TOL: f64 = 1e-14;
const PSD_TOL: f64 = 1e-10;

/// Square matrix whose entries are exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    /// Accepts `m` only if it is square and `m[i][j] == m[j][i]` bit for bit.
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::invalid(format!(
                "symmetric matrix must be square and non-empty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let d = m.nrows();
        for i in 0..d {
            for j in (i + 1)..d {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::invalid(format!("matrix not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self(m))
    }

    /// `(m + m^T) / 2`, which is exactly symmetric.
    pub fn symmetrize(m: &Matrix) -> Self {
        assert!(m.is_square(), "symmetrize needs a square matrix");
        Self((m + m.transpose()) * 0.5)
    }

    pub fn identity(d: usize) -> Self {
        Self(Matrix::identity(d, d))
    }

    pub fn zeros(d: usize) -> Self {
        Self(Matrix::zeros(d, d))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(Matrix::from_diagonal(&Vector::from_row_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.0.norm_squared()
    }

    pub fn scale(&self, c: f64) -> Self {
        Self(&self.0 * c)
    }

    pub fn add(&self, other: &SymMatrix) -> Self {
        Self(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> Self {
        Self(&self.0 - &other.0)
    }

    /// `self + c * v v^T`, kept exactly symmetric.
    pub fn add_outer(&self, c: f64, v: &Vector) -> Self {
        let mut m = self.0.clone();
        m.ger(c, v, v, 1.0);
        Self::symmetrize(&m)
    }

    pub fn quad_form(&self, v: &Vector) -> f64 {
        v.dot(&(&self.0 * v))
    }

    pub fn mul_vec(&self, v: &Vector) -> Vector {
        &self.0 * v
    }
}

impl From<SymMatrix> for Matrix {
    fn from(s: SymMatrix) -> Self {
        s.0
    }
}

impl TryFrom<Matrix> for SymMatrix {
    type Error = Error;
    fn try_from(m: Matrix) -> Result<Self> {
        SymMatrix::new(m)
    }
}

/// Eigenvalues in descending order with the matching orthonormal eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct EigenDecomp {
    pub values: Vector,
    pub vectors: Matrix,
}

impl EigenDecomp {
    pub fn reconstruct(&self) -> Matrix {
        let scaled = &self.vectors * Matrix::from_diagonal(&self.values);
        scaled * self.vectors.transpose()
    }

    pub fn max_value(&self) -> f64 {
        self.values[0]
    }

    pub fn min_value(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

/// Cyclic Jacobi eigen-decomposition.
///
/// Sweeps over the strict upper triangle in row order until the off-diagonal
/// Frobenius mass falls below `1e-14 * ||M||_F`, capped at 100 sweeps.
pub fn sym_eigen(m: &SymMatrix) -> Result<EigenDecomp> {
    if m.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("sym_eigen: non-finite entry"));
    }
    let n = m.dim();
    let mut a = m.0.clone();
    let mut v = Matrix::identity(n, n);
    let threshold = OFF_DIAGONAL_TOL * m.0.norm();

    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) <= threshold {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s, t, apq);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = Vector::from_iterator(n, order.iter().map(|&i| a[(i, i)]));
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &v.column(src));
    }
    Ok(EigenDecomp { values, vectors })
}

#[allow(clippy::too_many_arguments)]
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64, t: f64, apq: f64) {
    let n = a.nrows();
    let tau = s / (1.0 + c);
    a[(p, p)] -= t * apq;
    a[(q, q)] += t * apq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for r in 0..n {
        if r == p || r == q {
            continue;
        }
        let arp = a[(r, p)];
        let arq = a[(r, q)];
        let new_rp = arp - s * (arq + tau * arp);
        let new_rq = arq + s * (arp - tau * arq);
        a[(r, p)] = new_rp;
        a[(p, r)] = new_rp;
        a[(r, q)] = new_rq;
        a[(q, r)] = new_rq;
    }
    for r in 0..n {
        let vrp = v[(r, p)];
        let vrq = v[(r, q)];
        v[(r, p)] = vrp - s * (vrq + tau * vrp);
        v[(r, q)] = vrq + s * (vrp - tau * vrq);
    }
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[(i, j)] * a[(i, j)];
            }
        }
    }
    sum.sqrt()
}

/// `V f(W) V^T` for a scalar function of the eigenvalues.
pub fn sym_map(m: &SymMatrix, f: impl Fn(f64) -> f64) -> Result<SymMatrix> {
    let eig = sym_eigen(m)?;
    Ok(from_eigen(&eig, f))
}

fn from_eigen(eig: &EigenDecomp, f: impl Fn(f64) -> f64) -> SymMatrix {
    let mapped = eig.values.map(f);
    let scaled = &eig.vectors * Matrix::from_diagonal(&mapped);
    SymMatrix::symmetrize(&(scaled * eig.vectors.transpose()))
}

/// Principal square root of a (near) positive semi-definite matrix.
///
/// Eigenvalues in `[-1e-10 * ||m||, 0)` are clamped to zero; anything more
/// negative is rejected.
pub fn sqrtm_psd(m: &SymMatrix) -> Result<SymMatrix> {
    let eig = psd_eigen(m)?;
    Ok(from_eigen(&eig, |w| w.max(0.0).sqrt()))
}

/// Eigen-decomposition after checking near-PSD-ness against the spectral norm.
pub(crate) fn psd_eigen(m: &SymMatrix) -> Result<EigenDecomp> {
    let eig = sym_eigen(m)?;
    let scale = eig.values.iter().fold(0.0_f64, |acc, w| acc.max(w.abs()));
    let tolerance = PSD_TOL * scale;
    let min = eig.min_value();
    if min < -tolerance {
        return Err(Error::NotPsd { min_eigenvalue: min, tolerance });
    }
    Ok(eig)
}

#[cfg(test)]
fn reconstruction_error(eig: &EigenDecomp, m: &SymMatrix) -> f64 {
    max_abs(&(eig.reconstruct() - m.as_matrix()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gausscore::SeededRng;
    use proptest::prelude::*;

    fn sym(rows: &[&[f64]]) -> SymMatrix {
        let d = rows.len();
        SymMatrix::new(Matrix::from_fn(d, d, |i, j| rows[i][j])).unwrap()
    }

    #[test]
    fn diagonal_case() {
        let e = sym_eigen(&SymMatrix::from_diagonal(&[3.0, 1.0])).unwrap();
        assert_eq!(e.values.as_slice(), &[3.0, 1.0]);
        assert_eq!(e.vectors, Matrix::identity(2, 2));
        let e = sym_eigen(&SymMatrix::from_diagonal(&[1.0, 3.0])).unwrap();
        assert_eq!(e.values.as_slice(), &[3.0, 1.0]);
    }

    #[test]
    fn identity_case() {
        let e = sym_eigen(&SymMatrix::identity(5)).unwrap();
        assert!(e.values.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn two_by_two_by_hand() {
        // det([[2-w,1],[1,2-w]]) = (2-w)^2 - 1 = 0  =>  w = 3, 1
        let e = sym_eigen(&sym(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v0 = e.vectors.column(0);
        let v1 = e.vectors.column(1);
        assert!((v0[0].abs() - h).abs() < 1e-14 && (v0[0] - v0[1]).abs() < 1e-14);
        assert!((v1[0].abs() - h).abs() < 1e-14 && (v1[0] + v1[1]).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_finite() {
        let m = SymMatrix::new(Matrix::from_element(2, 2, f64::NAN));
        // NaN != NaN, so construction itself refuses it
        assert!(m.is_err());
        let m = SymMatrix::from_diagonal(&[f64::INFINITY, 1.0]);
        assert!(matches!(sym_eigen(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn rejects_asymmetric() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0 + 1e-15, 1.0]);
        assert!(SymMatrix::new(m).is_err());
    }

    #[test]
    fn sqrtm_examples() {
        assert_eq!(sqrtm_psd(&SymMatrix::identity(3)).unwrap(), SymMatrix::identity(3));
        let r = sqrtm_psd(&SymMatrix::from_diagonal(&[4.0, 9.0])).unwrap();
        assert_eq!(r, SymMatrix::from_diagonal(&[2.0, 3.0]));
        assert_eq!(sqrtm_psd(&SymMatrix::zeros(3)).unwrap(), SymMatrix::zeros(3));
    }

    #[test]
    fn sqrtm_rejects_indefinite_and_clamps_rounding() {
        let m = SymMatrix::from_diagonal(&[1.0, -0.5]);
        assert!(matches!(sqrtm_psd(&m), Err(Error::NotPsd { .. })));
        let m = SymMatrix::from_diagonal(&[1.0, -1e-13]);
        let r = sqrtm_psd(&m).unwrap();
        assert_eq!(r.get(1, 1), 0.0);
    }

    fn random_sym(d: usize, seed: u64) -> SymMatrix {
        let mut rng = SeededRng::new(seed, 0);
        let m = Matrix::from_fn(d, d, |_, _| rng.uniform(-1.0, 1.0));
        SymMatrix::symmetrize(&m)
    }

    fn random_psd(d: usize, seed: u64) -> SymMatrix {
        let mut rng = SeededRng::new(seed, 1);
        let b = Matrix::from_fn(d, d, |_, _| rng.standard_normal());
        SymMatrix::symmetrize(&(&b * b.transpose()))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn reconstructs(d in 1usize..=8, seed in any::<u64>()) {
            let m = random_sym(d, seed);
            let e = sym_eigen(&m).unwrap();
            prop_assert!(reconstruction_error(&e, &m) <= 1e-8 * (1.0 + max_abs(m.as_matrix())));
            let ortho = max_abs(&(e.vectors.transpose() * &e.vectors - Matrix::identity(d, d)));
            prop_assert!(ortho <= 1e-10);
            for i in 1..d {
                prop_assert!(e.values[i - 1] >= e.values[i]);
            }
        }

        #[test]
        fn sqrt_squares_back(d in 1usize..=8, seed in any::<u64>()) {
            let m = random_psd(d, seed);
            let r = sqrtm_psd(&m).unwrap();
            let err = max_abs(&(r.as_matrix() * r.as_matrix() - m.as_matrix()));
            prop_assert!(err <= 1e-8 * (1.0 + max_abs(m.as_matrix())));
        }

        #[test]
        fn sqrt_scales(d in 1usize..=6, seed in any::<u64>(), c in 0.01f64..100.0) {
            let m = random_psd(d, seed);
            let lhs = sqrtm_psd(&m.scale(c)).unwrap();
            let rhs = sqrtm_psd(&m).unwrap().scale(c.sqrt());
            prop_assert!(max_abs(&(lhs.as_matrix() - rhs.as_matrix())) <= 1e-8 * (1.0 + max_abs(rhs.as_matrix())));
        }
    }
}
