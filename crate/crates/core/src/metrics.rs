//! Evaluation metrics: Bures–Wasserstein distances, the sign-minimized GMM
//! objective, NLL and the separability condition.

use crate::em::{gmm_loglik, GmmParams};
use crate::error::{Error, Result};
use crate::gausscore::{column_mean, sample_covariance, second_moment, sqrtm_psd, sym_eigen, Matrix, SymMatrix, Vector};
use crate::transport::assignment;
use serde::{Deserialize, Serialize};

/// Per-run evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Closed-form objective against the true mixture, when it is known.
    pub gmm_objective: Option<f64>,
    /// Split-sample estimate from draws of the fitted model.
    pub gmm_objective_orthant: Option<f64>,
    pub nll: f64,
    pub nll_holdout: Option<f64>,
    pub condition1_holds: Option<bool>,
    pub condition1_margin: Option<f64>,
}

/// Squared 2-Wasserstein distance between two Gaussians.
pub fn bures_w2(mu1: &Vector, cov1: &SymMatrix, mu2: &Vector, cov2: &SymMatrix) -> Result<f64> {
    if mu1.len() != mu2.len() || cov1.dim() != mu1.len() || cov2.dim() != mu2.len() {
        return Err(Error::invalid("bures_w2: dimension mismatch"));
    }
    let r1 = sqrtm_psd(cov1)?;
    let inner = SymMatrix::symmetrize(&(r1.as_matrix() * cov2.as_matrix() * r1.as_matrix()));
    let cross = sqrtm_psd(&inner)?;
    let tr = cov1.trace() + cov2.trace() - 2.0 * cross.trace();
    Ok(tr + (mu1 - mu2).norm_squared())
}

/// Trace part of [`bures_w2`] plus the smaller of the squared distances to `±μ̂`.
pub fn gmm_objective(truth: &GmmParams, fitted_mu: &Vector, fitted_cov: &SymMatrix) -> Result<f64> {
    if !truth.is_symmetric2(1e-12) {
        return Err(Error::invalid("gmm_objective needs a symmetric two-component truth"));
    }
    let mu = &truth.means[0];
    let cov = truth.cov(0);
    let zero = Vector::zeros(mu.len());
    let tr = bures_w2(&zero, cov, &zero, fitted_cov)?;
    let shift = (mu - fitted_mu).norm_squared().min((mu + fitted_mu).norm_squared());
    Ok(tr + shift)
}

/// Split the samples by the sign of their projection on `split_dir` and
/// average [`gmm_objective`] over the two halves' Gaussian fits.
pub fn gmm_objective_orthant(truth: &GmmParams, samples: &Matrix, split_dir: &Vector) -> Result<f64> {
    let d = samples.ncols();
    if split_dir.len() != d {
        return Err(Error::invalid("split direction dimension mismatch"));
    }
    let proj = samples * split_dir;
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..samples.nrows()).partition(|&i| proj[i] > 0.0);
    let mut total = 0.0;
    for idx in [pos, neg] {
        if idx.len() < d + 1 {
            return Err(Error::InsufficientSamples { got: idx.len(), need: d + 1 });
        }
        let half = samples.select_rows(&idx);
        total += gmm_objective(truth, &column_mean(&half), &sample_covariance(&half))?;
    }
    Ok(0.5 * total)
}

/// Mean bures distance under the best matching of fitted to true components.
pub fn gmm_objective_matched(truth: &GmmParams, fitted: &GmmParams) -> Result<f64> {
    let k = truth.k();
    if fitted.k() != k {
        return Err(Error::invalid("matched objective needs equal component counts"));
    }
    let mut cost = Matrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            cost[(i, j)] = bures_w2(&truth.means[i], truth.cov(i), &fitted.means[j], fitted.cov(j))?;
        }
    }
    let perm = assignment(&cost);
    Ok(perm.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum::<f64>() / k as f64)
}

/// `|μ^T d| − 2 d^T Σ d − sqrt(d^T Σ d)`; the condition holds when this is nonnegative.
pub fn condition1_check(mu: &Vector, cov: &SymMatrix, dir: &Vector) -> Result<(bool, f64)> {
    if dir.iter().all(|&v| v == 0.0) {
        return Err(Error::invalid("condition1_check: direction must be nonzero"));
    }
    if dir.len() != mu.len() || cov.dim() != mu.len() {
        return Err(Error::invalid("condition1_check: dimension mismatch"));
    }
    let q = cov.quad_form(dir).max(0.0);
    let margin = mu.dot(dir).abs() - 2.0 * q - q.sqrt();
    Ok((margin >= 0.0, margin))
}

/// Unit top eigenvector of `(1/n) Σ x_i x_i^T`, first nonzero coordinate positive.
pub fn principal_direction(samples: &Matrix) -> Result<Vector> {
    if samples.nrows() == 0 || samples.ncols() == 0 {
        return Err(Error::invalid("principal_direction needs at least one sample"));
    }
    let eig = sym_eigen(&second_moment(samples))?;
    Ok(fix_sign(eig.vectors.column(0).into_owned()))
}

/// Top `m` unit eigenvectors of the second moment, each sign-fixed.
pub fn top_directions(samples: &Matrix, m: usize) -> Result<Vec<Vector>> {
    let eig = sym_eigen(&second_moment(samples))?;
    Ok((0..m.min(samples.ncols())).map(|i| fix_sign(eig.vectors.column(i).into_owned())).collect())
}

fn fix_sign(mut v: Vector) -> Vector {
    let scale = v.amax();
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12 * scale) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
    let norm = v.norm();
    v / norm
}

/// Negative mean log-likelihood.
pub fn nll(p: &GmmParams, x: &Matrix) -> Result<f64> {
    gmm_loglik(p, x).map(|ll| -ll)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gausscore::SeededRng;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_row_slice(x)
    }

    fn random_gaussian(d: usize, rng: &mut SeededRng) -> (Vector, SymMatrix) {
        let mu = Vector::from_fn(d, |_, _| rng.standard_normal());
        let b = Matrix::from_fn(d, d, |_, _| rng.standard_normal());
        (mu, SymMatrix::symmetrize(&(&b * b.transpose() * 0.5)))
    }

    #[test]
    fn bures_examples() {
        let z = Vector::zeros(2);
        let i = SymMatrix::identity(2);
        assert_eq!(bures_w2(&z, &i, &z, &i).unwrap(), 0.0);
        let w = bures_w2(&z, &i.scale(4.0), &z, &i).unwrap();
        assert!((w - 2.0).abs() < 1e-12);
    }

    #[test]
    fn objective_sign_invariance() {
        let truth = GmmParams::symmetric(v(&[1.0, 2.0]), SymMatrix::from_diagonal(&[0.3, 0.1])).unwrap();
        let c = truth.cov(0).clone();
        assert!(gmm_objective(&truth, &v(&[1.0, 2.0]), &c).unwrap().abs() < 1e-12);
        assert!(gmm_objective(&truth, &v(&[-1.0, -2.0]), &c).unwrap().abs() < 1e-12);
        let a = gmm_objective(&truth, &v(&[0.7, 1.5]), &c).unwrap();
        let b = gmm_objective(&truth, &v(&[-0.7, -1.5]), &c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn orthant_on_atoms() {
        let mu = v(&[1.0, 1.0]);
        let truth = GmmParams::symmetric(mu.clone(), SymMatrix::from_diagonal(&[0.03, 0.05])).unwrap();
        let mut x = Matrix::zeros(10, 2);
        for i in 0..10 {
            let s = if i < 5 { 1.0 } else { -1.0 };
            x.set_row(i, &(&mu * s).transpose());
        }
        let val = gmm_objective_orthant(&truth, &x, &v(&[1.0, 0.0])).unwrap();
        assert!((val - 0.08).abs() < 1e-12, "{val}");
        let flipped = gmm_objective_orthant(&truth, &x, &v(&[-1.0, 0.0])).unwrap();
        assert!((val - flipped).abs() < 1e-12);
        assert!(matches!(
            gmm_objective_orthant(&truth, &x.rows(0, 5).into_owned(), &v(&[1.0, 0.0])),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn orthant_converges_for_separated_truth() {
        let truth = GmmParams::symmetric(v(&[2.0, 1.0]), SymMatrix::from_diagonal(&[0.1, 0.2])).unwrap();
        let vals: Vec<f64> = [1_000, 10_000, 100_000]
            .iter()
            .map(|&m| {
                let (x, _) = truth.sample(m, &mut SeededRng::new(17, 0)).unwrap();
                gmm_objective_orthant(&truth, &x, &principal_direction(&x).unwrap()).unwrap()
            })
            .collect();
        assert!(vals[2] < 1e-3, "{vals:?}");
        // nonincreasing up to twice the Monte Carlo scale ~ d/m
        for w in vals.windows(2) {
            assert!(w[1] <= w[0] + 2.0 * 4.0 / 1_000.0, "{vals:?}");
        }
    }

    #[test]
    fn condition1_examples() {
        let d = 20;
        let mu = Vector::from_element(d, 1.0);
        let cov = SymMatrix::identity(d).scale(0.03);
        let dir = Vector::from_element(d, 1.0 / (d as f64).sqrt());
        let (holds, margin) = condition1_check(&mu, &cov, &dir).unwrap();
        assert!(holds);
        assert!((margin - (20.0_f64.sqrt() - 0.06 - 0.03_f64.sqrt())).abs() < 1e-12);
        assert!((margin - 4.2389).abs() < 1e-4);
        let (holds, _) = condition1_check(&v(&[1.0, 0.0]), &SymMatrix::identity(2), &v(&[0.0, 1.0])).unwrap();
        assert!(!holds);
        let (_, m2) = condition1_check(&mu, &cov, &(&dir * 2.0)).unwrap();
        assert!((m2 - margin).abs() > 1e-3);
        assert!(condition1_check(&mu, &cov, &Vector::zeros(d)).is_err());
    }

    #[test]
    fn principal_direction_examples() {
        let dir = v(&[3.0, -4.0]);
        let x = Matrix::from_fn(5, 2, |i, j| (i as f64 - 2.0) * dir[j]);
        let p = principal_direction(&x).unwrap();
        assert!((&p - v(&[0.6, -0.8])).amax() < 1e-12);
        let x = Matrix::from_fn(5, 2, |i, j| -(i as f64 + 1.0) * dir[j]);
        assert_eq!(principal_direction(&x).unwrap(), p);
    }

    #[test]
    fn principal_direction_of_isotropic_truth() {
        let d = 20;
        let truth = GmmParams::symmetric(Vector::from_element(d, 1.0), SymMatrix::identity(d).scale(0.03)).unwrap();
        let (x, _) = truth.sample(20_000, &mut SeededRng::new(2, 0)).unwrap();
        let p = principal_direction(&x).unwrap();
        let cos = p.dot(&Vector::from_element(d, 1.0 / (d as f64).sqrt()));
        assert!(cos >= 5.0_f64.to_radians().cos(), "cos={cos}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn bures_is_a_metric(seed in any::<u64>(), d in 1usize..=4) {
            let mut rng = SeededRng::new(seed, 0);
            let (m1, c1) = random_gaussian(d, &mut rng);
            let (m2, c2) = random_gaussian(d, &mut rng);
            let (m3, c3) = random_gaussian(d, &mut rng);
            let w12 = bures_w2(&m1, &c1, &m2, &c2).unwrap();
            let w21 = bures_w2(&m2, &c2, &m1, &c1).unwrap();
            let w13 = bures_w2(&m1, &c1, &m3, &c3).unwrap();
            let w23 = bures_w2(&m2, &c2, &m3, &c3).unwrap();
            prop_assert!(w12 >= -1e-10);
            prop_assert!((w12 - w21).abs() <= 1e-10 * (1.0 + w12));
            prop_assert!(w13.max(0.0).sqrt() <= w12.max(0.0).sqrt() + w23.max(0.0).sqrt() + 1e-8);
            prop_assert!(bures_w2(&m1, &c1, &m1, &c1).unwrap().abs() <= 1e-8);
        }
    }
}
