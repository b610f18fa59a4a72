//! Gaussian mixtures and the expectation-maximization baseline.

use crate::error::{Error, Result};
use crate::gausscore::{column_mean, sample_covariance, sym_eigen, Matrix, SeededRng, Stream, SymMatrix, Vector};
use crate::model::log_sum_exp;
use serde::{Deserialize, Serialize};

/// `p(x) = Σ π_i N(x | μ_i, Σ_i)`. With `shared_cov` a single covariance is stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmJson", into = "GmmJson")]
pub struct GmmParams {
    pub weights: Vec<f64>,
    pub means: Vec<Vector>,
    pub covs: Vec<SymMatrix>,
    pub shared_cov: bool,
}

#[derive(Serialize, Deserialize)]
struct GmmJson {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    /// row-major
    covariances: Vec<Vec<f64>>,
    shared_cov: bool,
}

impl From<GmmParams> for GmmJson {
    fn from(p: GmmParams) -> Self {
        let d = p.dim();
        GmmJson {
            weights: p.weights,
            means: p.means.iter().map(|m| m.iter().cloned().collect()).collect(),
            covariances: p
                .covs
                .iter()
                .map(|c| (0..d * d).map(|idx| c.get(idx / d, idx % d)).collect())
                .collect(),
            shared_cov: p.shared_cov,
        }
    }
}

impl TryFrom<GmmJson> for GmmParams {
    type Error = Error;
    fn try_from(j: GmmJson) -> Result<Self> {
        let d = j.means.first().map(|m| m.len()).unwrap_or(0);
        let covs = j
            .covariances
            .iter()
            .map(|c| {
                if c.len() != d * d {
                    return Err(Error::invalid("covariance size does not match the mean dimension"));
                }
                SymMatrix::new(Matrix::from_row_slice(d, d, c))
            })
            .collect::<Result<Vec<_>>>()?;
        let p = GmmParams {
            weights: j.weights,
            means: j.means.iter().map(|m| Vector::from_row_slice(m)).collect(),
            covs,
            shared_cov: j.shared_cov,
        };
        p.validate()?;
        Ok(p)
    }
}

impl GmmParams {
    pub fn new(weights: Vec<f64>, means: Vec<Vector>, covs: Vec<SymMatrix>, shared_cov: bool) -> Result<Self> {
        let p = Self { weights, means, covs, shared_cov };
        p.validate()?;
        Ok(p)
    }

    /// `½N(μ, Σ) + ½N(−μ, Σ)`.
    pub fn symmetric(mu: Vector, cov: SymMatrix) -> Result<Self> {
        let neg = -&mu;
        Self::new(vec![0.5, 0.5], vec![mu, neg], vec![cov], true)
    }

    /// Uniform weights, one shared covariance.
    pub fn uniform_shared(means: Vec<Vector>, cov: SymMatrix) -> Result<Self> {
        let k = means.len();
        Self::new(vec![1.0 / k as f64; k], means, vec![cov], true)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k {
            return Err(Error::invalid("mixture needs matching weights and means"));
        }
        let expected = if self.shared_cov { 1 } else { k };
        if self.covs.len() != expected {
            return Err(Error::invalid(format!("expected {expected} covariance matrices, got {}", self.covs.len())));
        }
        let d = self.means[0].len();
        if d == 0 || self.means.iter().any(|m| m.len() != d) || self.covs.iter().any(|c| c.dim() != d) {
            return Err(Error::invalid("mixture dimension mismatch"));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("mixture weights must be a probability vector"));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn cov(&self, i: usize) -> &SymMatrix {
        if self.shared_cov {
            &self.covs[0]
        } else {
            &self.covs[i]
        }
    }

    /// Two equal-weight components with opposite means and one covariance.
    pub fn is_symmetric2(&self, tol: f64) -> bool {
        self.k() == 2
            && (self.weights[0] - 0.5).abs() <= tol
            && (&self.means[0] + &self.means[1]).amax() <= tol
            && (self.shared_cov || (self.covs[0].as_matrix() - self.covs[1].as_matrix()).amax() <= tol)
    }

    /// Exact `E[XX^T]`.
    pub fn second_moment(&self) -> SymMatrix {
        let mut m = SymMatrix::zeros(self.dim());
        for i in 0..self.k() {
            m = m.add(&self.cov(i).scale(self.weights[i])).add_outer(self.weights[i], &self.means[i]);
        }
        m
    }

    /// Draw samples with their 0-based component labels.
    pub fn sample(&self, n: usize, rng: &mut SeededRng) -> Result<(Matrix, Vec<usize>)> {
        let factors = (0..self.covs.len())
            .map(|i| crate::gausscore::sqrtm_psd(&self.covs[i]).map(SymMatrix::into_matrix))
            .collect::<Result<Vec<_>>>()?;
        let d = self.dim();
        let mut x = Matrix::zeros(n, d);
        let mut labels = Vec::with_capacity(n);
        let mut z = Vector::zeros(d);
        for r in 0..n {
            let u = rng.uniform(0.0, 1.0);
            let mut acc = 0.0;
            let mut y = self.k() - 1;
            for (i, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    y = i;
                    break;
                }
            }
            for v in z.iter_mut() {
                *v = rng.standard_normal();
            }
            let f = if self.shared_cov { &factors[0] } else { &factors[y] };
            let row = f * &z + &self.means[y];
            x.set_row(r, &row.transpose());
            labels.push(y);
        }
        Ok((x, labels))
    }
}

/// Per-component Cholesky factors for density evaluation.
pub(crate) struct Densities {
    chols: Vec<(Matrix, f64)>,
}

impl Densities {
    pub(crate) fn new(p: &GmmParams) -> Result<Self> {
        let chols = p
            .covs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let ch = c.as_matrix().clone().cholesky().ok_or(Error::SingularCovariance { component: i })?;
                let l = ch.l();
                let logdet = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
                if !logdet.is_finite() {
                    return Err(Error::SingularCovariance { component: i });
                }
                Ok((l, logdet))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { chols })
    }

    /// `n x k` matrix of `ln π_j + ln N(x_i | μ_j, Σ_j)`.
    pub(crate) fn log_joint(&self, p: &GmmParams, x: &Matrix) -> Matrix {
        let (n, d) = x.shape();
        let k = p.k();
        let c = d as f64 * (2.0 * std::f64::consts::PI).ln();
        let mut out = Matrix::zeros(n, k);
        for j in 0..k {
            let (l, logdet) = &self.chols[if p.shared_cov { 0 } else { j }];
            let mut centered = x.transpose();
            for mut col in centered.column_iter_mut() {
                col -= &p.means[j];
            }
            let w = l.solve_lower_triangular(&centered).expect("Cholesky factor has a positive diagonal");
            let lw = p.weights[j].ln();
            for i in 0..n {
                let maha = w.column(i).norm_squared();
                out[(i, j)] = lw - 0.5 * (c + logdet + maha);
            }
        }
        out
    }
}

/// `(1/n) Σ ln p(x_i)`.
pub fn gmm_loglik(p: &GmmParams, x: &Matrix) -> Result<f64> {
    if x.ncols() != p.dim() || x.nrows() == 0 {
        return Err(Error::invalid("data shape does not match the mixture"));
    }
    let lj = Densities::new(p)?.log_joint(p, x);
    let n = x.nrows();
    let mut s = 0.0;
    for i in 0..n {
        let row: Vec<f64> = lj.row(i).iter().cloned().collect();
        s += log_sum_exp(&row);
    }
    Ok(s / n as f64)
}

/// Posterior component probabilities, one row per sample.
pub fn responsibilities(p: &GmmParams, x: &Matrix) -> Result<Matrix> {
    let lj = Densities::new(p)?.log_joint(p, x);
    Ok(normalize_rows(lj).0)
}

fn normalize_rows(mut lj: Matrix) -> (Matrix, f64) {
    let (n, k) = lj.shape();
    let mut total = 0.0;
    let mut row = vec![0.0; k];
    for i in 0..n {
        for j in 0..k {
            row[j] = lj[(i, j)];
        }
        let lse = log_sum_exp(&row);
        total += lse;
        for j in 0..k {
            lj[(i, j)] = (row[j] - lse).exp();
        }
    }
    (lj, total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub shared_cov: bool,
    pub symmetric2: bool,
    pub max_iters: usize,
    pub tol: f64,
    /// Minimum covariance eigenvalue; `None` means `1e-8 · tr(cov(x)) / d`.
    pub cov_floor: Option<f64>,
    pub seed: u64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self { shared_cov: true, symmetric2: true, max_iters: 1000, tol: 1e-8, cov_floor: None, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub params: GmmParams,
    /// Log-likelihood of the iterate entering each E-step, then of the final parameters.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
}

/// Raise every eigenvalue below `floor` to `floor`.
fn clamp_cov(c: SymMatrix, floor: f64) -> Result<SymMatrix> {
    let eig = sym_eigen(&c)?;
    if eig.min_value() >= floor {
        return Ok(c);
    }
    let w = eig.values.map(|v| v.max(floor));
    let scaled = &eig.vectors * Matrix::from_diagonal(&w);
    Ok(SymMatrix::symmetrize(&(scaled * eig.vectors.transpose())))
}

const LLOYD_ITERS: usize = 20;

fn kmeans_pp(x: &Matrix, k: usize, rng: &mut SeededRng) -> Vec<Vector> {
    let n = x.nrows();
    let mut centers = vec![x.row(rng.below(n)).transpose()];
    let mut dist: Vec<f64> = (0..n).map(|i| (x.row(i).transpose() - &centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.uniform(0.0, total);
            let mut acc = 0.0;
            let mut idx = n - 1;
            for (i, dv) in dist.iter().enumerate() {
                acc += dv;
                if u < acc {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.below(n)
        };
        let c = x.row(pick).transpose();
        for (i, dv) in dist.iter_mut().enumerate() {
            *dv = dv.min((x.row(i).transpose() - &c).norm_squared());
        }
        centers.push(c);
    }
    centers
}

fn init_params(x: &Matrix, k: usize, opts: &EmOptions, floor: f64, rng: &mut SeededRng) -> Result<GmmParams> {
    if opts.symmetric2 {
        // hard split by the sign of the projection on the largest-norm point
        let best = (0..x.nrows())
            .max_by(|&a, &b| x.row(a).norm_squared().total_cmp(&x.row(b).norm_squared()))
            .unwrap_or(0);
        let u = x.row(best).transpose();
        let signs = (x * &u).map(|t| if t > 0.0 { 1.0 } else { -1.0 });
        let mu = x.tr_mul(&signs) / x.nrows() as f64;
        let cov = clamp_cov(crate::gausscore::second_moment(x).add_outer(-1.0, &mu), floor)?;
        return GmmParams::symmetric(mu, cov);
    }
    let cov = clamp_cov(sample_covariance(x), floor)?;
    let mut means = kmeans_pp(x, k, rng);
    let mut labels = vec![usize::MAX; x.nrows()];
    for _ in 0..LLOYD_ITERS {
        let next: Vec<usize> = x
            .row_iter()
            .map(|row| {
                let p = row.transpose();
                (0..k).min_by(|&a, &b| (&p - &means[a]).norm_squared().total_cmp(&(&p - &means[b]).norm_squared())).unwrap_or(0)
            })
            .collect();
        if next == labels {
            break;
        }
        labels = next;
        for (j, m) in means.iter_mut().enumerate() {
            let idx: Vec<usize> = (0..x.nrows()).filter(|&i| labels[i] == j).collect();
            if !idx.is_empty() {
                *m = column_mean(&x.select_rows(&idx));
            }
        }
    }
    let covs = if opts.shared_cov { vec![cov] } else { vec![cov; k] };
    let provisional = GmmParams::new(vec![1.0 / k as f64; k], means, covs, opts.shared_cov)?;
    let hard = Matrix::from_fn(x.nrows(), k, |i, j| if labels[i] == j { 1.0 } else { 0.0 });
    m_step(x, &hard, &provisional, opts, floor, rng)
}

fn m_step(x: &Matrix, resp: &Matrix, prev: &GmmParams, opts: &EmOptions, floor: f64, rng: &mut SeededRng) -> Result<GmmParams> {
    let (n, d) = x.shape();
    let nf = n as f64;
    if opts.symmetric2 {
        let diff: Vector = resp.column(0) - resp.column(1);
        let mu = x.tr_mul(&diff) / nf;
        let sx = crate::gausscore::second_moment(x);
        let cov = clamp_cov(sx.add_outer(-1.0, &mu), floor)?;
        return GmmParams::symmetric(mu, cov);
    }
    let k = resp.ncols();
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut scatters = Vec::with_capacity(k);
    let mut masses = Vec::with_capacity(k);
    for j in 0..k {
        let r = resp.column(j);
        let mass = r.sum();
        if mass < 1e-12 {
            let pick = rng.below(n);
            log::warn!("EM component {j} lost its mass; reinitialized at data point {pick}");
            means.push(x.row(pick).transpose());
            scatters.push(prev.cov(j).as_matrix().clone());
            weights.push(mass.max(1e-12));
            masses.push(0.0);
            continue;
        }
        let mu = x.tr_mul(&r) / mass;
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= mu.transpose();
        }
        let mut weighted = centered.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= r[i];
        }
        scatters.push(centered.transpose() * &weighted);
        means.push(mu);
        weights.push(mass);
        masses.push(mass);
    }
    let wsum: f64 = weights.iter().sum();
    let weights: Vec<f64> = weights.iter().map(|w| w / wsum).collect();
    let covs = if opts.shared_cov {
        let total = scatters.iter().zip(&masses).filter(|(_, &m)| m > 0.0).fold(Matrix::zeros(d, d), |acc, (s, _)| acc + s);
        vec![clamp_cov(SymMatrix::symmetrize(&(total / nf)), floor)?]
    } else {
        scatters
            .iter()
            .zip(&masses)
            .map(|(s, &m)| if m > 0.0 { clamp_cov(SymMatrix::symmetrize(&(s / m)), floor) } else { Ok(SymMatrix::symmetrize(s)) })
            .collect::<Result<Vec<_>>>()?
    };
    // renormalize exactly so the simplex check holds after division
    let mut weights = weights;
    let last = weights.len() - 1;
    weights[last] = 1.0 - weights[..last].iter().sum::<f64>();
    GmmParams::new(weights, means, covs, opts.shared_cov)
}

/// Fit a `k`-component mixture by EM.
pub fn em_fit(x: &Matrix, k: usize, opts: &EmOptions) -> Result<EmFit> {
    let (n, d) = x.shape();
    if k == 0 || n < k || d == 0 {
        return Err(Error::invalid(format!("EM needs n >= k >= 1, got n={n}, k={k}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("EM data must be finite"));
    }
    if opts.symmetric2 && k != 2 {
        return Err(Error::invalid("the symmetric constraint needs k = 2"));
    }
    let floor = opts.cov_floor.unwrap_or_else(|| {
        let tr = sample_covariance(x).trace();
        (1e-8 * tr / d as f64).max(f64::MIN_POSITIVE)
    });
    let mut rng = SeededRng::for_stream(opts.seed, Stream::Init);
    if k == 1 {
        let cov = clamp_cov(sample_covariance(x), floor)?;
        let params = GmmParams::new(vec![1.0], vec![column_mean(x)], vec![cov], true)?;
        let ll = gmm_loglik(&params, x)?;
        return Ok(EmFit { params, loglik_trace: vec![ll], converged: true });
    }
    let mut params = init_params(x, k, opts, floor, &mut rng)?;
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iters {
        let lj = Densities::new(&params)?.log_joint(&params, x);
        let (resp, ll) = normalize_rows(lj);
        if let Some(&prev) = trace.last() {
            if ll - prev < opts.tol {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        params = m_step(x, &resp, &params, opts, floor, &mut rng)?;
    }
    if !converged {
        trace.push(gmm_loglik(&params, x)?);
    }
    Ok(EmFit { params, loglik_trace: trace, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_row_slice(x)
    }

    #[test]
    fn loglik_examples() {
        let p = GmmParams::new(vec![1.0], vec![v(&[0.0])], vec![SymMatrix::identity(1)], true).unwrap();
        let ll = gmm_loglik(&p, &Matrix::zeros(1, 1)).unwrap();
        assert!((ll + 0.918_938_533_204_672_7).abs() < 1e-12);
        let p = GmmParams::symmetric(v(&[1.0]), SymMatrix::identity(1)).unwrap();
        let ll = gmm_loglik(&p, &Matrix::zeros(1, 1)).unwrap();
        assert!((ll - 0.241_970_724_519_143_37_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn singular_covariance_is_reported() {
        let p = GmmParams::symmetric(v(&[1.0, 0.0]), SymMatrix::from_diagonal(&[1.0, 0.0])).unwrap();
        assert!(matches!(gmm_loglik(&p, &Matrix::zeros(2, 2)), Err(Error::SingularCovariance { component: 0 })));
    }

    #[test]
    fn single_component_is_mle() {
        let mut rng = SeededRng::new(1, 0);
        let x = Matrix::from_fn(50, 3, |_, _| rng.standard_normal());
        let fit = em_fit(&x, 1, &EmOptions { symmetric2: false, ..EmOptions::default() }).unwrap();
        assert!((&fit.params.means[0] - column_mean(&x)).amax() < 1e-12);
        assert!((fit.params.covs[0].as_matrix() - sample_covariance(&x).as_matrix()).amax() < 1e-12);
    }

    #[test]
    fn symmetric_atoms() {
        let vv = v(&[1.0, 2.0, -0.5]);
        let mut x = Matrix::zeros(40, 3);
        for i in 0..40 {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            x.set_row(i, &(&vv * s).transpose());
        }
        let floor = 1e-6;
        let fit = em_fit(&x, 2, &EmOptions { cov_floor: Some(floor), ..EmOptions::default() }).unwrap();
        let mu = &fit.params.means[0];
        let err = (mu - &vv).amax().min((mu + &vv).amax());
        assert!(err < 1e-9, "{mu}");
        let expected = Matrix::identity(3, 3) * floor;
        assert!((fit.params.covs[0].as_matrix() - expected).amax() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let p = GmmParams::symmetric(v(&[1.0, -1.0]), SymMatrix::from_diagonal(&[0.5, 0.25])).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("covariances"));
        let back: GmmParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }

    fn separated(seed: u64, n: usize) -> Matrix {
        let p = GmmParams::uniform_shared(
            vec![v(&[3.0, 0.0]), v(&[-3.0, 1.0]), v(&[0.0, -4.0])],
            SymMatrix::from_diagonal(&[0.5, 0.3]),
        )
        .unwrap();
        p.sample(n, &mut SeededRng::new(seed, 0)).unwrap().0
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn loglik_is_monotone(seed in any::<u64>(), shared in any::<bool>()) {
            let x = separated(seed, 150);
            let opts = EmOptions { shared_cov: shared, symmetric2: false, seed, ..EmOptions::default() };
            let fit = em_fit(&x, 3, &opts).unwrap();
            for w in fit.loglik_trace.windows(2) {
                prop_assert!(w[1] - w[0] >= -1e-9, "{:?}", fit.loglik_trace);
            }
        }

        #[test]
        fn responsibilities_sum_to_one(seed in any::<u64>()) {
            let x = separated(seed, 60);
            let fit = em_fit(&x, 3, &EmOptions { symmetric2: false, seed, ..EmOptions::default() }).unwrap();
            let r = responsibilities(&fit.params, &x).unwrap();
            for row in r.row_iter() {
                prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn loglik_is_translation_invariant(seed in any::<u64>(), shift in -5.0f64..5.0) {
            let x = separated(seed, 40);
            let p = GmmParams::symmetric(v(&[1.0, 0.5]), SymMatrix::from_diagonal(&[0.7, 1.2])).unwrap();
            let t = v(&[shift, -shift]);
            let mut xs = x.clone();
            for mut row in xs.row_iter_mut() {
                row += t.transpose();
            }
            let shifted = GmmParams::new(
                p.weights.clone(),
                p.means.iter().map(|m| m + &t).collect(),
                p.covs.clone(),
                true,
            ).unwrap();
            let a = gmm_loglik(&p, &x).unwrap();
            let b = gmm_loglik(&shifted, &xs).unwrap();
            prop_assert!((a - b).abs() <= 1e-10);
        }

        #[test]
        fn symmetric_matches_unconstrained(seed in any::<u64>()) {
            let p = GmmParams::symmetric(v(&[2.0, 2.0]), SymMatrix::from_diagonal(&[0.2, 0.3])).unwrap();
            let (mut x, _) = p.sample(400, &mut SeededRng::new(seed, 3)).unwrap();
            let half = x.rows(0, 200).into_owned();
            x.rows_mut(200, 200).copy_from(&(-half));
            let sym = em_fit(&x, 2, &EmOptions::default()).unwrap().params;
            let free = em_fit(&x, 2, &EmOptions { symmetric2: false, seed, ..EmOptions::default() }).unwrap().params;
            let obj = |q: &GmmParams, i: usize| crate::metrics::gmm_objective(&p, &q.means[i], q.cov(i)).unwrap();
            prop_assert!((obj(&sym, 0) - obj(&free, 0)).abs() <= 0.05, "{:?} vs {:?}", sym.means, free.means);
        }
    }
}
