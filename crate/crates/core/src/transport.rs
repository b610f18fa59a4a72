//! Component-wise transport maps between Gaussian mixtures, Bayes error,
//! the transport bound terms and exact small-scale W2 oracles.

use crate::em::{responsibilities, Densities, GmmParams};
use crate::error::{Error, Result};
use crate::gausscore::{sqrtm_psd, sym_eigen, sym_map, Matrix, SeededRng, Stream, SymMatrix, Vector};
use serde::{Deserialize, Serialize};

pub const MAX_ASSIGNMENT: usize = 64;

/// Source/target mixtures with `Γ_i = Σ̃_i^{1/2} Σ_i^{−1/2}`.
#[derive(Debug, Clone)]
pub struct TransportPair {
    pub source: GmmParams,
    pub target: GmmParams,
    pub gammas: Vec<Matrix>,
    /// Whether every `Σ_i` commutes with `Σ̃_i` (within 1e-8).
    pub commuting: bool,
}

impl TransportPair {
    pub fn new(source: GmmParams, target: GmmParams) -> Result<Self> {
        let k = source.k();
        if target.k() != k || target.dim() != source.dim() {
            return Err(Error::invalid("transport pair needs equal component counts and dimensions"));
        }
        if source.weights.iter().zip(&target.weights).any(|(a, b)| (a - b).abs() > 1e-12) {
            return Err(Error::invalid("transport pair needs equal mixture weights"));
        }
        let mut gammas = Vec::with_capacity(k);
        let mut commuting = true;
        for i in 0..k {
            let s = source.cov(i);
            let t = target.cov(i);
            let eig = sym_eigen(s)?;
            if eig.min_value() <= 0.0 {
                return Err(Error::SingularCovariance { component: i });
            }
            let inv_sqrt = sym_map(s, |w| 1.0 / w.sqrt())?;
            gammas.push(sqrtm_psd(t)?.as_matrix() * inv_sqrt.as_matrix());
            let comm = s.as_matrix() * t.as_matrix() - t.as_matrix() * s.as_matrix();
            if comm.amax() > 1e-8 {
                commuting = false;
            }
        }
        if !commuting {
            log::warn!("source and target covariances do not commute; Γ_i does not push Σ_i onto Σ̃_i");
        }
        Ok(Self { source, target, gammas, commuting })
    }

    pub fn k(&self) -> usize {
        self.source.k()
    }

    fn affine(&self, i: usize, x: &Vector) -> Vector {
        &self.gammas[i] * (x - &self.source.means[i]) + &self.target.means[i]
    }
}

/// Bayes posterior over component labels.
pub fn posterior(p: &GmmParams, x: &Vector) -> Result<Vector> {
    let row = Matrix::from_row_slice(1, x.len(), x.as_slice());
    let r = responsibilities(p, &row)?;
    Ok(r.row(0).transpose())
}

/// `ψ(x) = Σ_i Pr(Y=i | X=x) (Γ_i (x − μ_i) + μ̃_i)`.
pub fn psi_map(tp: &TransportPair, x: &Vector) -> Result<Vector> {
    let post = posterior(&tp.source, x)?;
    let mut out = Vector::zeros(x.len());
    for i in 0..tp.k() {
        out.axpy(post[i], &tp.affine(i, x), 1.0);
    }
    Ok(out)
}

/// `Ψ(x, y) = Γ_y (x − μ_y) + μ̃_y` for a 0-based label.
pub fn psi_randomized(tp: &TransportPair, x: &Vector, y: usize) -> Result<Vector> {
    if y >= tp.k() {
        return Err(Error::invalid(format!("label {y} out of range for {} components", tp.k())));
    }
    Ok(tp.affine(y, x))
}

/// Monte Carlo misclassification rate of the Bayes classifier.
pub fn bayes_error(p: &GmmParams, n_mc: usize, rng: &mut SeededRng) -> Result<f64> {
    if n_mc == 0 {
        return Err(Error::invalid("bayes_error needs at least one sample"));
    }
    let dens = Densities::new(p)?;
    let chunk = 10_000;
    let mut wrong = 0usize;
    let mut done = 0;
    while done < n_mc {
        let m = chunk.min(n_mc - done);
        let (x, labels) = p.sample(m, rng)?;
        let lj = dens.log_joint(p, &x);
        for (i, &y) in labels.iter().enumerate() {
            let row = lj.row(i);
            let best = (0..p.k()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            if best != y {
                wrong += 1;
            }
        }
        done += m;
    }
    Ok(wrong as f64 / n_mc as f64)
}

/// Moments of the source law needed by the bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceMoments {
    pub ex2: f64,
    pub ex4: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Bound {
    pub m1: f64,
    pub m2: f64,
    pub bound: f64,
}

fn spectral_norm_sq(m: &Matrix) -> Result<f64> {
    Ok(sym_eigen(&SymMatrix::symmetrize(&m.tr_mul(m)))?.max_value().max(0.0))
}

/// Upper bound on the duality gap of the potential built from `ψ`.
pub fn theorem1_bound(tp: &TransportPair, pe: f64, moments: SourceMoments) -> Result<Theorem1Bound> {
    if !(0.0..=1.0).contains(&pe) {
        return Err(Error::invalid(format!("pe must lie in [0, 1], got {pe}")));
    }
    let d = tp.source.dim();
    let mut g_sq = 0.0_f64;
    let mut gi_sq = 0.0_f64;
    let mut shift_sq = 0.0_f64;
    for i in 0..tp.k() {
        g_sq = g_sq.max(spectral_norm_sq(&tp.gammas[i])?);
        gi_sq = gi_sq.max(spectral_norm_sq(&(&tp.gammas[i] - Matrix::identity(d, d)))?);
        shift_sq = shift_sq.max((&tp.gammas[i] * &tp.source.means[i] - &tp.target.means[i]).norm_squared());
    }
    let sp = pe.sqrt();
    let m1 = 8.0 * g_sq * moments.ex4.sqrt() + 8.0 * sp * shift_sq;
    let m2 = 2.0 * gi_sq * moments.ex2 + 2.0 * shift_sq;
    let cross = (m1 * m2).sqrt();
    let bound = (1.5 * m1 + cross) * sp + cross * pe.sqrt().sqrt();
    Ok(Theorem1Bound { m1, m2, bound })
}

/// `(1/n) Σ ½ (a_(i) − b_(i))²` over sorted order.
pub fn w2_1d_exact(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid("w2_1d_exact needs two non-empty lists of equal length"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(a.iter().zip(&b).map(|(x, y)| 0.5 * (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// Exact optimal matching cost `min_σ (1/n) Σ ½‖a_i − b_σ(i)‖²`.
pub fn w2_assignment_exact(a: &Matrix, b: &Matrix) -> Result<f64> {
    let n = a.nrows();
    if n > MAX_ASSIGNMENT {
        return Err(Error::TooLarge { n, max: MAX_ASSIGNMENT });
    }
    if b.nrows() != n || a.ncols() != b.ncols() || n == 0 {
        return Err(Error::invalid("w2_assignment_exact needs equal, non-empty shapes"));
    }
    let cost = Matrix::from_fn(n, n, |i, j| 0.5 * (a.row(i) - b.row(j)).norm_squared());
    let perm = assignment(&cost);
    Ok(perm.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum::<f64>() / n as f64)
}

/// Minimum-cost perfect matching of a square cost matrix (Hungarian method
/// with potentials). Returns the column assigned to every row.
pub fn assignment(cost: &Matrix) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "assignment needs a square matrix");
    // 1-based arrays; index 0 is the virtual root
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        out[p[j] - 1] = j - 1;
    }
    out
}

/// Result of the one-dimensional duality sandwich.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sandwich {
    pub separation: f64,
    pub surrogate: f64,
    pub surrogate_se: f64,
    pub w2: f64,
    pub gap: f64,
    pub pe: f64,
    pub bound: Theorem1Bound,
}

/// Settings for [`dual_sandwich_1d`].
#[derive(Debug, Clone, Copy)]
pub struct SandwichConfig {
    pub n: usize,
    pub n_mc: usize,
    pub grid_points: usize,
    pub grid_sigmas: f64,
    pub seed: u64,
}

impl Default for SandwichConfig {
    fn default() -> Self {
        Self { n: 2000, n_mc: 1_000_000, grid_points: 4001, grid_sigmas: 8.0, seed: 0 }
    }
}

/// Potential `φ` with `φ' = ψ` tabulated on a uniform grid.
struct Potential<'a> {
    tp: &'a TransportPair,
    grid: Vec<f64>,
    psi: Vec<f64>,
    phi: Vec<f64>,
    h: f64,
}

impl<'a> Potential<'a> {
    fn new(tp: &'a TransportPair, lo: f64, hi: f64, points: usize) -> Result<Self> {
        let h = (hi - lo) / (points - 1) as f64;
        let grid: Vec<f64> = (0..points).map(|i| lo + h * i as f64).collect();
        let psi = grid.iter().map(|&g| psi_1d(tp, g)).collect::<Result<Vec<_>>>()?;
        let mut phi = vec![0.0; points];
        for i in 1..points {
            phi[i] = phi[i - 1] + 0.5 * h * (psi[i - 1] + psi[i]);
        }
        Ok(Self { tp, grid, psi, phi, h })
    }

    /// `φ(x)` from the nearest grid node plus Simpson's rule on the remainder.
    fn phi_at(&self, x: f64) -> Result<f64> {
        let last = self.grid.len() - 1;
        let j = (((x - self.grid[0]) / self.h).round().max(0.0) as usize).min(last);
        let g = self.grid[j];
        let mid = psi_1d(self.tp, 0.5 * (g + x))?;
        let end = psi_1d(self.tp, x)?;
        Ok(self.phi[j] + (x - g) / 6.0 * (self.psi[j] + 4.0 * mid + end))
    }

    /// `D̃(x) = ½x² − φ(x)`.
    fn d_tilde(&self, x: f64) -> Result<f64> {
        Ok(0.5 * x * x - self.phi_at(x)?)
    }

    /// `D̃^c(t) = max_x [x t − φ(x)] − ½t²`: exhaustive grid search, then the
    /// stationarity condition `ψ(x) = t` is solved by bisection between the
    /// neighbouring grid nodes.
    fn d_tilde_c(&self, t: f64) -> Result<f64> {
        let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
        for (i, (&g, &p)) in self.grid.iter().zip(&self.phi).enumerate() {
            let val = g * t - p;
            if val > best {
                best = val;
                arg = i;
            }
        }
        let last = self.grid.len() - 1;
        let (mut lo, mut hi) = (self.grid[arg.saturating_sub(1)], self.grid[(arg + 1).min(last)]);
        if psi_1d(self.tp, lo)? <= t && psi_1d(self.tp, hi)? >= t {
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if psi_1d(self.tp, mid)? < t {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * (1.0 + mid.abs()) {
                    break;
                }
            }
            let x = 0.5 * (lo + hi);
            best = best.max(x * t - self.phi_at(x)?);
        }
        Ok(best - 0.5 * t * t)
    }
}

fn psi_1d(tp: &TransportPair, x: f64) -> Result<f64> {
    Ok(psi_map(tp, &Vector::from_element(1, x))?[0])
}

/// Weak-duality sandwich on a one-dimensional symmetric pair: paired samples
/// `X̃ = Ψ(X, Y)` give the surrogate dual value of `D̃ = ½x² − φ`, the exact
/// empirical transport cost and the bound evaluated at the Monte Carlo `P_e`.
pub fn dual_sandwich_1d(tp: &TransportPair, cfg: &SandwichConfig) -> Result<Sandwich> {
    if tp.source.dim() != 1 || !tp.source.is_symmetric2(1e-12) {
        return Err(Error::invalid("the sandwich check needs a one-dimensional symmetric source"));
    }
    let mu = tp.source.means[0][0].abs();
    let sigma = tp.source.cov(0).get(0, 0).sqrt();
    let tmu = tp.target.means[0][0].abs();
    let tsigma = tp.target.cov(0).get(0, 0).sqrt();
    let reach = (mu + cfg.grid_sigmas * sigma).max((tmu + cfg.grid_sigmas * tsigma) * sigma / tsigma);
    let pot = Potential::new(tp, -reach, reach, cfg.grid_points.max(3))?;

    let mut rng = SeededRng::for_stream(cfg.seed, Stream::Data);
    let (x, labels) = tp.source.sample(cfg.n, &mut rng)?;
    let xs: Vec<f64> = x.column(0).iter().cloned().collect();
    let mut ts = Vec::with_capacity(cfg.n);
    let mut terms = Vec::with_capacity(cfg.n);
    for (&xi, &y) in xs.iter().zip(&labels) {
        let t = psi_randomized(tp, &Vector::from_element(1, xi), y)?[0];
        terms.push(pot.d_tilde(xi)? - pot.d_tilde_c(t)?);
        ts.push(t);
    }
    let n = cfg.n as f64;
    let surrogate = terms.iter().sum::<f64>() / n;
    let var = terms.iter().map(|v| (v - surrogate).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let w2 = w2_1d_exact(&xs, &ts)?;

    let pe = bayes_error(&tp.source, cfg.n_mc, &mut SeededRng::for_stream(cfg.seed, Stream::Eval))?;
    let ex2 = xs.iter().map(|v| v * v).sum::<f64>() / n;
    let ex4 = xs.iter().map(|v| v.powi(4)).sum::<f64>() / n;
    let bound = theorem1_bound(tp, pe, SourceMoments { ex2, ex4 })?;
    Ok(Sandwich {
        separation: mu / sigma,
        surrogate,
        surrogate_se: (var / n).sqrt(),
        w2,
        gap: w2 - surrogate,
        pe,
        bound,
    })
}
