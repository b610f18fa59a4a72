//! Numerical checks of the method's guarantees at desk scale. Each returns a
//! serializable report; callers decide pass/fail thresholds.

use crate::em::GmmParams;
use crate::error::{Error, Result};
use crate::gausscore::{mean_sq_norm, sqrtm_psd, Matrix, SeededRng, Stream, SymMatrix, Vector};
use crate::metrics::condition1_check;
use crate::model::{disc_smoothness_bound, gen_apply, gen_sample_batch, gen_second_moment, sample_latent, DiscriminatorParams, GeneratorParams};
use crate::objective::{
    c_transform, gh_expect, inner_max_solve_with, objective_value, prop2_upper_bound, stationarity_grad_norm, Anchors, DataSide, GenSide,
    InnerOptions, SymmetricGaussianMoments, TanhKind, TiedMoments, DEFAULT_ORDER,
};
use crate::transport::{dual_sandwich_1d, Sandwich, SandwichConfig, TransportPair};
use serde::Serialize;

const LEMMA_ORDER: usize = 128;

#[derive(Debug, Clone, Serialize)]
pub struct LemmaReport {
    pub cases: usize,
    /// `min μE[tanh X] − μ²E[tanh′ X]` over the grid.
    pub first_min: f64,
    /// Smallest value of the same quantity over the `μ > 0` cases.
    pub first_min_positive: f64,
    /// `max 2E[tanh″ X] + E[tanh‴ X]` over the grid.
    pub second_max: f64,
    pub holds: bool,
}

/// Both tanh-moment inequalities on `μ ∈ {0, 0.25, …, 3}`, `σ ∈ {0.1, 0.5, 1, 2}`.
pub fn lemma_grid() -> LemmaReport {
    let mut first_min = f64::INFINITY;
    let mut first_min_positive = f64::INFINITY;
    let mut second_max = f64::NEG_INFINITY;
    let mut zero_ok = true;
    let mut cases = 0;
    for i in 0..=12 {
        let mu = 0.25 * i as f64;
        for sigma in [0.1, 0.5, 1.0, 2.0] {
            cases += 1;
            let first = mu * gh_expect(mu, sigma, TanhKind::Tanh, LEMMA_ORDER)
                - mu * mu * gh_expect(mu, sigma, TanhKind::TanhPrime, LEMMA_ORDER);
            let second = 2.0 * gh_expect(mu, sigma, TanhKind::TanhSecond, LEMMA_ORDER)
                + gh_expect(mu, sigma, TanhKind::TanhThird, LEMMA_ORDER);
            first_min = first_min.min(first);
            if i == 0 {
                zero_ok &= first.abs() <= 1e-10;
            } else {
                first_min_positive = first_min_positive.min(first);
            }
            second_max = second_max.max(second);
        }
    }
    let holds = first_min >= -1e-10 && first_min_positive > 1e-10 && zero_ok && second_max <= 1e-10;
    LemmaReport { cases, first_min, first_min_positive, second_max, holds }
}

#[derive(Debug, Clone, Serialize)]
pub struct Prop2Report {
    pub trials: usize,
    pub violations: usize,
    /// Smallest `bound − mean D^c` across trials.
    pub min_slack: f64,
}

/// Random discriminators rescaled to smoothness `≤ eta`, compared on `n`
/// samples from a fixed two-component mixture.
pub fn prop2_trials(trials: usize, d: usize, n: usize, eta: f64, seed: u64) -> Result<Prop2Report> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::invalid(format!("eta must lie in (0, 1), got {eta}")));
    }
    let truth = GmmParams::symmetric(Vector::from_element(d, 1.0), SymMatrix::identity(d).scale(0.25))?;
    let (x, _) = truth.sample(n, &mut SeededRng::for_stream(seed, Stream::Data))?;
    let mut rng = SeededRng::for_stream(seed, Stream::Custom(2));
    let mut violations = 0;
    let mut min_slack = f64::INFINITY;
    for _ in 0..trials {
        let tied = rng.below(2) == 0;
        let raw = Matrix::from_fn(d, d, |_, _| rng.standard_normal());
        let a = SymMatrix::symmetrize(&raw);
        let dd = if tied {
            let b1 = Vector::from_fn(d, |_, _| rng.standard_normal());
            let b3 = Vector::from_fn(d, |_, _| rng.standard_normal());
            DiscriminatorParams::tied(a, b1, b3)?
        } else {
            let logits = (0..4).map(|_| Vector::from_fn(d, |_, _| rng.standard_normal())).collect();
            let consts = (0..4).map(|_| rng.standard_normal()).collect();
            DiscriminatorParams::new(a, logits, consts, false)?
        };
        let dd = rescale_to_smoothness(dd, eta * rng.uniform(0.05, 1.0))?;
        let anchor = Vector::from_fn(d, |_, _| rng.standard_normal()) * 0.5;
        let anchors = Anchors::new(vec![anchor.clone(), -anchor], vec![rng.standard_normal() * 0.1, 0.0], 1.0)?;
        let bound = prop2_upper_bound(&dd, &anchors, &x, eta)?;
        let mut total = 0.0;
        for row in x.row_iter() {
            total += c_transform(&dd, &row.transpose(), 1e-10)?;
        }
        let slack = bound - total / n as f64;
        min_slack = min_slack.min(slack);
        if slack < 0.0 {
            violations += 1;
        }
    }
    Ok(Prop2Report { trials, violations, min_slack })
}

/// Scale `A` by `s` and every `b_i` by `√s` until the smoothness bound equals
/// `target` (or is already below it).
fn rescale_to_smoothness(mut dd: DiscriminatorParams, target: f64) -> Result<DiscriminatorParams> {
    let current = disc_smoothness_bound(&dd);
    // the bound is homogeneous of degree one under this scaling, unless λ_max(A) < 0
    let bmax = dd.logits.iter().map(|b| b.norm_squared()).fold(0.0, f64::max);
    let lmax = current - 2.0 * bmax;
    let positive = lmax.max(0.0) + 2.0 * bmax;
    if positive > target {
        let s = target / positive;
        dd.a = dd.a.scale(s);
        for b in dd.logits.iter_mut() {
            *b *= s.sqrt();
        }
    }
    dd.validate()?;
    Ok(dd)
}

/// Source `½N(±sσ, σ²)` with `σ = 1` against target `½N(±1.5sσ, (1.25σ)²)`.
pub fn sandwich_pair(separation: f64) -> Result<TransportPair> {
    let src = GmmParams::symmetric(Vector::from_element(1, separation), SymMatrix::identity(1))?;
    let tgt = GmmParams::symmetric(Vector::from_element(1, 1.5 * separation), SymMatrix::from_diagonal(&[1.5625]))?;
    TransportPair::new(src, tgt)
}

pub fn sandwich_suite(separations: &[f64], cfg: &SandwichConfig) -> Result<Vec<Sandwich>> {
    separations.iter().map(|&s| dual_sandwich_1d(&sandwich_pair(s)?, cfg)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TrendReport {
    pub sizes: Vec<usize>,
    pub mean_gaps: Vec<f64>,
    pub ratio: f64,
}

/// Mean `|L̂_n(G) − L(G)|` over `resamples` draws for each `n`, at a fixed
/// feasible generator. `ratio` compares the first and last sizes.
pub fn generalization_trend(sizes: &[usize], resamples: usize, seed: u64) -> Result<TrendReport> {
    if sizes.len() < 2 {
        return Err(Error::invalid("need at least two sample sizes"));
    }
    let truth = GmmParams::symmetric(Vector::from_row_slice(&[1.0, 0.5]), SymMatrix::from_diagonal(&[0.1, 0.2]))?;
    let mut rng = SeededRng::for_stream(seed, Stream::Init);
    let g = GeneratorParams::symmetric(
        Matrix::from_fn(2, 2, |i, j| if i == j { 0.4 } else { 0.0 } + 0.05 * rng.standard_normal()),
        Vector::from_fn(2, |_, _| rng.uniform(-0.5, 0.5)) + Vector::from_row_slice(&[0.8, 0.2]),
    )?;
    let anchors = Anchors::symmetric(Vector::from_row_slice(&[2.0, 1.0]).normalize(), 8.0)?;
    let gen = GenSide::Quadrature { order: DEFAULT_ORDER };
    let opts = InnerOptions { tol: 1e-11, ..InnerOptions::default() };
    let population = inner_max_solve_with(&g, &DataSide::population(&truth, DEFAULT_ORDER)?, &gen, &anchors, opts)?.value.total;
    let mut data_rng = SeededRng::for_stream(seed, Stream::Data);
    let mut mean_gaps = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let mut acc = 0.0;
        for _ in 0..resamples {
            let (x, _) = truth.sample(n, &mut data_rng)?;
            let est = inner_max_solve_with(&g, &DataSide::samples(x), &gen, &anchors, opts)?.value.total;
            acc += (est - population).abs();
        }
        mean_gaps.push(acc / resamples as f64);
    }
    let ratio = mean_gaps[0] / mean_gaps[mean_gaps.len() - 1];
    Ok(TrendReport { sizes: sizes.to_vec(), mean_gaps, ratio })
}

#[derive(Debug, Clone, Serialize)]
pub struct StationarityReport {
    pub condition1_margin: f64,
    pub at_truth: f64,
    pub perturbed: f64,
}

/// Envelope gradient norm of the population objective at the true
/// parameters and at a mean perturbed by `0.5` along a random unit vector.
pub fn stationarity_at_truth(mu: &Vector, cov: &SymMatrix, lambda: f64, seed: u64) -> Result<StationarityReport> {
    let truth = GmmParams::symmetric(mu.clone(), cov.clone())?;
    let dir = mu.normalize();
    let (_, margin) = condition1_check(mu, cov, &dir)?;
    let anchors = Anchors::symmetric(dir, lambda)?;
    let data = DataSide::population(&truth, DEFAULT_ORDER)?;
    let root = sqrtm_psd(cov)?.into_matrix();
    let at_truth = stationarity_grad_norm(&GeneratorParams::symmetric(root.clone(), mu.clone())?, &data, &anchors, 1e-12)?;
    let mut rng = SeededRng::for_stream(seed, Stream::Custom(6));
    let u = Vector::from_fn(mu.len(), |_, _| rng.standard_normal()).normalize();
    let perturbed = stationarity_grad_norm(&GeneratorParams::symmetric(root, mu + u * 0.5)?, &data, &anchors, 1e-12)?;
    Ok(StationarityReport { condition1_margin: margin, at_truth, perturbed })
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentResiduals {
    pub second_moment: f64,
    pub tanh_moment: f64,
}

/// `‖mean xxᵀ − E GGᵀ‖_F` and `‖mean x tanh(dᵀx) − E G tanh(dᵀG)‖`, with the
/// generator side by quadrature.
pub fn moment_residuals(g: &GeneratorParams, x: &Matrix, d: &Vector) -> Result<MomentResiduals> {
    if x.ncols() != g.dim() || d.len() != g.dim() {
        return Err(Error::invalid("dimension mismatch"));
    }
    let gm = SymmetricGaussianMoments::from_generator(g, DEFAULT_ORDER)?;
    let sx = crate::gausscore::second_moment(x);
    let second_moment = sx.sub(gm.second_moment()).frobenius_sq().sqrt();
    let t = (x * d).map(f64::tanh);
    let data_tanh = x.tr_mul(&t) / x.nrows() as f64;
    let tanh_moment = (data_tanh - gm.x_tanh_mean(d)).norm();
    Ok(MomentResiduals { second_moment, tanh_moment })
}

/// Strong-concavity margin `λ − E‖X‖² − E‖G‖²` for samples and a generator.
pub fn concavity_margin_of(g: &GeneratorParams, x: &Matrix, lambda: f64) -> f64 {
    lambda - mean_sq_norm(x) - g.component_cov().trace() - g.means[0].norm_squared()
}

#[derive(Debug, Clone, Serialize)]
pub struct DecompositionReport {
    pub instances: usize,
    /// Largest `|V(A*, b*) − L1 − V(0, b*)|`, each term evaluated afresh.
    pub max_residual: f64,
    pub min_l1: f64,
    pub min_l2: f64,
}

/// Solves the inner maximization on random small instances (alternating tied
/// with quadrature and untied with a latent batch) and checks that the optimum
/// splits into the quadratic and logit parts.
pub fn decomposition_trials(instances: usize, seed: u64) -> Result<DecompositionReport> {
    let mut rng = SeededRng::for_stream(seed, Stream::Custom(11));
    let mut report = DecompositionReport { instances, max_residual: 0.0, min_l1: f64::INFINITY, min_l2: f64::INFINITY };
    for i in 0..instances {
        let d = 1 + i % 3;
        let g = GeneratorParams::symmetric(
            Matrix::from_fn(d, d, |r, c| if r == c { 0.3 } else { 0.0 } + 0.05 * rng.standard_normal()),
            Vector::from_fn(d, |_, _| rng.uniform(-0.5, 0.5)),
        )?;
        let truth = GeneratorParams::symmetric(
            Matrix::identity(d, d) * 0.2,
            Vector::from_fn(d, |_, _| rng.uniform(-0.6, 0.6)),
        )?;
        let x = gen_sample_batch(&truth, 50, &mut rng);
        let anchors = Anchors::symmetric(Vector::from_fn(d, |_, _| rng.standard_normal()).normalize(), 4.0)?;
        let tied = i % 2 == 0;
        let (gen, gen_second) = if tied {
            (GenSide::Quadrature { order: DEFAULT_ORDER }, gen_second_moment(&g))
        } else {
            let latent = sample_latent(&g, 50, &mut rng);
            let sg = crate::gausscore::second_moment(&gen_apply(&g, &latent)?);
            (GenSide::Batch(latent), sg)
        };
        let data = DataSide::samples(x.clone());
        let sol = inner_max_solve_with(&g, &data, &gen, &anchors, InnerOptions { tied, tol: 1e-12, ..InnerOptions::default() })?;
        let total = objective_value(&g, &sol.disc, &anchors, &data, &gen)?;
        let l1 = crate::gausscore::second_moment(&x).sub(&gen_second).frobenius_sq() / (8.0 * anchors.lambda);
        let mut logit_only = sol.disc.clone();
        logit_only.a = SymMatrix::zeros(d);
        let l2 = objective_value(&g, &logit_only, &anchors, &data, &gen)?;
        report.max_residual = report.max_residual.max((total - l1 - l2).abs());
        report.min_l1 = report.min_l1.min(l1);
        report.min_l2 = report.min_l2.min(l2);
    }
    Ok(report)
}

/// One named pass/fail line of [`verify_suite`].
#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub pass: bool,
    pub detail: serde_json::Value,
}

/// The transport and objective property checks with their default thresholds.
pub fn verify_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let mut push = |name, pass, detail: serde_json::Value| out.push(CheckOutcome { name, pass, detail });

    let dec = decomposition_trials(20, seed)?;
    push("decomposition", dec.max_residual <= 1e-6 && dec.min_l1 >= -1e-9 && dec.min_l2 >= -1e-9, serde_json::to_value(&dec)?);

    let st = stationarity_at_truth(&Vector::from_row_slice(&[1.5, 0.5]), &SymMatrix::identity(2).scale(0.04), 8.0, seed)?;
    push(
        "stationarity_at_truth",
        st.condition1_margin > 0.0 && st.at_truth <= 1e-3 && st.perturbed >= 10.0 * st.at_truth,
        serde_json::to_value(&st)?,
    );

    let p2 = prop2_trials(200, 2, 200, 0.9, seed)?;
    push("c_transform_bound", p2.violations == 0, serde_json::to_value(&p2)?);

    let sw = sandwich_suite(&[2.0, 3.0, 4.0, 5.0], &SandwichConfig { seed, ..SandwichConfig::default() })?;
    let ordered = sw.iter().all(|s| s.surrogate <= s.w2 + 2.0 * s.surrogate_se && s.gap <= s.bound.bound + 1e-8);
    push("duality_sandwich", ordered && sw[3].gap <= sw[0].gap, serde_json::to_value(&sw)?);

    let tr = generalization_trend(&[250, 4000], 20, seed)?;
    push("generalization_trend", (2.0..=8.0).contains(&tr.ratio), serde_json::to_value(&tr)?);

    let lg = lemma_grid();
    push("tanh_lemma", lg.holds, serde_json::to_value(&lg)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decomposition_small_run() {
        let r = decomposition_trials(6, 3).unwrap();
        assert!(r.max_residual <= 1e-6 && r.min_l1 >= 0.0 && r.min_l2 >= -1e-9, "{r:?}");
    }

    #[test]
    fn lemma_grid_holds() {
        let r = lemma_grid();
        assert_eq!(r.cases, 52);
        assert!(r.holds, "{r:?}");
    }

    #[test]
    fn prop2_small_run() {
        let r = prop2_trials(10, 2, 50, 0.9, 1).unwrap();
        assert_eq!(r.violations, 0, "{r:?}");
        assert!(prop2_trials(1, 2, 10, 1.0, 1).is_err());
    }

    #[test]
    fn rescaling_reaches_target() {
        let dd = DiscriminatorParams::tied(SymMatrix::identity(2).scale(3.0), Vector::from_element(2, 2.0), Vector::zeros(2)).unwrap();
        let r = rescale_to_smoothness(dd, 0.5).unwrap();
        assert!((disc_smoothness_bound(&r) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn stationarity_small() {
        let r = stationarity_at_truth(&Vector::from_row_slice(&[1.5, 0.5]), &SymMatrix::identity(2).scale(0.04), 8.0, 0).unwrap();
        assert!(r.condition1_margin > 0.0);
        assert!(r.at_truth <= 1e-3, "{r:?}");
        assert!(r.perturbed >= 10.0 * r.at_truth, "{r:?}");
    }
}
