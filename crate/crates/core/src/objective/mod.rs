//! Regularized minimax objective, its exact inner maximization, and the
//! c-transform machinery.

pub mod quadrature;

pub use quadrature::{gh_expect, log_cosh, GaussHermite, TanhKind};

use crate::em::GmmParams;
use crate::error::{Error, Result};
use crate::gausscore::{sym_eigen, Matrix, SymMatrix, Vector};
use crate::model::{
    disc_grad_x, disc_smoothness_bound, disc_value, fold_tied, gen_apply, gen_second_moment, log_sum_exp,
    softmax_in_place, DiscGrad, DiscriminatorParams, GenGrad, GenMode, GeneratorParams, GradPack, LatentBatch,
};

pub const DEFAULT_ORDER: usize = 64;
pub const DEFAULT_INNER_TOL: f64 = 1e-8;
pub const DEFAULT_INNER_ITERS: usize = 100_000;
const C_TRANSFORM_ITERS: usize = 100_000;

/// Regularization centers `(d_i, e_i)` and weight `λ`. Logit vectors `b_i`
/// and `b_{k+i}` are both pulled toward `d_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchors {
    pub d_vecs: Vec<Vector>,
    pub e_consts: Vec<f64>,
    pub lambda: f64,
}

impl Anchors {
    pub fn new(d_vecs: Vec<Vector>, e_consts: Vec<f64>, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
        }
        if d_vecs.is_empty() || d_vecs.len() != e_consts.len() {
            return Err(Error::invalid("anchors need k vectors and k constants"));
        }
        let d = d_vecs[0].len();
        if d_vecs.iter().any(|v| v.len() != d) {
            return Err(Error::invalid("anchor vectors differ in dimension"));
        }
        Ok(Self { d_vecs, e_consts, lambda })
    }

    /// The two-component pattern `(d, −d)` with zero constants.
    pub fn symmetric(d: Vector, lambda: f64) -> Result<Self> {
        let neg = -&d;
        Self::new(vec![d, neg], vec![0.0, 0.0], lambda)
    }

    pub fn k(&self) -> usize {
        self.d_vecs.len()
    }

    pub fn dim(&self) -> usize {
        self.d_vecs[0].len()
    }

    pub fn max_norm_sq(&self) -> f64 {
        self.d_vecs.iter().map(|v| v.norm_squared()).fold(0.0, f64::max)
    }

    fn check(&self, dd: &DiscriminatorParams) -> Result<()> {
        if dd.k() != self.k() || dd.dim() != self.dim() {
            return Err(Error::invalid(format!(
                "anchors (k={}, d={}) do not match discriminator (k={}, d={})",
                self.k(),
                self.dim(),
                dd.k(),
                dd.dim()
            )));
        }
        Ok(())
    }
}

/// Decomposed objective value at (or near) the inner maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    pub l1: f64,
    pub l2: f64,
    /// The penalty `(λ/2)(‖A‖² + Σ[...])` that was subtracted.
    pub reg: f64,
}

/// `‖A‖²_F + Σ_i [‖b_i − d_i‖² + ‖b_{k+i} − d_i‖² + (c_i − e_i)² + (c_{k+i} − e_i)²]`.
pub fn regularizer(dd: &DiscriminatorParams, anchors: &Anchors) -> f64 {
    dd.a.frobenius_sq() + logit_regularizer(dd, anchors)
}

fn logit_regularizer(dd: &DiscriminatorParams, anchors: &Anchors) -> f64 {
    let k = dd.k();
    let mut r = 0.0;
    for (i, (b, c)) in dd.logits.iter().zip(&dd.consts).enumerate() {
        let j = i % k;
        r += (b - &anchors.d_vecs[j]).norm_squared() + (c - anchors.e_consts[j]).powi(2);
    }
    r
}

/// Cached statistics of a fixed sample matrix.
#[derive(Debug, Clone)]
pub struct SampleStats {
    pub x: Matrix,
    pub second_moment: SymMatrix,
    pub mean_sq_norm: f64,
}

impl SampleStats {
    pub fn new(x: Matrix) -> Self {
        let second_moment = crate::gausscore::second_moment(&x);
        let mean_sq_norm = second_moment.trace();
        Self { x, second_moment, mean_sq_norm }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }
}

/// Expectations needed by the tied two-component objective.
pub trait TiedMoments {
    fn second_moment(&self) -> &SymMatrix;
    fn mean_sq_norm(&self) -> f64;
    /// `E ln cosh(b^T X)`
    fn logcosh_mean(&self, b: &Vector) -> f64;
    /// `E[X tanh(b^T X)]`
    fn x_tanh_mean(&self, b: &Vector) -> Vector;
}

impl TiedMoments for SampleStats {
    fn second_moment(&self) -> &SymMatrix {
        &self.second_moment
    }

    fn mean_sq_norm(&self) -> f64 {
        self.mean_sq_norm
    }

    fn logcosh_mean(&self, b: &Vector) -> f64 {
        let t = &self.x * b;
        t.iter().map(|&v| log_cosh(v)).sum::<f64>() / self.n() as f64
    }

    fn x_tanh_mean(&self, b: &Vector) -> Vector {
        let t = (&self.x * b).map(f64::tanh);
        self.x.tr_mul(&t) / self.n() as f64
    }
}

/// Population moments of the symmetric mixture `½N(m, S) + ½N(−m, S)` by
/// Gauss–Hermite quadrature on one-dimensional projections.
#[derive(Debug, Clone)]
pub struct SymmetricGaussianMoments {
    pub mean: Vector,
    pub cov: SymMatrix,
    pub order: usize,
    second_moment: SymMatrix,
}

impl SymmetricGaussianMoments {
    pub fn new(mean: Vector, cov: SymMatrix, order: usize) -> Self {
        let second_moment = cov.add_outer(1.0, &mean);
        Self { mean, cov, order, second_moment }
    }

    pub fn from_generator(g: &GeneratorParams, order: usize) -> Result<Self> {
        if g.mode != GenMode::Symmetric2 {
            return Err(Error::invalid("quadrature moments need a symmetric generator"));
        }
        Ok(Self::new(g.means[0].clone(), g.component_cov(), order))
    }

    pub fn from_gmm(p: &GmmParams, order: usize) -> Result<Self> {
        if !p.is_symmetric2(1e-12) {
            return Err(Error::invalid("quadrature moments need a symmetric two-component mixture"));
        }
        Ok(Self::new(p.means[0].clone(), p.cov(0).clone(), order))
    }

    fn projection(&self, b: &Vector) -> (f64, f64) {
        (b.dot(&self.mean), self.cov.quad_form(b).max(0.0).sqrt())
    }
}

impl TiedMoments for SymmetricGaussianMoments {
    fn second_moment(&self) -> &SymMatrix {
        &self.second_moment
    }

    fn mean_sq_norm(&self) -> f64 {
        self.second_moment.trace()
    }

    fn logcosh_mean(&self, b: &Vector) -> f64 {
        let (m, s) = self.projection(b);
        gh_expect(m, s, TanhKind::LogCosh, self.order)
    }

    fn x_tanh_mean(&self, b: &Vector) -> Vector {
        // Stein: E[X tanh(b^T X)] = m E tanh(t) + S b E tanh'(t)
        let (m, s) = self.projection(b);
        let e1 = gh_expect(m, s, TanhKind::Tanh, self.order);
        let e2 = gh_expect(m, s, TanhKind::TanhPrime, self.order);
        &self.mean * e1 + self.cov.mul_vec(b) * e2
    }
}

/// Where data-side expectations come from.
#[derive(Debug, Clone)]
pub enum DataSide {
    Samples(SampleStats),
    Population(SymmetricGaussianMoments),
}

impl DataSide {
    pub fn samples(x: Matrix) -> Self {
        DataSide::Samples(SampleStats::new(x))
    }

    pub fn population(p: &GmmParams, order: usize) -> Result<Self> {
        SymmetricGaussianMoments::from_gmm(p, order).map(DataSide::Population)
    }

    fn moments(&self) -> &dyn TiedMoments {
        match self {
            DataSide::Samples(s) => s,
            DataSide::Population(p) => p,
        }
    }

    pub fn second_moment(&self) -> &SymMatrix {
        self.moments().second_moment()
    }

    pub fn mean_sq_norm(&self) -> f64 {
        self.moments().mean_sq_norm()
    }
}

/// Where generator-side expectations come from.
#[derive(Debug, Clone)]
pub enum GenSide {
    Batch(LatentBatch),
    /// Exact moments plus quadrature; symmetric tied setting only.
    Quadrature { order: usize },
}

enum GenMoments {
    Samples(SampleStats),
    Quadrature(SymmetricGaussianMoments),
}

impl GenMoments {
    fn build(g: &GeneratorParams, gen: &GenSide) -> Result<Self> {
        Ok(match gen {
            GenSide::Batch(latent) => GenMoments::Samples(SampleStats::new(gen_apply(g, latent)?)),
            GenSide::Quadrature { order } => GenMoments::Quadrature(SymmetricGaussianMoments::from_generator(g, *order)?),
        })
    }

    fn as_dyn(&self) -> &dyn TiedMoments {
        match self {
            GenMoments::Samples(s) => s,
            GenMoments::Quadrature(q) => q,
        }
    }
}

/// Per-batch averages of the discriminator and its softmax statistics.
struct BatchTerms {
    /// mean of the log-sum-exp difference (no quadratic part)
    lse_mean: f64,
    /// `mean q_i(x) x` for every logit vector, unsigned
    qx: Vec<Vector>,
    /// `mean q_i(x)`
    q: Vec<f64>,
    /// signed softmax weights per row, `n x 2k`; kept for input gradients
    signed_q: Matrix,
}

fn batch_terms(dd: &DiscriminatorParams, x: &Matrix) -> BatchTerms {
    let n = x.nrows();
    let k = dd.k();
    let nb = dd.logits.len();
    let mut bmat = Matrix::zeros(x.ncols(), nb);
    for (i, b) in dd.logits.iter().enumerate() {
        bmat.set_column(i, b);
    }
    let t = x * &bmat;
    let mut weights = Matrix::zeros(n, nb);
    let mut signed = Matrix::zeros(n, nb);
    let mut lse = 0.0;
    let mut row = vec![0.0; nb];
    for r in 0..n {
        for i in 0..nb {
            row[i] = t[(r, i)] + dd.consts[i];
        }
        lse += log_sum_exp(&row[..k]) - log_sum_exp(&row[k..]);
        let (lo, hi) = row.split_at_mut(k);
        softmax_in_place(lo);
        softmax_in_place(hi);
        for i in 0..nb {
            weights[(r, i)] = row[i];
            signed[(r, i)] = if i < k { row[i] } else { -row[i] };
        }
    }
    let nf = n.max(1) as f64;
    let qx_mat = x.transpose() * &weights / nf;
    let qx = (0..nb).map(|i| qx_mat.column(i).into_owned()).collect();
    let q = (0..nb).map(|i| weights.column(i).sum() / nf).collect();
    BatchTerms { lse_mean: lse / nf, qx, q, signed_q: signed }
}

fn signs(k: usize) -> impl Iterator<Item = f64> {
    (0..2 * k).map(move |i| if i < k { 1.0 } else { -1.0 })
}

fn check_shapes(g: &GeneratorParams, dd: &DiscriminatorParams, anchors: &Anchors, x: &Matrix) -> Result<()> {
    anchors.check(dd)?;
    if g.dim() != dd.dim() || x.ncols() != dd.dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch: generator {}, discriminator {}, data {}",
            g.dim(),
            dd.dim(),
            x.ncols()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::invalid("empty data batch"));
    }
    Ok(())
}

/// Empirical objective and gradients with respect to every parameter.
pub fn minimax_value_and_grads(
    g: &GeneratorParams,
    dd: &DiscriminatorParams,
    anchors: &Anchors,
    x_batch: &Matrix,
    latent: &LatentBatch,
) -> Result<(f64, GradPack)> {
    let stats = SampleStats::new(x_batch.clone());
    minimax_with_stats(g, dd, anchors, &stats, latent)
}

/// [`minimax_value_and_grads`] with precomputed data statistics.
pub fn minimax_with_stats(
    g: &GeneratorParams,
    dd: &DiscriminatorParams,
    anchors: &Anchors,
    data: &SampleStats,
    latent: &LatentBatch,
) -> Result<(f64, GradPack)> {
    check_shapes(g, dd, anchors, &data.x)?;
    if latent.is_empty() {
        return Err(Error::invalid("empty latent batch"));
    }
    let gx = gen_apply(g, latent)?;
    let m = gx.nrows() as f64;
    let a = dd.a.as_matrix();
    let dt = batch_terms(dd, &data.x);
    let gt = batch_terms(dd, &gx);
    let ga = &gx * a;
    let gen_quad = ga.component_mul(&gx).sum() * 0.5 / m;
    let data_quad = 0.5 * a.dot(data.second_moment.as_matrix());
    let value = data_quad + dt.lse_mean - gen_quad - gt.lse_mean - 0.5 * anchors.lambda * regularizer(dd, anchors);
    let sg = gx.transpose() * &gx / m;
    let disc = disc_grad_terms(dd, anchors, data, &dt, &gt, &sg);
    let gen = gen_grad_terms(g, dd, latent, ga, &gt);
    Ok((value, GradPack { gen, disc }))
}

/// Discriminator gradient for a generated batch `gx`, skipping the value.
pub fn disc_grad_batch(dd: &DiscriminatorParams, anchors: &Anchors, data: &SampleStats, gx: &Matrix) -> DiscGrad {
    let dt = batch_terms(dd, &data.x);
    let gt = batch_terms(dd, gx);
    let sg = gx.transpose() * gx / gx.nrows() as f64;
    disc_grad_terms(dd, anchors, data, &dt, &gt, &sg)
}

/// Generator gradient for the batch `gx = G(latent)`, skipping the value.
pub fn gen_grad_batch(g: &GeneratorParams, dd: &DiscriminatorParams, latent: &LatentBatch, gx: &Matrix) -> GenGrad {
    let gt = batch_terms(dd, gx);
    gen_grad_terms(g, dd, latent, gx * dd.a.as_matrix(), &gt)
}

fn disc_grad_terms(
    dd: &DiscriminatorParams,
    anchors: &Anchors,
    data: &SampleStats,
    dt: &BatchTerms,
    gt: &BatchTerms,
    sg: &Matrix,
) -> DiscGrad {
    let k = dd.k();
    let lambda = anchors.lambda;
    let grad_a = (data.second_moment.as_matrix() - sg) * 0.5 - dd.a.as_matrix() * lambda;
    let mut full_b = Vec::with_capacity(2 * k);
    let mut grad_c = Vec::with_capacity(2 * k);
    for (i, s) in signs(k).enumerate() {
        let j = i % k;
        full_b.push((&dt.qx[i] - &gt.qx[i]) * s - (&dd.logits[i] - &anchors.d_vecs[j]) * lambda);
        grad_c.push(s * (dt.q[i] - gt.q[i]) - lambda * (dd.consts[i] - anchors.e_consts[j]));
    }
    if dd.tied {
        DiscGrad { a: grad_a, logits: fold_tied(&full_b), consts: vec![0.0; 2 * k] }
    } else {
        DiscGrad { a: grad_a, logits: full_b, consts: grad_c }
    }
}

/// Input gradients of D at every generated row, `G A + Q_signed B^T`, chained
/// through the generator. `ga` is `G A`.
fn gen_grad_terms(g: &GeneratorParams, dd: &DiscriminatorParams, latent: &LatentBatch, ga: Matrix, gt: &BatchTerms) -> GenGrad {
    let mut bmat = Matrix::zeros(dd.dim(), dd.logits.len());
    for (i, b) in dd.logits.iter().enumerate() {
        bmat.set_column(i, b);
    }
    let mut grad_x = ga;
    grad_x.gemm(1.0, &gt.signed_q, &bmat.transpose(), 1.0);
    generator_grad(g, latent, &grad_x)
}

/// Chain `-mean ∇D(G)` through the generator.
fn generator_grad(g: &GeneratorParams, latent: &LatentBatch, grad_x: &Matrix) -> GenGrad {
    let m = latent.len() as f64;
    let d = g.dim();
    let mut weighted = grad_x.clone();
    let mut means = vec![Vector::zeros(d); g.means.len()];
    for (r, &y) in latent.labels.iter().enumerate() {
        match g.mode {
            GenMode::Symmetric2 => {
                if y < 0 {
                    weighted.row_mut(r).neg_mut();
                }
                means[0] -= weighted.row(r).transpose();
            }
            GenMode::SharedCov => {
                means[y as usize - 1] -= weighted.row(r).transpose();
            }
        }
    }
    for mu in means.iter_mut() {
        *mu /= m;
    }
    let lambda = -(weighted.transpose() * &latent.z) / m;
    GenGrad { lambda, means }
}

/// Empirical objective value only.
pub fn minimax_value(
    g: &GeneratorParams,
    dd: &DiscriminatorParams,
    anchors: &Anchors,
    x_batch: &Matrix,
    latent: &LatentBatch,
) -> Result<f64> {
    check_shapes(g, dd, anchors, x_batch)?;
    let gx = gen_apply(g, latent)?;
    let mean_d = |x: &Matrix| x.row_iter().map(|r| disc_value(dd, &r.transpose())).sum::<f64>() / x.nrows() as f64;
    Ok(mean_d(x_batch) - mean_d(&gx) - 0.5 * anchors.lambda * regularizer(dd, anchors))
}

/// `‖E[XX^T] − E[GG^T]‖²_F / (8λ)`, the value of the `A`-block at its optimum.
pub fn l1_value(g: &GeneratorParams, data_second_moment: &SymMatrix, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    if data_second_moment.dim() != g.dim() {
        return Err(Error::invalid("second moment dimension mismatch"));
    }
    let delta = data_second_moment.sub(&gen_second_moment(g));
    Ok(delta.frobenius_sq() / (8.0 * lambda))
}

/// Objective of a tied discriminator with both sides given by moments.
pub fn tied_value(
    dd: &DiscriminatorParams,
    anchors: &Anchors,
    data: &dyn TiedMoments,
    gen: &dyn TiedMoments,
) -> Result<f64> {
    anchors.check(dd)?;
    if !dd.tied {
        return Err(Error::invalid("moment-based evaluation needs a tied discriminator"));
    }
    let a = dd.a.as_matrix();
    let quad = 0.5 * a.dot(&(data.second_moment().as_matrix() - gen.second_moment().as_matrix()));
    let (b1, b3) = (&dd.logits[0], &dd.logits[2]);
    let soft = data.logcosh_mean(b1) - data.logcosh_mean(b3) - gen.logcosh_mean(b1) + gen.logcosh_mean(b3);
    Ok(quad + soft - 0.5 * anchors.lambda * regularizer(dd, anchors))
}

/// Objective at `dd` with expectations from the given sides.
pub fn objective_value(
    g: &GeneratorParams,
    dd: &DiscriminatorParams,
    anchors: &Anchors,
    data: &DataSide,
    gen: &GenSide,
) -> Result<f64> {
    match (data, gen) {
        (DataSide::Samples(s), GenSide::Batch(latent)) if !dd.tied => minimax_value(g, dd, anchors, &s.x, latent),
        _ => {
            let gm = GenMoments::build(g, gen)?;
            tied_value(dd, anchors, data.moments(), gm.as_dyn())
        }
    }
}

/// Options for [`inner_max_solve_with`].
#[derive(Debug, Clone, Copy)]
pub struct InnerOptions {
    pub tied: bool,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self { tied: true, tol: DEFAULT_INNER_TOL, max_iters: DEFAULT_INNER_ITERS }
    }
}

#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub disc: DiscriminatorParams,
    pub value: ObjectiveValue,
    pub iterations: usize,
    pub grad_norm: f64,
    pub margin: f64,
}

fn mean_sq_norm_gen(gm: &GenMoments) -> f64 {
    gm.as_dyn().mean_sq_norm()
}

/// Solve the discriminator's maximization for a fixed generator.
///
/// Spec-shaped convenience form: sample data, a fixed latent batch, tied
/// logits for the symmetric generator and untied ones otherwise.
pub fn inner_max_solve(
    g: &GeneratorParams,
    x_batch: &Matrix,
    anchors: &Anchors,
    latent: &LatentBatch,
    tol: f64,
) -> Result<(DiscriminatorParams, ObjectiveValue)> {
    let opts = InnerOptions { tied: g.mode == GenMode::Symmetric2, tol, ..InnerOptions::default() };
    let sol = inner_max_solve_with(g, &DataSide::samples(x_batch.clone()), &GenSide::Batch(latent.clone()), anchors, opts)?;
    Ok((sol.disc, sol.value))
}

/// Strong-concavity margin `λ − (E‖X‖² + E‖G‖²)`, less 2 when constants are free.
pub fn concavity_margin(g: &GeneratorParams, data: &DataSide, gen: &GenSide, anchors: &Anchors) -> Result<f64> {
    let gm = GenMoments::build(g, gen)?;
    Ok(margin_of(data, &gm, anchors, false))
}

fn margin_of(data: &DataSide, gm: &GenMoments, anchors: &Anchors, free_consts: bool) -> f64 {
    let extra = if free_consts { 2.0 } else { 0.0 };
    anchors.lambda - data.mean_sq_norm() - mean_sq_norm_gen(gm) - extra
}

pub fn inner_max_solve_with(
    g: &GeneratorParams,
    data: &DataSide,
    gen: &GenSide,
    anchors: &Anchors,
    opts: InnerOptions,
) -> Result<InnerSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("inner tolerance must be positive"));
    }
    if g.dim() != anchors.dim() || data.second_moment().dim() != g.dim() {
        return Err(Error::invalid("dimension mismatch between generator, data and anchors"));
    }
    if anchors.k() != g.k() {
        return Err(Error::invalid("anchor count must match the generator's component count"));
    }
    let free_consts = !opts.tied && g.mode == GenMode::SharedCov;
    let gm = GenMoments::build(g, gen)?;
    let margin = margin_of(data, &gm, anchors, free_consts);
    if margin <= 0.0 {
        return Err(Error::NotStronglyConcave { margin });
    }
    let lambda = anchors.lambda;
    let delta = data.second_moment().sub(gm.as_dyn().second_moment());
    let a_star = delta.scale(1.0 / (2.0 * lambda));
    let l1 = delta.frobenius_sq() / (8.0 * lambda);

    if opts.tied {
        if g.mode != GenMode::Symmetric2 {
            return Err(Error::invalid("tied discriminator needs the symmetric generator"));
        }
        solve_tied(data.moments(), gm.as_dyn(), anchors, a_star, l1, margin, opts)
    } else {
        let (DataSide::Samples(stats), GenMoments::Samples(gstats)) = (data, &gm) else {
            return Err(Error::invalid("untied inner solve needs sample data and a latent batch"));
        };
        solve_untied(g, stats, gstats, anchors, a_star, l1, margin, free_consts, opts)
    }
}

fn solve_tied(
    data: &dyn TiedMoments,
    gen: &dyn TiedMoments,
    anchors: &Anchors,
    a_star: SymMatrix,
    l1: f64,
    margin: f64,
    opts: InnerOptions,
) -> Result<InnerSolution> {
    let lambda = anchors.lambda;
    let (d1, d2) = (&anchors.d_vecs[0], &anchors.d_vecs[1]);
    let step = 1.0 / (2.0 * lambda + data.mean_sq_norm() + gen.mean_sq_norm());
    // b_1 carries sign +1 on the data side and b_3 sign −1; each is pulled to d_1 and −d_2
    let solve = |sign: f64| -> (Vector, usize, f64) {
        let grad = |b: &Vector| (data.x_tanh_mean(b) - gen.x_tanh_mean(b)) * sign - ((b - d1) + (b + d2)) * lambda;
        let mut b = (d1 - d2) * 0.5;
        let mut gnorm = f64::INFINITY;
        for it in 0..opts.max_iters {
            let gr = grad(&b);
            gnorm = gr.norm();
            if gnorm <= opts.tol {
                return (b, it, gnorm);
            }
            b.axpy(step, &gr, 1.0);
        }
        (b, opts.max_iters, gnorm)
    };
    let (b1, it1, g1) = solve(1.0);
    let (b3, it3, g3) = solve(-1.0);
    if !(b1.iter().chain(b3.iter()).all(|v| v.is_finite())) {
        return Err(Error::Diverged { iteration: it1.max(it3) });
    }
    let block = |b: &Vector, sign: f64| {
        sign * (data.logcosh_mean(b) - gen.logcosh_mean(b)) - 0.5 * lambda * ((b - d1).norm_squared() + (b + d2).norm_squared())
    };
    let l2 = block(&b1, 1.0) + block(&b3, -1.0);
    let disc = DiscriminatorParams::tied(a_star, b1, b3)?;
    let total = tied_value(&disc, anchors, data, gen)?;
    let reg = 0.5 * lambda * regularizer(&disc, anchors);
    Ok(InnerSolution {
        disc,
        value: ObjectiveValue { total, l1, l2, reg },
        iterations: it1.max(it3),
        grad_norm: g1.hypot(g3),
        margin,
    })
}

#[allow(clippy::too_many_arguments)]
fn solve_untied(
    g: &GeneratorParams,
    data: &SampleStats,
    gen: &SampleStats,
    anchors: &Anchors,
    a_star: SymMatrix,
    l1: f64,
    margin: f64,
    free_consts: bool,
    opts: InnerOptions,
) -> Result<InnerSolution> {
    let lambda = anchors.lambda;
    let k = anchors.k();
    let mut disc = DiscriminatorParams::zeros(g.dim(), k, false);
    disc.a = a_star;
    for i in 0..2 * k {
        disc.logits[i] = anchors.d_vecs[i % k].clone();
        if free_consts {
            disc.consts[i] = anchors.e_consts[i % k];
        }
    }
    let extra = if free_consts { 2.0 } else { 0.0 };
    let step = 1.0 / (lambda + data.mean_sq_norm + gen.mean_sq_norm + extra);
    let mut iterations = opts.max_iters;
    let mut gnorm = f64::INFINITY;
    for it in 0..opts.max_iters {
        let dt = batch_terms(&disc, &data.x);
        let gt = batch_terms(&disc, &gen.x);
        let mut sq = 0.0;
        let mut grads = Vec::with_capacity(2 * k);
        let mut cgrads = Vec::with_capacity(2 * k);
        for (i, s) in signs(k).enumerate() {
            let j = i % k;
            let gb = (&dt.qx[i] - &gt.qx[i]) * s - (&disc.logits[i] - &anchors.d_vecs[j]) * lambda;
            sq += gb.norm_squared();
            grads.push(gb);
            if free_consts {
                let gc = s * (dt.q[i] - gt.q[i]) - lambda * (disc.consts[i] - anchors.e_consts[j]);
                sq += gc * gc;
                cgrads.push(gc);
            }
        }
        gnorm = sq.sqrt();
        if !gnorm.is_finite() {
            return Err(Error::Diverged { iteration: it });
        }
        if gnorm <= opts.tol {
            iterations = it;
            break;
        }
        for (b, gb) in disc.logits.iter_mut().zip(&grads) {
            b.axpy(step, gb, 1.0);
        }
        for (c, gc) in disc.consts.iter_mut().zip(&cgrads) {
            *c += step * gc;
        }
    }
    let dt = batch_terms(&disc, &data.x);
    let gt = batch_terms(&disc, &gen.x);
    let l2 = dt.lse_mean - gt.lse_mean - 0.5 * lambda * logit_regularizer(&disc, anchors);
    let mean_d = |x: &Matrix| x.row_iter().map(|r| disc_value(&disc, &r.transpose())).sum::<f64>() / x.nrows() as f64;
    let total = mean_d(&data.x) - mean_d(&gen.x) - 0.5 * lambda * regularizer(&disc, anchors);
    let reg = 0.5 * lambda * regularizer(&disc, anchors);
    Ok(InnerSolution { disc, value: ObjectiveValue { total, l1, l2, reg }, iterations, grad_norm: gnorm, margin })
}

/// Population generator gradient `∂V/∂(Λ, μ)` of the tied objective with
/// exact quadrature on the generator side.
pub fn tied_gen_grad_population(g: &GeneratorParams, dd: &DiscriminatorParams, order: usize) -> Result<GenGrad> {
    if g.mode != GenMode::Symmetric2 || !dd.tied {
        return Err(Error::invalid("population generator gradient needs the tied symmetric setting"));
    }
    let a = dd.a.as_matrix();
    let lam = &g.lambda_factor;
    let mu = &g.means[0];
    let mut gmu = a * mu;
    let mut glam = a * lam;
    for (b, sign) in [(&dd.logits[0], 1.0), (&dd.logits[2], -1.0)] {
        let lb = lam.tr_mul(b);
        let (m, s) = (b.dot(mu), lb.norm());
        let e1 = gh_expect(m, s, TanhKind::Tanh, order);
        let e2 = gh_expect(m, s, TanhKind::TanhPrime, order);
        gmu.axpy(sign * e1, b, 1.0);
        glam.ger(sign * e2, b, &lb, 1.0);
    }
    Ok(GenGrad { lambda: -glam, means: vec![-gmu] })
}

/// Envelope gradient of `L(G) = max_D V(G, D)` with respect to the generator.
pub fn envelope_gen_grad(
    g: &GeneratorParams,
    data: &DataSide,
    gen: &GenSide,
    anchors: &Anchors,
    opts: InnerOptions,
) -> Result<(GenGrad, InnerSolution)> {
    let sol = inner_max_solve_with(g, data, gen, anchors, opts)?;
    let grad = match (gen, data) {
        (GenSide::Quadrature { order }, _) => tied_gen_grad_population(g, &sol.disc, *order)?,
        (GenSide::Batch(latent), DataSide::Samples(stats)) => minimax_with_stats(g, &sol.disc, anchors, stats, latent)?.1.gen,
        (GenSide::Batch(latent), DataSide::Population(_)) => {
            // the generator gradient does not involve the data side
            let dummy = SampleStats::new(Matrix::zeros(1, g.dim()));
            minimax_with_stats(g, &sol.disc, anchors, &dummy, latent)?.1.gen
        }
    };
    Ok((grad, sol))
}

/// Euclidean norm of the envelope gradient over `vec(Λ, μ)`.
pub fn stationarity_grad_norm(g: &GeneratorParams, data: &DataSide, anchors: &Anchors, tol_inner: f64) -> Result<f64> {
    let gen = GenSide::Quadrature { order: DEFAULT_ORDER };
    let opts = InnerOptions { tied: true, tol: tol_inner, ..InnerOptions::default() };
    Ok(envelope_gen_grad(g, data, &gen, anchors, opts)?.0.norm())
}

/// `D^c(x) = max_u D(x + u) − ½‖u‖²` by gradient ascent from `u = 0`.
pub fn c_transform(dd: &DiscriminatorParams, x: &Vector, tol: f64) -> Result<f64> {
    let bound = disc_smoothness_bound(dd);
    if !(bound < 1.0) {
        return Err(Error::NotCConcave { bound });
    }
    let lmin = sym_eigen(&dd.a)?.min_value();
    let bmax = dd.logits.iter().map(|b| b.norm_squared()).fold(0.0, f64::max);
    let step = 1.0 / (1.0 - lmin + 2.0 * bmax);
    let mut u = Vector::zeros(x.len());
    for _ in 0..C_TRANSFORM_ITERS {
        let gr = disc_grad_x(dd, &(x + &u)) - &u;
        if gr.norm() <= tol {
            break;
        }
        u.axpy(step, &gr, 1.0);
    }
    Ok(disc_value(dd, &(x + &u)) - 0.5 * u.norm_squared())
}

/// Right-hand side of the c-transform upper bound for a discriminator with
/// curvature bound at most `eta`.
pub fn prop2_upper_bound(dd: &DiscriminatorParams, anchors: &Anchors, x_batch: &Matrix, eta: f64) -> Result<f64> {
    if !(eta < 1.0) {
        return Err(Error::invalid(format!("eta must be below 1, got {eta}")));
    }
    anchors.check(dd)?;
    let bound = disc_smoothness_bound(dd);
    if bound > eta {
        return Err(Error::invalid(format!("smoothness bound {bound} exceeds eta {eta}")));
    }
    let n = x_batch.nrows();
    if n == 0 || x_batch.ncols() != dd.dim() {
        return Err(Error::invalid("data batch shape mismatch"));
    }
    let mean_d = x_batch.row_iter().map(|r| disc_value(dd, &r.transpose())).sum::<f64>() / n as f64;
    let msq = crate::gausscore::mean_sq_norm(x_batch);
    let k = dd.k() as f64;
    Ok(mean_d + 3.0 * k * k * (msq + 1.0) / (1.0 - eta) * regularizer(dd, anchors))
}
