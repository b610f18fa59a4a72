//! Gradient descent ascent training.

use crate::em::GmmParams;
use crate::error::{Error, Result};
use crate::gausscore::{Matrix, SeededRng, Stream, SymMatrix, Vector};
use crate::metrics::{gmm_objective, gmm_objective_matched};
use crate::model::{gen_apply, sample_latent, DiscGrad, DiscriminatorParams, GenGrad, GenMode, GeneratorParams, LatentBatch, ParamsJson};
use crate::objective::{
    disc_grad_batch, envelope_gen_grad, gen_grad_batch, minimax_with_stats, Anchors, DataSide, GenSide, InnerOptions, SampleStats, DEFAULT_ORDER,
};
use serde::{Deserialize, Serialize};
use std::time::Instant;

pub use crate::objective::stationarity_grad_norm;

const EVAL_BATCH: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_iters: usize,
    pub disc_steps_per_gen_step: usize,
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub eta: Option<f64>,
    pub seed: u64,
    pub eval_every: usize,
    pub grad_tol: f64,
    pub use_theorem2_steps: bool,
    pub project_feasible: bool,
    pub mode: GenMode,
    pub k: usize,
    pub tied: bool,
    pub sigma_init: f64,
    /// Fraction of `max_iters` after which both step sizes decay linearly to
    /// zero at the last iteration. Averages out latent-batch noise.
    pub anneal_from: Option<f64>,
    /// Record wall-clock seconds; off keeps reports byte-reproducible.
    pub record_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            disc_steps_per_gen_step: 1,
            lr_gen: 1e-2,
            lr_disc: 1e-1,
            batch_size: 640,
            lambda: 0.1,
            eta: None,
            seed: 0,
            eval_every: 500,
            grad_tol: 0.0,
            use_theorem2_steps: false,
            project_feasible: false,
            mode: GenMode::Symmetric2,
            k: 2,
            tied: true,
            sigma_init: 0.17,
            anneal_from: None,
            record_timing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.lr_gen >= 0.0 && self.lr_disc >= 0.0 && self.lr_gen.is_finite() && self.lr_disc.is_finite()) {
            return bad(format!("learning rates must be finite and nonnegative, got ({}, {})", self.lr_gen, self.lr_disc));
        }
        if self.batch_size == 0 || self.disc_steps_per_gen_step == 0 || self.eval_every == 0 {
            return bad("batch_size, disc_steps_per_gen_step and eval_every must be at least 1".into());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.anneal_from.is_some_and(|f| !(0.0..1.0).contains(&f)) {
            return bad(format!("anneal_from must lie in [0, 1), got {:?}", self.anneal_from));
        }
        if !(self.sigma_init >= 0.0) {
            return bad(format!("sigma_init must be nonnegative, got {}", self.sigma_init));
        }
        match self.mode {
            GenMode::Symmetric2 if self.k != 2 => return bad("the symmetric generator has k = 2".into()),
            GenMode::SharedCov if self.k < 2 => return bad("k must be at least 2".into()),
            GenMode::SharedCov if self.tied => return bad("tied logits need the symmetric generator".into()),
            _ => {}
        }
        if (self.use_theorem2_steps || self.project_feasible) && self.eta.is_none() {
            return bad("use_theorem2_steps and project_feasible need eta".into());
        }
        if self.project_feasible && self.eta.is_some_and(|e| e <= 1.0) {
            return Err(Error::InfeasibleRegime { lambda: self.lambda, eta: self.eta.unwrap_or(0.0) });
        }
        Ok(())
    }
}

/// Which generator gradient an evaluation record holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradKind {
    /// Envelope gradient at the exact inner maximum.
    Envelope,
    /// Gradient against the current discriminator; used when the inner
    /// problem is not strongly concave.
    CurrentDisc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub grad_kind: GradKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gmm_objective: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub iterates: Vec<EvalRecord>,
    pub final_gen: GeneratorParams,
    pub final_disc: DiscriminatorParams,
    pub iterations: usize,
    pub converged: bool,
    pub wall_clock_seconds: f64,
    /// Largest `‖Λ‖²_F + max_i ‖μ_i‖² + 1` seen after projection.
    pub max_feasibility: Option<f64>,
}

#[derive(Serialize)]
struct TrainReportJson<'a> {
    iterations: usize,
    converged: bool,
    wall_clock_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_feasibility: Option<f64>,
    iterates: &'a [EvalRecord],
    params: ParamsJson,
}

impl TrainReport {
    pub fn to_json(&self) -> serde_json::Value {
        let body = TrainReportJson {
            iterations: self.iterations,
            converged: self.converged,
            wall_clock_seconds: self.wall_clock_seconds,
            max_feasibility: self.max_feasibility,
            iterates: &self.iterates,
            params: ParamsJson::from_params(&self.final_gen, Some(&self.final_disc)),
        };
        serde_json::to_value(body).expect("report serializes")
    }

    /// CSV with columns `iter,objective,grad_norm,gmm_objective,seconds`.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("iter,objective,grad_norm,gmm_objective,seconds\n");
        for r in &self.iterates {
            let gmm = r.gmm_objective.map(|v| format!("{v:.10e}")).unwrap_or_default();
            out += &format!("{},{:.10e},{:.10e},{},{:.3}\n", r.iteration, r.objective, r.grad_norm, gmm, r.seconds);
        }
        out
    }
}

/// Step sizes and constants from the two-timescale convergence theorem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem2Steps {
    pub alpha_max: f64,
    pub alpha_min: f64,
    pub l: f64,
    pub kappa: f64,
    /// `(λ + 2η)/(λ − 2η)`, the alternative condition number.
    pub kappa_ratio: f64,
}

pub fn theorem2_stepsizes(lambda: f64, eta: f64, k: usize, max_anchor_normsq: f64) -> Result<Theorem2Steps> {
    if !(eta > 0.0 && lambda > 2.0 * eta) {
        return Err(Error::InfeasibleRegime { lambda, eta });
    }
    let l = 2.0 * lambda + 4.0 * eta + 10.0 * (k as f64 + 1.0) * (eta / lambda + max_anchor_normsq);
    let kappa = l / (lambda - 2.0 * eta);
    Ok(Theorem2Steps {
        alpha_max: 1.0 / (lambda + 2.0 * eta),
        alpha_min: 1.0 / (kappa * kappa * l),
        l,
        kappa,
        kappa_ratio: (lambda + 2.0 * eta) / (lambda - 2.0 * eta),
    })
}

/// Random initialization: `μ_i ~ U(−½, ½)^d`, `Λ = σ(I + 0.01 N)`,
/// `A = I + 0.01 N` symmetrized, logit vectors `0.01 N`.
pub fn init_params(
    d: usize,
    mode: GenMode,
    k: usize,
    sigma_init: f64,
    tied: bool,
    rng: &mut SeededRng,
) -> Result<(GeneratorParams, DiscriminatorParams)> {
    if d == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    let n_means = if mode == GenMode::Symmetric2 { 1 } else { k };
    let means: Vec<Vector> = (0..n_means).map(|_| Vector::from_fn(d, |_, _| rng.uniform(-0.5, 0.5))).collect();
    let noise = Matrix::from_fn(d, d, |_, _| rng.standard_normal());
    let lambda_factor = (Matrix::identity(d, d) + noise * 0.01) * sigma_init;
    let a_noise = Matrix::from_fn(d, d, |_, _| rng.standard_normal());
    let a = SymMatrix::symmetrize(&(Matrix::identity(d, d) + a_noise * 0.01));
    let mut small = || Vector::from_fn(d, |_, _| 0.01 * rng.standard_normal());
    let g = GeneratorParams { mode, lambda_factor, means };
    g.validate()?;
    let dd = if tied {
        let b1 = small();
        let b3 = small();
        DiscriminatorParams::tied(a, b1, b3)?
    } else {
        let logits = (0..2 * k).map(|_| small()).collect();
        DiscriminatorParams::new(a, logits, vec![0.0; 2 * k], false)?
    };
    Ok((g, dd))
}

fn ascend(dd: &mut DiscriminatorParams, grad: &DiscGrad, lr: f64) {
    dd.a = SymMatrix::symmetrize(&(dd.a.as_matrix() + &grad.a * lr));
    if dd.tied {
        dd.logits[0].axpy(lr, &grad.logits[0], 1.0);
        dd.logits[2].axpy(lr, &grad.logits[1], 1.0);
        dd.retie();
    } else {
        for (b, gb) in dd.logits.iter_mut().zip(&grad.logits) {
            b.axpy(lr, gb, 1.0);
        }
        for (c, gc) in dd.consts.iter_mut().zip(&grad.consts) {
            *c += lr * gc;
        }
    }
}

fn descend(g: &mut GeneratorParams, grad: &GenGrad, lr: f64) {
    g.lambda_factor -= &grad.lambda * lr;
    for (m, gm) in g.means.iter_mut().zip(&grad.means) {
        m.axpy(-lr, gm, 1.0);
    }
}

fn feasibility(g: &GeneratorParams) -> f64 {
    g.lambda_factor.norm_squared() + g.means.iter().map(|m| m.norm_squared()).fold(0.0, f64::max) + 1.0
}

/// Scale `(Λ, μ)` jointly onto the set `‖Λ‖²_F + max_i ‖μ_i‖² + 1 ≤ η`.
pub fn project_feasible(g: &mut GeneratorParams, eta: f64) {
    let f = feasibility(g);
    if f > eta {
        let s = ((eta - 1.0) / (f - 1.0)).sqrt();
        g.lambda_factor *= s;
        for m in g.means.iter_mut() {
            *m *= s;
        }
    }
}

fn all_finite(g: &GeneratorParams, dd: &DiscriminatorParams) -> bool {
    g.lambda_factor.iter().all(|v| v.is_finite())
        && g.means.iter().all(|m| m.iter().all(|v| v.is_finite()))
        && dd.a.as_matrix().iter().all(|v| v.is_finite())
        && dd.logits.iter().all(|b| b.iter().all(|v| v.is_finite()))
        && dd.consts.iter().all(|v| v.is_finite())
}

/// Fitted mixture implied by the generator.
pub fn generator_gmm(g: &GeneratorParams) -> Result<GmmParams> {
    let cov = g.component_cov();
    match g.mode {
        GenMode::Symmetric2 => GmmParams::symmetric(g.means[0].clone(), cov),
        GenMode::SharedCov => GmmParams::uniform_shared(g.means.clone(), cov),
    }
}

/// GMM objective of the generator against a known truth.
pub fn generator_gmm_objective(g: &GeneratorParams, truth: &GmmParams) -> Result<f64> {
    match g.mode {
        GenMode::Symmetric2 if truth.is_symmetric2(1e-12) => gmm_objective(truth, &g.means[0], &g.component_cov()),
        _ => gmm_objective_matched(truth, &generator_gmm(g)?),
    }
}

struct Evaluator<'a> {
    data: DataSide,
    stats: &'a SampleStats,
    anchors: &'a Anchors,
    latent: LatentBatch,
    truth: Option<&'a GmmParams>,
}

impl Evaluator<'_> {
    fn record(&self, g: &GeneratorParams, dd: &DiscriminatorParams, iteration: usize, seconds: f64) -> Result<EvalRecord> {
        let gen_msq = g.component_cov().trace() + g.means.iter().map(|m| m.norm_squared()).sum::<f64>() / g.means.len() as f64;
        let free_consts = !dd.tied && g.mode == GenMode::SharedCov;
        let margin = self.anchors.lambda - self.stats.mean_sq_norm - gen_msq - if free_consts { 2.0 } else { 0.0 };
        let envelope = if margin > 0.0 {
            let gen = if dd.tied { GenSide::Quadrature { order: DEFAULT_ORDER } } else { GenSide::Batch(self.latent.clone()) };
            let opts = InnerOptions { tied: dd.tied, ..InnerOptions::default() };
            match envelope_gen_grad(g, &self.data, &gen, self.anchors, opts) {
                Ok((grad, sol)) => Some((sol.value.total, grad.norm())),
                Err(Error::NotStronglyConcave { .. }) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        let (objective, grad_norm, grad_kind) = match envelope {
            Some((v, gn)) => (v, gn, GradKind::Envelope),
            None => {
                let (v, grads) = minimax_with_stats(g, dd, self.anchors, self.stats, &self.latent)?;
                (v, grads.gen.norm(), GradKind::CurrentDisc)
            }
        };
        let gmm_objective = self.truth.map(|t| generator_gmm_objective(g, t)).transpose()?;
        Ok(EvalRecord { iteration, objective, grad_norm, grad_kind, gmm_objective, seconds })
    }
}

/// Alternating GDA: `disc_steps_per_gen_step` ascent steps on a fresh latent
/// batch each, then one descent step for the generator on the last batch.
fn anneal_scale(cfg: &TrainConfig, it: usize) -> f64 {
    match cfg.anneal_from {
        Some(f) => {
            let start = (f * cfg.max_iters as f64).floor();
            let t = it as f64;
            if t < start { 1.0 } else { (cfg.max_iters as f64 - t) / (cfg.max_iters as f64 - start) }
        }
        None => 1.0,
    }
}

pub fn train_gda(data: &Matrix, cfg: &TrainConfig, anchors: &Anchors, truth: Option<&GmmParams>) -> Result<TrainReport> {
    cfg.validate()?;
    let (n, d) = data.shape();
    if n == 0 || d == 0 {
        return Err(Error::invalid("training data is empty"));
    }
    if anchors.dim() != d || anchors.k() != cfg.k {
        return Err(Error::invalid(format!(
            "anchors (k={}, d={}) do not match the configuration (k={}, d={d})",
            anchors.k(),
            anchors.dim(),
            cfg.k
        )));
    }
    let (lr_gen, lr_disc) = if cfg.use_theorem2_steps {
        let eta = cfg.eta.unwrap_or_default();
        let steps = theorem2_stepsizes(anchors.lambda, eta, cfg.k, anchors.max_norm_sq())?;
        (steps.alpha_min, steps.alpha_max)
    } else {
        (cfg.lr_gen, cfg.lr_disc)
    };
    let start = Instant::now();
    let elapsed = || if cfg.record_timing { start.elapsed().as_secs_f64() } else { 0.0 };

    let (mut g, mut dd) = init_params(d, cfg.mode, cfg.k, cfg.sigma_init, cfg.tied, &mut SeededRng::for_stream(cfg.seed, Stream::Init))?;
    let mut latent_rng = SeededRng::for_stream(cfg.seed, Stream::Latent);
    let mut batch_rng = SeededRng::for_stream(cfg.seed, Stream::Minibatch);
    let full = SampleStats::new(data.clone());
    let minibatch = cfg.batch_size < n;

    let eval_latent = sample_latent(&g, EVAL_BATCH.max(cfg.batch_size), &mut SeededRng::for_stream(cfg.seed, Stream::Eval));
    let evaluator = Evaluator { data: DataSide::Samples(full.clone()), stats: &full, anchors, latent: eval_latent, truth };

    let mut iterates = Vec::new();
    let mut max_feasibility = None;
    if cfg.project_feasible {
        let eta = cfg.eta.unwrap_or_default();
        project_feasible(&mut g, eta);
        max_feasibility = Some(feasibility(&g));
    }
    let mut converged = false;
    let mut done = 0;
    for it in 0..cfg.max_iters {
        if it % cfg.eval_every == 0 {
            let rec = evaluator.record(&g, &dd, it, elapsed())?;
            let stop = cfg.grad_tol > 0.0 && rec.grad_norm <= cfg.grad_tol;
            iterates.push(rec);
            if stop {
                converged = true;
                break;
            }
        }
        let batch_stats;
        let stats = if minibatch {
            let idx: Vec<usize> = (0..cfg.batch_size).map(|_| batch_rng.below(n)).collect();
            batch_stats = SampleStats::new(data.select_rows(&idx));
            &batch_stats
        } else {
            &full
        };
        let scale = anneal_scale(cfg, it);
        let (lr_gen, lr_disc) = (lr_gen * scale, lr_disc * scale);
        let mut latent = sample_latent(&g, cfg.batch_size, &mut latent_rng);
        let mut gx = gen_apply(&g, &latent)?;
        for step in 0..cfg.disc_steps_per_gen_step {
            if step > 0 {
                latent = sample_latent(&g, cfg.batch_size, &mut latent_rng);
                gx = gen_apply(&g, &latent)?;
            }
            let grad = disc_grad_batch(&dd, anchors, stats, &gx);
            ascend(&mut dd, &grad, lr_disc);
        }
        let grad = gen_grad_batch(&g, &dd, &latent, &gx);
        descend(&mut g, &grad, lr_gen);
        if let Some(eta) = cfg.eta.filter(|_| cfg.project_feasible) {
            project_feasible(&mut g, eta);
            let f = feasibility(&g);
            max_feasibility = max_feasibility.map(|m: f64| m.max(f));
        }
        if !all_finite(&g, &dd) {
            return Err(Error::Diverged { iteration: it });
        }
        done = it + 1;
    }
    if !converged {
        let rec = evaluator.record(&g, &dd, done, elapsed())?;
        converged = cfg.grad_tol > 0.0 && rec.grad_norm <= cfg.grad_tol;
        iterates.push(rec);
    }
    Ok(TrainReport {
        iterates,
        final_gen: g,
        final_disc: dd,
        iterations: done,
        converged,
        wall_clock_seconds: elapsed(),
        max_feasibility,
    })
}
