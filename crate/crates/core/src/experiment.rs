//! End-to-end experiment runs: dataset construction, fitting by either
//! method, evaluation and the on-disk artifacts.

use crate::datagen::{default_k4_means, load_csv, make_isotropic, make_k_mixture, make_rotated, Dataset};
use crate::em::{em_fit, EmOptions, GmmParams};
use crate::error::{Error, Result};
use crate::gausscore::{Matrix, SeededRng, Stream, SymMatrix, Vector};
use crate::metrics::{condition1_check, gmm_objective_orthant, nll, principal_direction, top_directions, MetricsRecord};
use crate::model::{GenMode, ParamsJson};
use crate::objective::Anchors;
use crate::optimizer::{generator_gmm, train_gda, TrainConfig, TrainReport};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

const ORTHANT_SAMPLES: usize = 10_000;
const SCATTER_POINTS: usize = 640;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gatgmm,
    Em,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gatgmm" => Ok(Method::Gatgmm),
            "em" => Ok(Method::Em),
            other => Err(Error::invalid(format!("unknown method {other:?} (expected gatgmm or em)"))),
        }
    }
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gatgmm => "gatgmm",
            Method::Em => "em",
        }
    }
}

fn d20() -> usize {
    20
}
fn d100() -> usize {
    100
}
fn n640() -> usize {
    640
}
fn k4() -> usize {
    4
}
fn scale_iso() -> f64 {
    0.03
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    Isotropic {
        #[serde(default = "d20")]
        d: usize,
        #[serde(default = "n640")]
        n: usize,
        #[serde(default = "scale_iso")]
        scale: f64,
    },
    Rotated {
        #[serde(default = "d100")]
        d: usize,
        #[serde(default = "n640")]
        n: usize,
    },
    Kmix {
        #[serde(default = "d20")]
        d: usize,
        #[serde(default = "n640")]
        n: usize,
        #[serde(default = "k4")]
        k: usize,
        #[serde(default = "scale_iso")]
        scale: f64,
    },
    File {
        path: PathBuf,
    },
}

impl std::str::FromStr for DatasetSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isotropic" => Ok(DatasetSpec::Isotropic { d: 20, n: 640, scale: 0.03 }),
            "rotated" => Ok(DatasetSpec::Rotated { d: 100, n: 640 }),
            "kmix" => Ok(DatasetSpec::Kmix { d: 20, n: 640, k: 4, scale: 0.03 }),
            other => match other.strip_prefix("file:") {
                Some(p) if !p.is_empty() => Ok(DatasetSpec::File { path: PathBuf::from(p) }),
                _ => Err(Error::invalid(format!("unknown dataset {other:?} (isotropic, rotated, kmix or file:PATH)"))),
            },
        }
    }
}

impl DatasetSpec {
    pub fn build(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSpec::Isotropic { d, n, scale } => make_isotropic(*d, *n, *scale, seed),
            DatasetSpec::Rotated { d, n } => make_rotated(*d, *n, seed),
            DatasetSpec::Kmix { d, n, k, scale } => {
                let means = if *k == 4 { default_k4_means(*d)? } else { spread_means(*d, *k)? };
                make_k_mixture(means, SymMatrix::identity(*d).scale(*scale), *n, seed)
            }
            DatasetSpec::File { path } => {
                if !path.exists() {
                    return Err(Error::invalid(format!("dataset file {} does not exist", path.display())));
                }
                load_csv(path)
            }
        }
    }

    /// Number of mixture components the dataset implies, when it implies one.
    pub fn components(&self) -> Option<usize> {
        match self {
            DatasetSpec::Kmix { k, .. } => Some(*k),
            DatasetSpec::File { .. } => None,
            _ => Some(2),
        }
    }
}

/// `±3 e_i` pairs for general `k`.
fn spread_means(d: usize, k: usize) -> Result<Vec<Vector>> {
    if k < 2 || k.div_ceil(2) > d {
        return Err(Error::invalid(format!("cannot place {k} means in {d} dimensions")));
    }
    Ok((0..k)
        .map(|i| {
            let mut v = Vector::zeros(d);
            v[i / 2] = if i % 2 == 0 { 3.0 } else { -3.0 };
            v
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnchorPolicy {
    PrincipalEig,
    FixedVector(Vec<f64>),
    TopKEigs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub method: Method,
    pub seed: u64,
    pub train: TrainConfig,
    pub em: EmOptions,
    /// `None` picks the principal direction for `k = 2` and paired top
    /// eigenvectors otherwise.
    pub anchors: Option<AnchorPolicy>,
    /// Also report NLL on a fresh sample from the true mixture.
    pub holdout: bool,
    /// Record wall-clock time (written to `timing.json`).
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::Isotropic { d: 20, n: 640, scale: 0.03 },
            method: Method::Gatgmm,
            seed: 0,
            train: TrainConfig { max_iters: 15_000, anneal_from: Some(0.5), ..TrainConfig::default() },
            em: EmOptions::default(),
            anchors: None,
            holdout: false,
            timing: false,
        }
    }
}

impl ExperimentConfig {
    /// Settings for the rotated task.
    pub fn rotated_defaults(mut self) -> Self {
        self.dataset = DatasetSpec::Rotated { d: 100, n: 640 };
        self.train.lr_gen = 1e-3;
        self.train.lr_disc = 1e-2;
        self.train.max_iters = 20_000;
        self.train.sigma_init = 0.1;
        self.train.anneal_from = None;
        self
    }

    /// Settings for the four-component task. Slower schedules stay in the
    /// collapsed state where the shared covariance absorbs the component spread.
    pub fn kmix_defaults(mut self) -> Self {
        self.dataset = DatasetSpec::Kmix { d: 20, n: 640, k: 4, scale: 0.03 };
        self.train.lambda = 0.1;
        self.train.lr_gen = 1e-1;
        self.train.lr_disc = 1e-1;
        self.train.max_iters = 30_000;
        self.train.anneal_from = Some(0.5);
        self
    }

    /// Copy the top-level seed into the method options and adapt the model
    /// shape to the number of components in the data.
    pub fn resolve(&self, data: &Dataset) -> Result<ExperimentConfig> {
        let mut cfg = self.clone();
        cfg.train.seed = self.seed;
        cfg.em.seed = self.seed;
        cfg.train.record_timing = self.timing;
        let k = self
            .dataset
            .components()
            .or_else(|| data.truth().map(|t| t.k()))
            .unwrap_or(cfg.train.k);
        if k > 2 {
            cfg.train.mode = GenMode::SharedCov;
            cfg.train.k = k;
            cfg.train.tied = false;
            cfg.em.symmetric2 = false;
        } else if k == 2 && cfg.train.mode == GenMode::SharedCov {
            cfg.train.k = 2;
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn anchors_for(&self, x: &Matrix) -> Result<Anchors> {
        let k = self.train.k;
        let lambda = self.train.lambda;
        let policy = self
            .anchors
            .clone()
            .unwrap_or(if k == 2 { AnchorPolicy::PrincipalEig } else { AnchorPolicy::TopKEigs });
        let base: Vec<Vector> = match policy {
            AnchorPolicy::PrincipalEig => vec![principal_direction(x)?],
            AnchorPolicy::FixedVector(v) => {
                if v.len() != x.ncols() {
                    return Err(Error::invalid(format!("anchor vector has {} entries, data has {}", v.len(), x.ncols())));
                }
                vec![Vector::from_vec(v)]
            }
            AnchorPolicy::TopKEigs => top_directions(x, k.div_ceil(2))?,
        };
        let d_vecs: Vec<Vector> = (0..k)
            .map(|i| {
                let v = &base[(i / 2).min(base.len() - 1)];
                if i % 2 == 0 { v.clone() } else { -v }
            })
            .collect();
        Anchors::new(d_vecs, vec![0.0; k], lambda)
    }
}

/// Fitted model from either method, in mixture form.
#[derive(Debug, Clone)]
pub enum Fitted {
    Gatgmm(Box<TrainReport>),
    Em { params: GmmParams, loglik_trace: Vec<f64>, converged: bool },
}

impl Fitted {
    pub fn gmm(&self) -> Result<GmmParams> {
        match self {
            Fitted::Gatgmm(r) => generator_gmm(&r.final_gen),
            Fitted::Em { params, .. } => Ok(params.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config: ExperimentConfig,
    pub dataset: Dataset,
    pub fitted: Fitted,
    pub metrics: MetricsRecord,
    pub seconds: f64,
}

/// Fit the configured method on the configured dataset and evaluate it.
pub fn fit(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let data = cfg.dataset.build(cfg.seed)?;
    fit_on(cfg, data)
}

pub fn fit_on(cfg: &ExperimentConfig, data: Dataset) -> Result<RunOutcome> {
    let cfg = cfg.resolve(&data)?;
    let start = Instant::now();
    let fitted = match cfg.method {
        Method::Gatgmm => {
            let anchors = cfg.anchors_for(&data.samples)?;
            Fitted::Gatgmm(Box::new(train_gda(&data.samples, &cfg.train, &anchors, data.truth())?))
        }
        Method::Em => {
            let k = if cfg.em.symmetric2 { 2 } else { cfg.train.k };
            let fit = em_fit(&data.samples, k, &cfg.em)?;
            Fitted::Em { params: fit.params, loglik_trace: fit.loglik_trace, converged: fit.converged }
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    let metrics = evaluate(&cfg, &data, &fitted.gmm()?)?;
    Ok(RunOutcome { config: cfg, dataset: data, fitted, metrics, seconds })
}

/// Metrics for a fitted mixture on `data`, using its true mixture when known.
pub fn evaluate(cfg: &ExperimentConfig, data: &Dataset, gmm: &GmmParams) -> Result<MetricsRecord> {
    let truth = data.truth();
    let gmm_objective = match truth {
        Some(t) if t.is_symmetric2(1e-12) && gmm.is_symmetric2(1e-12) => {
            Some(crate::metrics::gmm_objective(t, &gmm.means[0], gmm.cov(0))?)
        }
        Some(t) if t.k() == gmm.k() => Some(crate::metrics::gmm_objective_matched(t, gmm)?),
        _ => None,
    };
    let symmetric_truth = truth.filter(|t| t.is_symmetric2(1e-12));
    let split = principal_direction(&data.samples)?;
    let gmm_objective_orthant = match symmetric_truth {
        Some(t) if gmm.is_symmetric2(1e-12) => {
            let (draws, _) = gmm.sample(ORTHANT_SAMPLES, &mut SeededRng::for_stream(cfg.seed, Stream::Eval))?;
            Some(gmm_objective_orthant(t, &draws, &split)?)
        }
        _ => None,
    };
    let nll_holdout = match (cfg.holdout, truth) {
        (true, Some(t)) => {
            let (h, _) = t.sample(data.n(), &mut SeededRng::for_stream(cfg.seed, Stream::Holdout))?;
            Some(nll(gmm, &h)?)
        }
        (true, None) => return Err(Error::invalid("--holdout needs a dataset with a known true mixture")),
        _ => None,
    };
    let (condition1_holds, condition1_margin) = match symmetric_truth {
        Some(t) => {
            let (holds, margin) = condition1_check(&t.means[0], t.cov(0), &split)?;
            (Some(holds), Some(margin))
        }
        None => (None, None),
    };
    Ok(MetricsRecord {
        gmm_objective,
        gmm_objective_orthant,
        nll: nll(gmm, &data.samples)?,
        nll_holdout,
        condition1_holds,
        condition1_margin,
    })
}

#[derive(Serialize)]
struct DatasetSummary<'a> {
    kind: &'a str,
    d: usize,
    n: usize,
    seed: u64,
}

/// Write `report.json`, `metrics.csv`, `params.json` and two scatter SVGs.
pub fn write_artifacts(outcome: &RunOutcome, out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let cfg = &outcome.config;
    let kind = outcome.dataset.meta.as_ref().map(|m| m.kind.as_str()).unwrap_or("file");
    let mut report = serde_json::json!({
        "method": cfg.method.name(),
        "dataset": DatasetSummary { kind, d: outcome.dataset.d(), n: outcome.dataset.n(), seed: cfg.seed },
        "config": cfg,
        "metrics": outcome.metrics,
    });
    let (csv, params) = match &outcome.fitted {
        Fitted::Gatgmm(r) => {
            report["train"] = r.to_json();
            let params = serde_json::to_value(ParamsJson::from_params(&r.final_gen, Some(&r.final_disc)))?;
            (r.metrics_csv(), params)
        }
        Fitted::Em { params, loglik_trace, converged } => {
            report["em"] = serde_json::json!({ "iterations": loglik_trace.len().saturating_sub(1), "converged": converged, "loglik_trace": loglik_trace });
            let mut csv = String::from("iter,loglik\n");
            for (i, ll) in loglik_trace.iter().enumerate() {
                let _ = writeln!(csv, "{i},{ll:.10e}");
            }
            (csv, serde_json::to_value(params)?)
        }
    };
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let p = out.join(name);
        std::fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    put("report.json", serde_json::to_string_pretty(&report)? + "\n")?;
    put("metrics.csv", csv)?;
    put("params.json", serde_json::to_string_pretty(&params)? + "\n")?;

    let gmm = outcome.fitted.gmm()?;
    let (draws, _) = gmm.sample(SCATTER_POINTS, &mut SeededRng::for_stream(cfg.seed, Stream::Custom(7)))?;
    let x = &outcome.dataset.samples;
    let d = x.ncols();
    if d >= 2 {
        let e = |i: usize| {
            let mut v = Vector::zeros(d);
            v[i] = 1.0;
            v
        };
        put("scatter_coords.svg", scatter_svg("first two coordinates", x, &draws, &e(0), &e(1)))?;
        let dirs = top_directions(x, 2)?;
        put("scatter_pca.svg", scatter_svg("top principal plane", x, &draws, &dirs[0], &dirs[1]))?;
    }
    if cfg.timing {
        put("timing.json", serde_json::to_string_pretty(&serde_json::json!({ "seconds": outcome.seconds }))? + "\n")?;
    }
    Ok(written)
}

/// Plain SVG scatter of data (blue) and fitted-model draws (orange) projected on `(u, v)`.
pub fn scatter_svg(title: &str, data: &Matrix, fitted: &Matrix, u: &Vector, v: &Vector) -> String {
    const SIZE: f64 = 480.0;
    const PAD: f64 = 30.0;
    let proj = |m: &Matrix| -> Vec<(f64, f64)> { m.row_iter().map(|r| (r.dot(&u.transpose()), r.dot(&v.transpose()))).collect() };
    let (pd, pf) = (proj(data), proj(fitted));
    let all = pd.iter().chain(&pf);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(a, b) in all {
        lo = lo.min(a.min(b));
        hi = hi.max(a.max(b));
    }
    if !(hi > lo) {
        lo -= 1.0;
        hi += 1.0;
    }
    let map = |t: f64| PAD + (t - lo) / (hi - lo) * (SIZE - 2.0 * PAD);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{PAD}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n"
    );
    for (pts, color) in [(&pd, "#1f77b4"), (&pf, "#ff7f0e")] {
        for &(a, b) in pts {
            let _ = writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.5\" fill=\"{color}\" fill-opacity=\"0.6\"/>", map(a), SIZE - map(b));
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Table-shaped comparison of both methods on one dataset.
pub fn compare_csv(outcomes: &[RunOutcome]) -> String {
    let mut s = String::from("method,gmm_objective,nll\n");
    for o in outcomes {
        let g = o.metrics.gmm_objective.map(|v| format!("{v:.6}")).unwrap_or_else(|| "NA".into());
        let _ = writeln!(s, "{},{g},{:.6}", o.config.method.name(), o.metrics.nll);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetSpec::Isotropic { d: 3, n: 120, scale: 0.03 },
            train: TrainConfig { max_iters: 200, eval_every: 100, batch_size: 120, ..TrainConfig::default() },
            seed: 7,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn parse_specs() {
        assert_eq!("rotated".parse::<DatasetSpec>().unwrap(), DatasetSpec::Rotated { d: 100, n: 640 });
        assert_eq!("file:/tmp/x.csv".parse::<DatasetSpec>().unwrap(), DatasetSpec::File { path: "/tmp/x.csv".into() });
        assert!("file:".parse::<DatasetSpec>().is_err());
        assert!("nope".parse::<Method>().is_err());
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"dataset": {"kind": "rotated", "d": 10}, "method": "em"}"#).unwrap();
        assert_eq!(cfg.dataset, DatasetSpec::Rotated { d: 10, n: 640 });
        assert_eq!(cfg.method, Method::Em);
    }

    #[test]
    fn anchors_policies() {
        let cfg = small();
        let ds = cfg.dataset.build(1).unwrap();
        let a = cfg.anchors_for(&ds.samples).unwrap();
        assert_eq!(a.d_vecs[1], -&a.d_vecs[0]);
        let fixed = ExperimentConfig { anchors: Some(AnchorPolicy::FixedVector(vec![1.0, 0.0, 0.0])), ..small() };
        assert_eq!(fixed.anchors_for(&ds.samples).unwrap().d_vecs[0][0], 1.0);
        let bad = ExperimentConfig { anchors: Some(AnchorPolicy::FixedVector(vec![1.0])), ..small() };
        assert!(bad.anchors_for(&ds.samples).is_err());

        let k4 = ExperimentConfig { dataset: DatasetSpec::Kmix { d: 5, n: 200, k: 4, scale: 0.03 }, ..small() };
        let ds = k4.dataset.build(1).unwrap();
        let resolved = k4.resolve(&ds).unwrap();
        let a = resolved.anchors_for(&ds.samples).unwrap();
        assert_eq!(a.k(), 4);
        assert_eq!(a.d_vecs[3], -&a.d_vecs[2]);
        assert!(a.d_vecs[0].dot(&a.d_vecs[2]).abs() < 1e-10);
    }

    #[test]
    fn artifacts_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        for method in [Method::Gatgmm, Method::Em] {
            let cfg = ExperimentConfig { method, holdout: true, ..small() };
            let mut bodies = Vec::new();
            for run in 0..2 {
                let out = dir.path().join(format!("{}-{run}", method.name()));
                let files = write_artifacts(&fit(&cfg).unwrap(), &out).unwrap();
                bodies.push(files.iter().map(|f| std::fs::read(f).unwrap()).collect::<Vec<_>>());
            }
            assert_eq!(bodies[0], bodies[1]);
            assert_eq!(bodies[0].len(), 5);
        }
    }

    #[test]
    fn kmix_runs_both_methods() {
        let cfg = ExperimentConfig {
            dataset: DatasetSpec::Kmix { d: 4, n: 400, k: 4, scale: 0.03 },
            train: TrainConfig { max_iters: 50, eval_every: 25, batch_size: 100, lambda: 1.0, ..TrainConfig::default() },
            ..small()
        };
        let g = fit(&cfg).unwrap();
        assert!(g.metrics.gmm_objective.is_some() && g.metrics.condition1_holds.is_none());
        let e = fit(&ExperimentConfig { method: Method::Em, ..cfg }).unwrap();
        assert!(e.metrics.gmm_objective.unwrap() < 0.05, "{:?}", e.metrics);
        assert_eq!(compare_csv(&[g, e]).lines().count(), 3);
    }

    #[test]
    fn scatter_has_all_points() {
        let x = Matrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 1.0, 2.0, 0.5]);
        let s = scatter_svg("t", &x, &x, &Vector::from_row_slice(&[1.0, 0.0]), &Vector::from_row_slice(&[0.0, 1.0]));
        assert_eq!(s.matches("<circle").count(), 6);
        assert!(s.starts_with("<svg"));
    }
}
