use clap::{Args, Parser, Subcommand};
use gatgmm::checks::verify_suite;
use gatgmm::datagen::save_csv;
use gatgmm::em::GmmParams;
use gatgmm::experiment::{compare_csv, evaluate, fit, write_artifacts, DatasetSpec, ExperimentConfig, Method};
use gatgmm::metrics::{condition1_check, principal_direction};
use gatgmm::model::ParamsJson;
use gatgmm::optimizer::generator_gmm;
use gatgmm::Error;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

#[derive(Parser)]
#[command(name = "gatgmm", version, about = "Adversarial and EM fitting of Gaussian mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a synthetic dataset to CSV (with a `.meta.json` sidecar).
    GenData(Common),
    /// Fit one method and write report.json, metrics.csv, params.json and SVG scatters.
    Train(Common),
    /// Evaluate a saved params.json against a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        /// params.json written by `train`.
        #[arg(long)]
        params: PathBuf,
    },
    /// Fit both methods and write compare.csv (method, gmm_objective, nll).
    Compare(Common),
    /// Report the separation condition for a dataset with a symmetric true mixture.
    CheckCondition1(Common),
    /// Run the transport and objective property checks.
    Verify(Common),
    /// Run a grid of configurations in parallel child processes.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated regularization values.
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 1.0, 2.0])]
        lambdas: Vec<f64>,
        /// Comma-separated seeds; defaults to the single `--seed`.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (a CSV path for `gen-data`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    /// isotropic, rotated, kmix or file:PATH.
    #[arg(long)]
    dataset: Option<DatasetSpec>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lr_gen: Option<f64>,
    #[arg(long)]
    lr_disc: Option<f64>,
    #[arg(long)]
    disc_steps: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Also report NLL on a fresh sample from the true mixture.
    #[arg(long)]
    holdout: bool,
    /// Record wall-clock times (timing.json).
    #[arg(long)]
    timing: bool,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| invalid(format!("reading {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| invalid(format!("parsing {}: {e}", p.display())))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(ds) = &self.dataset {
            if self.config.is_none() {
                match ds {
                    DatasetSpec::Rotated { .. } => cfg = cfg.rotated_defaults(),
                    DatasetSpec::Kmix { .. } => cfg = cfg.kmix_defaults(),
                    _ => {}
                }
            }
            cfg.dataset = ds.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.method {
            cfg.method = v;
        }
        if let Some(v) = self.lambda {
            cfg.train.lambda = v;
        }
        if let Some(v) = self.lr_gen {
            cfg.train.lr_gen = v;
        }
        if let Some(v) = self.lr_disc {
            cfg.train.lr_disc = v;
        }
        if let Some(v) = self.disc_steps {
            cfg.train.disc_steps_per_gen_step = v;
        }
        if let Some(v) = self.iters {
            cfg.train.max_iters = v;
        }
        if let Some(v) = self.batch {
            cfg.train.batch_size = v;
        }
        cfg.holdout |= self.holdout;
        cfg.timing |= self.timing;
        Ok(cfg)
    }

    fn out_dir(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

/// A params.json is either a generator (with `mode`) or a plain mixture.
fn load_gmm(path: &Path) -> Result<GmmParams, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("reading {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("mode").is_some() {
        let pj: ParamsJson = serde_json::from_value(value)?;
        generator_gmm(&pj.generator()?)
    } else {
        Ok(serde_json::from_value(value)?)
    }
}

/// Returns the process exit code; failed verification checks give 3.
fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Cmd::GenData(c) => {
            let cfg = c.config()?;
            let path = c.out.clone().unwrap_or_else(|| PathBuf::from("data.csv"));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            save_csv(&cfg.dataset.build(cfg.seed)?, &path)?;
            println!("{}", path.display());
        }
        Cmd::Train(c) => {
            let cfg = c.config()?;
            let out = c.out_dir("out");
            let outcome = fit(&cfg)?;
            write_artifacts(&outcome, &out)?;
            println!("{}", serde_json::to_string(&outcome.metrics)?);
        }
        Cmd::Eval { common, params } => {
            let cfg = common.config()?;
            let data = cfg.dataset.build(cfg.seed)?;
            let gmm = load_gmm(&params)?;
            if gmm.dim() != data.d() {
                return Err(invalid(format!("params have dimension {}, data has {}", gmm.dim(), data.d())));
            }
            let metrics = serde_json::to_value(evaluate(&cfg, &data, &gmm)?)?;
            if let Some(out) = &common.out {
                write_json(&out.join("eval.json"), &metrics)?;
            }
            println!("{metrics}");
        }
        Cmd::Compare(c) => {
            let cfg = c.config()?;
            let out = c.out_dir("out");
            let mut outcomes = Vec::new();
            for method in [Method::Gatgmm, Method::Em] {
                let o = fit(&ExperimentConfig { method, ..cfg.clone() })?;
                write_artifacts(&o, &out.join(method.name()))?;
                outcomes.push(o);
            }
            let table = compare_csv(&outcomes);
            std::fs::write(out.join("compare.csv"), &table)?;
            print!("{table}");
        }
        Cmd::CheckCondition1(c) => {
            let cfg = c.config()?;
            let data = cfg.dataset.build(cfg.seed)?;
            let truth = data
                .truth()
                .filter(|t| t.is_symmetric2(1e-12))
                .ok_or_else(|| invalid("the condition needs a dataset with a symmetric two-component truth"))?;
            let dir = principal_direction(&data.samples)?;
            let (holds, margin) = condition1_check(&truth.means[0], truth.cov(0), &dir)?;
            let v = serde_json::json!({ "holds": holds, "margin": margin });
            if let Some(out) = &c.out {
                write_json(&out.join("condition1.json"), &v)?;
            }
            println!("{v}");
        }
        Cmd::Verify(c) => {
            let cfg = c.config()?;
            let outcomes = verify_suite(cfg.seed)?;
            for o in &outcomes {
                println!("{} {}", if o.pass { "PASS" } else { "FAIL" }, o.name);
            }
            if let Some(out) = &c.out {
                write_json(&out.join("verify.json"), &serde_json::to_value(&outcomes)?)?;
            }
            if outcomes.iter().any(|o| !o.pass) {
                return Ok(3);
            }
        }
        Cmd::Sweep { common, lambdas, seeds } => sweep(&common, &lambdas, &seeds)?,
    }
    Ok(0)
}

fn sweep(common: &Common, lambdas: &[f64], seeds: &[u64]) -> Result<(), Error> {
    let base = common.config()?;
    let out = common.out_dir("sweep");
    let seeds = if seeds.is_empty() { vec![base.seed] } else { seeds.to_vec() };
    let mut jobs = Vec::new();
    for &lambda in lambdas {
        for &seed in &seeds {
            let mut cfg = base.clone();
            cfg.train.lambda = lambda;
            cfg.seed = seed;
            let dir = out.join(format!("lambda{lambda}-seed{seed}"));
            std::fs::create_dir_all(&dir)?;
            let cfg_path = dir.join("config.json");
            write_json(&cfg_path, &serde_json::to_value(&cfg)?)?;
            jobs.push((lambda, seed, dir, cfg_path));
        }
    }
    let workers = std::env::var("GATGMM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let exe = std::env::current_exe()?;
    let mut rows = vec![String::from("lambda,seed,status,gmm_objective,nll")];
    for chunk in jobs.chunks(workers) {
        let children = chunk
            .iter()
            .map(|(_, _, dir, cfg_path)| {
                Command::new(&exe)
                    .args(["train", "--config"])
                    .arg(cfg_path)
                    .arg("--out")
                    .arg(dir)
                    .stdout(std::process::Stdio::null())
                    .spawn()
            })
            .collect::<Result<Vec<_>, _>>()?;
        for ((lambda, seed, dir, _), mut child) in chunk.iter().zip(children) {
            let status = child.wait()?;
            let metrics = std::fs::read_to_string(dir.join("report.json"))
                .ok()
                .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
                .map(|r| r["metrics"].clone());
            let field = |k: &str| metrics.as_ref().and_then(|m| m[k].as_f64()).map_or("NA".into(), |v| format!("{v:.6}"));
            let code = status.code().map_or("signal".into(), |c| c.to_string());
            rows.push(format!("{lambda},{seed},{code},{},{}", field("gmm_objective"), field("nll")));
        }
    }
    let table = rows.join("\n") + "\n";
    std::fs::write(out.join("sweep.csv"), &table)?;
    print!("{table}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
