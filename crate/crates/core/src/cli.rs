//! Command-line front end: `train`, `eval`, `sample`, `analyze`, `export`.
//!
//! A training run directory holds:
//!
//! ```text
//! config.toml            resolved configuration
//! metrics.jsonl          one EpochRecord per line
//! checkpoints/best.json  best-validation parameters
//! checkpoints/final.json parameters after the last step
//! report.json            training summary and test-set evaluation
//! ```
//!
//! `analyze` writes `analysis.json` (see `docs/analysis.schema.json`) plus
//! CSV dumps with header `x0,..,x{D-1},logp`: `samples_full.csv`,
//! `samples_k{k}.csv` (the k most prominent latent dimensions),
//! `samples_dim{i}.csv` (latent dimension i alone), `data_test.csv`, and the
//! headerless `abs_cos.csv` matrix.
//!
//! Outputs never contain timestamps, so reruns with the same seed produce
//! identical files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::datasets::{generate, Dataset};
use crate::error::{Error, Result};
use crate::evalkit::{
    evaluate_model, fid_like, log_probs, mean_abs_cos, moments, prominent_dims, project_all,
    restricted_recon_mse, restricted_sample, EvalReport,
};
use crate::injective::InjectiveFlow;
use crate::linalg::Rng;
use crate::metric::diag_profile;
use crate::training::{evaluate, train, LossBreakdown, StopReason};

const TAG_EVAL: u64 = 31;
const TAG_SAMPLE: u64 = 32;
const TAG_ANALYZE: u64 = 33;

#[derive(Debug, Parser)]
#[command(name = "cmflow", version, about = "Canonical manifold flows")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the configured test split.
    Eval(EvalArgs),
    /// Draw samples (optionally restricted to some latent dimensions) as CSV.
    Sample(SampleArgs),
    /// Metric-tensor diagnostics and the prominent-dimension sweep.
    Analyze(AnalyzeArgs),
    /// Write a checkpoint in the flat binary format.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in configuration: fuzzy-line, sphere, moebius, tabular.
    #[arg(long)]
    pub preset: Option<String>,
    /// Master seed for data, initialisation, training and evaluation.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Worker threads.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Single worker and ordered reductions.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Run directory (overrides `out_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the epoch count.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Comma-separated latent dimensions to sample; the rest are zero.
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub deterministic: bool,
    /// CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Test-split evaluation written to `report.json` and by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEval {
    pub test: LossBreakdown,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_valid_objective: Option<f64>,
    pub stop: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub train: TrainSummary,
    pub eval: RunEval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub dims: Vec<usize>,
    pub fid_like: f64,
    pub mse: f64,
}

/// Contents of `analysis.json`; see `docs/analysis.schema.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub latent_dim: usize,
    pub data_dim: usize,
    pub n_points: usize,
    pub macs: f64,
    pub diag_profile: Vec<f64>,
    pub abs_cos: Vec<Vec<f64>>,
    pub prominent_order: Vec<usize>,
    pub sweep: Vec<SweepPoint>,
}

impl ConfigArgs {
    /// Loads the configuration and applies flag overrides.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(p), _) => RunConfig::load(p)?,
            (None, Some(name)) => RunConfig::preset(name)?,
            (None, None) => {
                return Err(Error::Config(vec!["one of --config or --preset is required".into()]))
            }
        };
        if let Some(s) = self.seed {
            cfg.dataset.seed = s;
            cfg.train.seed = s;
            cfg.eval.seed = s;
        }
        if let Some(g) = self.gamma {
            cfg.train.gamma = g;
        }
        if let Some(b) = self.beta {
            cfg.train.beta = b;
        }
        if self.threads.is_some() {
            cfg.train.threads = self.threads;
        }
        if self.deterministic {
            cfg.train.deterministic = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn check_model_fits(gf: &InjectiveFlow, ds: &Dataset) -> Result<()> {
    if gf.data_dim() != ds.dim {
        return Err(Error::dim("checkpoint data dimension", ds.dim, gf.data_dim()));
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
    fs::write(path, s + "\n")?;
    Ok(())
}

fn to_json_line<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Test-split evaluation of a model under `cfg`.
pub fn evaluate_run(cfg: &RunConfig, gf: &InjectiveFlow, ds: &Dataset) -> Result<RunEval> {
    check_model_fits(gf, ds)?;
    let test = if ds.test.is_empty() { &ds.valid } else { &ds.test };
    let mut rng = Rng::derive(cfg.eval.seed, &[TAG_EVAL]);
    Ok(RunEval {
        test: evaluate(gf, test, cfg.train.beta, cfg.train.gamma, 1.0)?,
        report: evaluate_model(gf, test, &mut rng)?,
    })
}

/// Trains under `cfg` into `out_dir`, returning the report.
pub fn train_run(cfg: &RunConfig, out_dir: &Path) -> Result<RunReport> {
    cfg.validate()?;
    fs::create_dir_all(out_dir.join("checkpoints"))?;
    fs::write(out_dir.join("config.toml"), cfg.to_toml()?)?;
    let ds = generate(&cfg.dataset)?;
    if ds.dim != cfg.model.data_dim {
        return Err(Error::Config(vec![format!(
            "model.data_dim ({}) does not match the dataset dimension ({})",
            cfg.model.data_dim, ds.dim
        )]));
    }
    let gf = cfg.model.build(cfg.train.seed)?;

    let mut metrics = BufWriter::new(File::create(out_dir.join("metrics.jsonl"))?);
    let mut write_err: Option<Error> = None;
    let outcome = train(gf, &ds.train, &ds.valid, &cfg.train, |rec| {
        if write_err.is_some() {
            return;
        }
        let line = to_json_line(rec).and_then(|l| writeln!(metrics, "{l}").map_err(Error::from));
        if let Err(e) = line {
            write_err = Some(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    metrics.flush()?;

    let mut best = Checkpoint::new(&outcome.model, cfg.train.seed, outcome.best_epoch);
    best.standardization = ds.standardization.clone();
    best.save(&out_dir.join("checkpoints/best.json"))?;
    let mut last = Checkpoint::new(
        &outcome.final_model,
        cfg.train.seed,
        outcome.history.last().map(|r| r.epoch),
    );
    last.standardization = ds.standardization.clone();
    last.save(&out_dir.join("checkpoints/final.json"))?;

    let eval = evaluate_run(cfg, &outcome.model, &ds)?;
    let report = RunReport {
        train: TrainSummary {
            epochs_run: outcome.history.len(),
            best_epoch: outcome.best_epoch,
            best_valid_objective: outcome.best_epoch.map(|_| outcome.best_valid_objective),
            stop: outcome.stop,
        },
        eval,
    };
    write_json(&out_dir.join("report.json"), &report)?;
    Ok(report)
}

fn write_samples_csv(w: &mut dyn Write, xs: &[Vec<f64>], logp: &[f64]) -> Result<()> {
    let dim = xs.first().map_or(0, |x| x.len());
    let header: Vec<String> = (0..dim).map(|i| format!("x{i}")).chain(["logp".to_string()]).collect();
    writeln!(w, "{}", header.join(","))?;
    for (x, lp) in xs.iter().zip(logp) {
        let row: Vec<String> = x.iter().chain(std::iter::once(lp)).map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

fn save_samples_csv(path: &Path, xs: &[Vec<f64>], logp: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_samples_csv(&mut w, xs, logp)?;
    w.flush()?;
    Ok(())
}

/// Samples and their model log-densities.
pub fn sample_with_logp(
    gf: &InjectiveFlow,
    dims: Option<&[usize]>,
    n: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let all: Vec<usize> = (0..gf.latent_dim()).collect();
    let dims = dims.unwrap_or(&all);
    let xs = restricted_sample(gf, dims, n, &mut Rng::derive(seed, &[TAG_SAMPLE]))?;
    let lp = log_probs(gf, &xs)?;
    Ok((xs, lp))
}

fn sweep_ks(requested: &[usize], d: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = requested.iter().copied().filter(|&k| k >= 1 && k <= d).collect();
    ks.push(d);
    ks.sort_unstable();
    ks.dedup();
    ks
}

/// Writes `analysis.json` and the CSV dumps into `out_dir`.
pub fn analyze_run(cfg: &RunConfig, gf: &InjectiveFlow, out_dir: &Path) -> Result<Analysis> {
    let ds = generate(&cfg.dataset)?;
    check_model_fits(gf, &ds)?;
    fs::create_dir_all(out_dir)?;
    let points = if ds.test.is_empty() { &ds.valid } else { &ds.test };
    let d = gf.latent_dim();
    let profile = diag_profile(&project_all(gf, points)?, gf)?;
    let cos = mean_abs_cos(gf, points)?;
    let abs_cos: Vec<Vec<f64>> = (0..d).map(|i| cos.row(i).to_vec()).collect();
    let order = prominent_dims(&profile, d);
    let n_gen = cfg.eval.n_samples.unwrap_or(points.len());
    let data_moments = moments(points)?;

    let mut sweep = Vec::new();
    for k in sweep_ks(&cfg.eval.sweep, d) {
        let dims = prominent_dims(&profile, k);
        let (xs, lp) = sample_with_logp(gf, Some(&dims), n_gen, cfg.eval.seed ^ TAG_ANALYZE)?;
        let fid = fid_like(&data_moments, &moments(&xs)?)?;
        let mse = restricted_recon_mse(gf, &dims, points)?;
        save_samples_csv(&out_dir.join(format!("samples_k{k}.csv")), &xs, &lp)?;
        sweep.push(SweepPoint {
            k,
            dims,
            fid_like: fid,
            mse,
        });
    }
    let (xs, lp) = sample_with_logp(gf, None, n_gen, cfg.eval.seed ^ TAG_ANALYZE)?;
    save_samples_csv(&out_dir.join("samples_full.csv"), &xs, &lp)?;
    for k in 0..d {
        let (xs, lp) = sample_with_logp(gf, Some(&[k]), n_gen, cfg.eval.seed ^ TAG_ANALYZE)?;
        save_samples_csv(&out_dir.join(format!("samples_dim{k}.csv")), &xs, &lp)?;
    }
    save_samples_csv(&out_dir.join("data_test.csv"), points, &log_probs(gf, points)?)?;

    let mut w = BufWriter::new(File::create(out_dir.join("abs_cos.csv"))?);
    for row in &abs_cos {
        writeln!(w, "{}", row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))?;
    }
    w.flush()?;

    let analysis = Analysis {
        latent_dim: d,
        data_dim: gf.data_dim(),
        n_points: points.len(),
        macs: crate::evalkit::mean_macs(gf, points)?,
        diag_profile: profile,
        abs_cos,
        prominent_order: order,
        sweep,
    };
    write_json(&out_dir.join("analysis.json"), &analysis)?;
    Ok(analysis)
}

fn with_threads<R: Send>(threads: Option<usize>, deterministic: bool, f: impl FnOnce() -> R + Send) -> Result<R> {
    let n = if deterministic { Some(1) } else { threads };
    match n {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(vec![format!("thread pool: {e}")]))?;
            Ok(pool.install(f))
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => {
            let mut cfg = a.cfg.resolve()?;
            if let Some(e) = a.epochs {
                cfg.train.epochs = e;
            }
            if let Some(o) = a.out {
                cfg.out_dir = o;
            }
            let report = train_run(&cfg, &cfg.out_dir.clone())?;
            println!("{}", to_json_line(&report)?);
            Ok(())
        }
        Command::Eval(a) => {
            let cfg = a.cfg.resolve()?;
            let gf = Checkpoint::load(&a.checkpoint)?.model()?;
            let ds = generate(&cfg.dataset)?;
            let ev = with_threads(cfg.train.threads, cfg.train.deterministic, || evaluate_run(&cfg, &gf, &ds))??;
            match a.out {
                Some(p) => write_json(&p, &ev),
                None => {
                    println!("{}", serde_json::to_string_pretty(&ev).map_err(|e| Error::Checkpoint(e.to_string()))?);
                    Ok(())
                }
            }
        }
        Command::Sample(a) => {
            let gf = Checkpoint::load(&a.checkpoint)?.model()?;
            let (xs, lp) = with_threads(a.threads, a.deterministic, || {
                sample_with_logp(&gf, a.dims.as_deref(), a.n, a.seed)
            })??;
            match a.out {
                Some(p) => save_samples_csv(&p, &xs, &lp),
                None => {
                    let stdout = std::io::stdout();
                    let mut w = BufWriter::new(stdout.lock());
                    write_samples_csv(&mut w, &xs, &lp)?;
                    w.flush()?;
                    Ok(())
                }
            }
        }
        Command::Analyze(a) => {
            let cfg = a.cfg.resolve()?;
            let gf = Checkpoint::load(&a.checkpoint)?.model()?;
            let analysis = with_threads(cfg.train.threads, cfg.train.deterministic, || {
                analyze_run(&cfg, &gf, &a.out)
            })??;
            println!("{}", to_json_line(&analysis)?);
            Ok(())
        }
        Command::Export(a) => {
            let ck = Checkpoint::load(&a.checkpoint)?;
            ck.model()?;
            fs::write(&a.out, ck.to_binary()?)?;
            Ok(())
        }
    }
}
