//! Objective assembly, Adam, likelihood annealing and the training loop.
//!
//! Per sample, with `z = project(x)`:
//!
//! ```text
//! objective = a·(log p(z) − logdet_h − ½logdet_f) − β·‖x − embed(z)‖² − γ·Σ_{i≠j}|G_ij|
//! ```
//!
//! where `½logdet_f = ½ log det JᵀJ − logdet_h` and `a` is the annealing
//! weight. `γ = 0` is the plain rectangular-flow objective through the same
//! code path. Gradients include the dependence of `z` on the parameters.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};
use crate::flownet::ParamGrad;
use crate::injective::InjectiveFlow;
use crate::linalg::{cholesky_logdet, Matrix, Rng};
use crate::metric::{
    hutchinson_half_logdet, offdiag_cotangent, offdiag_l1, metric_tensor, ChartJets, CgReport,
    EstimatorConfig, EstimatorMode,
};

const TAG_SHUFFLE: u64 = 1;
const TAG_STEP: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealSchedule {
    pub start_epoch: usize,
    pub end_epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StopMetric {
    #[default]
    ValidObjective,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    pub patience: usize,
    #[serde(default)]
    pub metric: StopMetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub beta: f64,
    pub gamma: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub anneal: Option<AnnealSchedule>,
    pub estimator: EstimatorConfig,
    pub early_stop: Option<EarlyStop>,
    pub seed: u64,
    /// Global gradient norm cap.
    pub clip_norm: f64,
    /// Worker threads for batch evaluation; `None` uses the rayon default.
    pub threads: Option<usize>,
    /// Forces a single worker.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            gamma: 1.0,
            lr: 1e-4,
            epochs: 100,
            batch_size: 100,
            anneal: None,
            estimator: EstimatorConfig::default(),
            early_stop: None,
            seed: 0,
            clip_norm: 100.0,
            threads: None,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        self.collect_errors(&mut errs);
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub(crate) fn collect_errors(&self, errs: &mut Vec<String>) {
        if !(self.beta >= 0.0) {
            errs.push(format!("train.beta must be >= 0, got {}", self.beta));
        }
        if !(self.gamma >= 0.0) {
            errs.push(format!("train.gamma must be >= 0, got {}", self.gamma));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            errs.push(format!("train.lr must be > 0, got {}", self.lr));
        }
        if self.batch_size == 0 {
            errs.push("train.batch_size must be >= 1".into());
        }
        if let Some(a) = self.anneal {
            if a.start_epoch >= a.end_epoch {
                errs.push(format!(
                    "train.anneal.start_epoch ({}) must be < end_epoch ({})",
                    a.start_epoch, a.end_epoch
                ));
            }
        }
        if let Some(es) = self.early_stop {
            if es.patience == 0 {
                errs.push("train.early_stop.patience must be >= 1".into());
            }
        }
        if !(self.clip_norm > 0.0) {
            errs.push(format!("train.clip_norm must be > 0, got {}", self.clip_norm));
        }
        if self.threads == Some(0) {
            errs.push("train.threads must be >= 1".into());
        }
        self.estimator.validate(errs);
    }

    fn worker_count(&self) -> Option<usize> {
        if self.deterministic {
            Some(1)
        } else {
            self.threads
        }
    }
}

/// Batch means of the objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LossBreakdown {
    pub log_prior: f64,
    pub logdet_h: f64,
    pub half_logdet_jtj: f64,
    pub recon: f64,
    pub offdiag_l1: f64,
    pub total_objective: f64,
}

impl LossBreakdown {
    /// Model log-likelihood `log p(z) − logdet_h − ½logdet_f`.
    pub fn log_likelihood(&self) -> f64 {
        self.log_prior - self.logdet_h - self.half_logdet_jtj
    }
}

/// Terms of the objective for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SampleTerms {
    pub log_prior: f64,
    pub logdet_h: f64,
    /// `½ log det JᵀJ − logdet_h`.
    pub half_logdet_jtj: f64,
    pub recon: f64,
    pub offdiag_l1: f64,
}

/// Linear weights on the per-sample terms; the gradient returned by
/// [`sample_objective_grad`] is that of `Σ weight · term`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TermWeights {
    pub log_prior: f64,
    pub logdet_h: f64,
    pub half_logdet_jtj: f64,
    pub recon: f64,
    pub offdiag_l1: f64,
}

impl TermWeights {
    pub fn objective(anneal_weight: f64, beta: f64, gamma: f64) -> Self {
        Self {
            log_prior: anneal_weight,
            logdet_h: -anneal_weight,
            half_logdet_jtj: -anneal_weight,
            recon: -beta,
            offdiag_l1: -gamma,
        }
    }
}

/// Combines batch means into the objective.
pub fn assemble(
    terms: &SampleTerms,
    beta: f64,
    gamma: f64,
    anneal_weight: f64,
) -> LossBreakdown {
    let likelihood = terms.log_prior - terms.logdet_h - terms.half_logdet_jtj;
    LossBreakdown {
        log_prior: terms.log_prior,
        logdet_h: terms.logdet_h,
        half_logdet_jtj: terms.half_logdet_jtj,
        recon: terms.recon,
        offdiag_l1: terms.offdiag_l1,
        total_objective: anneal_weight * likelihood - beta * terms.recon - gamma * terms.offdiag_l1,
    }
}

fn check_sample(gf: &InjectiveFlow, x: &[f64]) -> Result<()> {
    if x.len() != gf.data_dim() {
        return Err(Error::dim("training sample", gf.data_dim(), x.len()));
    }
    check_finite("training sample", x)
}

fn recon_error(x: &[f64], x_hat: &[f64]) -> f64 {
    x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Objective terms for one sample, without gradients.
pub fn sample_terms(gf: &InjectiveFlow, x: &[f64]) -> Result<SampleTerms> {
    check_sample(gf, x)?;
    let z = gf.project_taped(x).z;
    check_finite("projected latent", &z)?;
    let (jac, _, _) = gf.jacobian_with_value(&z);
    let half_full = 0.5 * cholesky_logdet(&jac.gram())?.logdet();
    let etape = gf.embed_taped(&z);
    let terms = SampleTerms {
        log_prior: gf.prior().log_density(&z),
        logdet_h: etape.logdet_h,
        half_logdet_jtj: half_full - etape.logdet_h,
        recon: recon_error(x, &etape.x),
        offdiag_l1: offdiag_l1(&metric_tensor(&jac)),
    };
    check_terms(&terms)?;
    Ok(terms)
}

fn check_terms(t: &SampleTerms) -> Result<()> {
    check_finite(
        "objective terms",
        &[t.log_prior, t.logdet_h, t.half_logdet_jtj, t.recon, t.offdiag_l1],
    )
}

/// Terms of one sample and the parameter gradient of `Σ w · term`.
pub fn sample_objective_grad(
    gf: &InjectiveFlow,
    x: &[f64],
    w: &TermWeights,
    estimator: &EstimatorConfig,
    rng: &mut Rng,
) -> Result<(SampleTerms, ParamGrad, CgReport)> {
    check_sample(gf, x)?;
    let ptape = gf.project_taped(x);
    let z = ptape.z.clone();
    check_finite("projected latent", &z)?;

    let jets = ChartJets::new(gf, &z);
    let g = jets.jac.gram();
    let chol = cholesky_logdet(&g)?;
    let half_full = 0.5 * chol.logdet();
    let etape = gf.embed_taped(&z);
    let terms = SampleTerms {
        log_prior: gf.prior().log_density(&z),
        logdet_h: etape.logdet_h,
        half_logdet_jtj: half_full - etape.logdet_h,
        recon: recon_error(x, &etape.x),
        offdiag_l1: offdiag_l1(&metric_tensor(&jets.jac)),
    };
    check_terms(&terms)?;

    let d = gf.latent_dim();
    let mut grad = vec![0.0; gf.param_count()];
    let mut gz = vec![0.0; d];

    // recon and logdet_h through the embedding (½logdet_f carries −logdet_h)
    let gx: Vec<f64> = x
        .iter()
        .zip(&etape.x)
        .map(|(a, b)| -2.0 * w.recon * (a - b))
        .collect();
    let c_ldh = w.logdet_h - w.half_logdet_jtj;
    if c_ldh != 0.0 || w.recon != 0.0 {
        let g = gf.embed_backward(&etape, &gx, c_ldh, Some(&mut grad));
        for (a, b) in gz.iter_mut().zip(&g) {
            *a += b;
        }
    }
    if w.log_prior != 0.0 {
        for (a, zi) in gz.iter_mut().zip(&z) {
            *a -= w.log_prior * zi;
        }
    }

    let mut cg = CgReport::default();
    let mut wmat = Matrix::zeros(gf.data_dim(), d);
    if w.offdiag_l1 != 0.0 {
        wmat = offdiag_cotangent(&jets.jac, &g).scale(w.offdiag_l1);
    }
    if w.half_logdet_jtj != 0.0 {
        match estimator.mode {
            EstimatorMode::Exact => {
                let inv = chol.inverse();
                let jg = jets.jac.matmul(&inv)?;
                for r in 0..wmat.rows() {
                    for c in 0..d {
                        wmat[(r, c)] += w.half_logdet_jtj * jg[(r, c)];
                    }
                }
            }
            EstimatorMode::Stochastic => {
                cg = hutchinson_half_logdet(
                    gf,
                    &z,
                    &jets.jac,
                    estimator,
                    rng,
                    w.half_logdet_jtj,
                    &mut grad,
                    &mut gz,
                )?;
            }
        }
    }
    jets.column_grad(gf, &wmat, &mut grad, &mut gz);

    gf.project_backward(&ptape, &gz, &mut grad);
    check_finite("objective gradient", &grad)?;
    Ok((terms, ParamGrad(grad), cg))
}

fn mean_terms(terms: &[SampleTerms]) -> SampleTerms {
    let mut s = SampleTerms::default();
    for t in terms {
        s.log_prior += t.log_prior;
        s.logdet_h += t.logdet_h;
        s.half_logdet_jtj += t.half_logdet_jtj;
        s.recon += t.recon;
        s.offdiag_l1 += t.offdiag_l1;
    }
    let n = terms.len() as f64;
    SampleTerms {
        log_prior: s.log_prior / n,
        logdet_h: s.logdet_h / n,
        half_logdet_jtj: s.half_logdet_jtj / n,
        recon: s.recon / n,
        offdiag_l1: s.offdiag_l1 / n,
    }
}

/// Result of one batch evaluation.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub breakdown: LossBreakdown,
    /// Gradient of `total_objective` (ascent direction).
    pub grad: ParamGrad,
    pub cg: CgReport,
}

/// Batch objective and its gradient. Each sample draws probes from its own
/// stream derived from `rng`; per-sample results are reduced in batch order,
/// so the output does not depend on the number of workers.
pub fn loss(
    gf: &InjectiveFlow,
    batch: &[Vec<f64>],
    cfg: &TrainConfig,
    rng: &mut Rng,
    anneal_weight: f64,
) -> Result<LossEval> {
    if batch.is_empty() {
        return Err(Error::TooFewSamples(0));
    }
    let weights = TermWeights::objective(anneal_weight, cfg.beta, cfg.gamma);
    let base = rng.next_u64();
    let per_sample: Vec<Result<(SampleTerms, ParamGrad, CgReport)>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut srng = Rng::derive(base, &[i as u64]);
            sample_objective_grad(gf, x, &weights, &cfg.estimator, &mut srng)
        })
        .collect();
    let mut terms = Vec::with_capacity(batch.len());
    let mut grad = ParamGrad::zeros(gf.param_count());
    let mut cg = CgReport::default();
    for r in per_sample {
        let (t, g, c) = r?;
        terms.push(t);
        grad.add_assign(&g);
        cg.merge(c);
    }
    grad.scale(1.0 / batch.len() as f64);
    let breakdown = assemble(&mean_terms(&terms), cfg.beta, cfg.gamma, anneal_weight);
    Ok(LossEval {
        breakdown,
        grad,
        cg,
    })
}

/// Batch objective without gradients.
pub fn evaluate(
    gf: &InjectiveFlow,
    data: &[Vec<f64>],
    beta: f64,
    gamma: f64,
    anneal_weight: f64,
) -> Result<LossBreakdown> {
    if data.is_empty() {
        return Err(Error::TooFewSamples(0));
    }
    let terms: Vec<Result<SampleTerms>> = data.par_iter().map(|x| sample_terms(gf, x)).collect();
    let terms = terms.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(assemble(&mean_terms(&terms), beta, gamma, anneal_weight))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One Adam ascent step on `params` along `grad`.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if grad.len() != params.len() {
        return Err(Error::dim("adam_step gradient", params.len(), grad.len()));
    }
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::dim("adam_step state", params.len(), state.m.len()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] += lr * mh / (vh.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// 0 before `start_epoch`, linear up to 1 at `end_epoch`, 1 afterwards.
pub fn anneal_weight(epoch: usize, schedule: Option<&AnnealSchedule>) -> f64 {
    match schedule {
        None => 1.0,
        Some(s) => {
            if epoch <= s.start_epoch {
                0.0
            } else if epoch >= s.end_epoch {
                1.0
            } else {
                (epoch - s.start_epoch) as f64 / (s.end_epoch - s.start_epoch) as f64
            }
        }
    }
}

/// Per-epoch metrics. Validation terms are evaluated with full likelihood
/// weight so epochs stay comparable while annealing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub anneal_weight: f64,
    pub train: LossBreakdown,
    pub valid: LossBreakdown,
    pub mean_grad_norm: f64,
    pub clipped_steps: usize,
    pub cg_solves: usize,
    pub cg_iters: usize,
    pub cg_non_converged: usize,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    EarlyStopped,
    Diverged(String),
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch (the initial model if no
    /// epoch finished).
    pub model: InjectiveFlow,
    /// Parameters after the last completed step.
    pub final_model: InjectiveFlow,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_valid_objective: f64,
    pub stop: StopReason,
}

fn with_pool<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
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

/// Runs mini-batch Adam ascent. `on_epoch` sees each record as it is
/// produced.
pub fn train(
    gf: InjectiveFlow,
    train_set: &[Vec<f64>],
    valid_set: &[Vec<f64>],
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord) + Send,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::TooFewSamples(0));
    }
    if valid_set.is_empty() {
        return Err(Error::TooFewSamples(0));
    }
    with_pool(cfg.worker_count(), || train_loop(gf, train_set, valid_set, cfg, on_epoch))?
}

fn train_loop(
    mut gf: InjectiveFlow,
    train_set: &[Vec<f64>],
    valid_set: &[Vec<f64>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let mut params = gf.params();
    let mut adam = AdamState::new(params.len());
    let mut best_model = gf.clone();
    let mut best_epoch = None;
    let mut best_obj = f64::NEG_INFINITY;
    let mut since_best = 0usize;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stop = StopReason::Completed;

    'epochs: for epoch in 0..cfg.epochs {
        let aw = anneal_weight(epoch, cfg.anneal.as_ref());
        Rng::derive(cfg.seed, &[TAG_SHUFFLE, epoch as u64]).shuffle(&mut order);

        let mut acc = SampleTerms::default();
        let mut grad_norm_sum = 0.0;
        let mut clipped = 0usize;
        let mut cg = CgReport::default();
        let mut n_batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Vec<f64>> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let mut rng = Rng::derive(cfg.seed, &[TAG_STEP, epoch as u64, b as u64]);
            let eval = match loss(&gf, &batch, cfg, &mut rng, aw) {
                Ok(e) => e,
                Err(e) => {
                    stop = StopReason::Diverged(format!("epoch {epoch} batch {b}: {e}"));
                    break 'epochs;
                }
            };
            let mut grad = eval.grad;
            let norm = grad.norm();
            grad_norm_sum += norm;
            if norm > cfg.clip_norm {
                grad.scale(cfg.clip_norm / norm);
                clipped += 1;
            }
            adam_step(&mut params, grad.as_slice(), &mut adam, cfg.lr)?;
            if params.iter().any(|p| !p.is_finite()) {
                stop = StopReason::Diverged(format!("epoch {epoch} batch {b}: non-finite parameters"));
                break 'epochs;
            }
            gf.set_params(&params)?;

            let k = batch.len() as f64;
            let br = eval.breakdown;
            acc.log_prior += br.log_prior * k;
            acc.logdet_h += br.logdet_h * k;
            acc.half_logdet_jtj += br.half_logdet_jtj * k;
            acc.recon += br.recon * k;
            acc.offdiag_l1 += br.offdiag_l1 * k;
            cg.merge(eval.cg);
            n_batches += 1;
        }
        let n = train_set.len() as f64;
        let train_terms = SampleTerms {
            log_prior: acc.log_prior / n,
            logdet_h: acc.logdet_h / n,
            half_logdet_jtj: acc.half_logdet_jtj / n,
            recon: acc.recon / n,
            offdiag_l1: acc.offdiag_l1 / n,
        };

        let valid = match evaluate(&gf, valid_set, cfg.beta, cfg.gamma, 1.0) {
            Ok(v) if v.total_objective.is_finite() => v,
            Ok(_) => {
                stop = StopReason::Diverged(format!("epoch {epoch}: non-finite validation objective"));
                break;
            }
            Err(e) => {
                stop = StopReason::Diverged(format!("epoch {epoch} validation: {e}"));
                break;
            }
        };
        let improved = valid.total_objective > best_obj;
        if improved {
            best_obj = valid.total_objective;
            best_epoch = Some(epoch);
            best_model = gf.clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        let record = EpochRecord {
            epoch,
            anneal_weight: aw,
            train: assemble(&train_terms, cfg.beta, cfg.gamma, aw),
            valid,
            mean_grad_norm: grad_norm_sum / n_batches.max(1) as f64,
            clipped_steps: clipped,
            cg_solves: cg.solves,
            cg_iters: cg.total_iters,
            cg_non_converged: cg.non_converged,
            best: improved,
        };
        on_epoch(&record);
        history.push(record);

        if let Some(es) = cfg.early_stop {
            if since_best >= es.patience {
                stop = StopReason::EarlyStopped;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        model: best_model,
        final_model: gf,
        history,
        best_epoch,
        best_valid_objective: best_obj,
        stop,
    })
}
