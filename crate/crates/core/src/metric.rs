//! Pullback metric `G = JᵀJ` of the chart, its off-diagonal ℓ1 penalty,
//! exact and stochastic gradients of `½ log det G`, and basis diagnostics.
//!
//! Every gradient of a `G`-dependent scalar `Φ` reduces to
//! `Σ_i W_iᵀ ∂J_i` for a `D x d` cotangent matrix `W` (column `i` pairs with
//! Jacobian column `i`). Each term `aᵀ (∂J) b` is the forward-mode derivative
//! along `b` of the reverse pass `(∂embed/∂θ)ᵀ a`, so it costs one dual-number
//! forward pass and one dual-number reverse pass.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};
use crate::flownet::ParamGrad;
use crate::injective::{EmbedTape, InjectiveFlow};
use crate::linalg::{
    cg_solve, cholesky_logdet, default_cg_max_iter, gaussian_probe, norm2, FnOperator, Matrix,
    Rng,
};
use crate::scalar::Dual;

/// Columns with a smaller norm are left out of cosine statistics.
pub const MIN_COLUMN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricTensor {
    g: Matrix,
    origin: Option<Vec<f64>>,
}

impl MetricTensor {
    pub fn matrix(&self) -> &Matrix {
        &self.g
    }

    pub fn origin(&self) -> Option<&[f64]> {
        self.origin.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.g.rows()
    }

    pub fn diag(&self) -> Vec<f64> {
        self.g.diag()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    #[default]
    Exact,
    Stochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default)]
    pub mode: EstimatorMode,
    /// Hutchinson probes per sample.
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default = "default_cg_tol")]
    pub cg_tol: f64,
    /// Defaults to `5 d`.
    #[serde(default)]
    pub cg_max_iter: Option<usize>,
    /// Only `"none"` is supported.
    #[serde(default = "default_preconditioner")]
    pub preconditioner: String,
}

fn default_probes() -> usize {
    1
}

fn default_cg_tol() -> f64 {
    1e-3
}

fn default_preconditioner() -> String {
    "none".into()
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            mode: EstimatorMode::Exact,
            probes: default_probes(),
            cg_tol: default_cg_tol(),
            cg_max_iter: None,
            preconditioner: default_preconditioner(),
        }
    }
}

impl EstimatorConfig {
    pub fn stochastic(probes: usize, cg_tol: f64) -> Self {
        Self {
            mode: EstimatorMode::Stochastic,
            probes,
            cg_tol,
            ..Self::default()
        }
    }

    pub fn validate(&self, errors: &mut Vec<String>) {
        if self.probes < 1 {
            errors.push("estimator.probes must be >= 1".into());
        }
        if !(self.cg_tol > 0.0) {
            errors.push(format!("estimator.cg_tol must be > 0, got {}", self.cg_tol));
        }
        if self.preconditioner != "none" {
            errors.push(format!(
                "estimator.preconditioner `{}` is not supported (only `none`)",
                self.preconditioner
            ));
        }
    }
}

/// Outcome of the CG solves behind one stochastic estimate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CgReport {
    pub solves: usize,
    pub total_iters: usize,
    pub non_converged: usize,
}

impl CgReport {
    pub fn merge(&mut self, other: CgReport) {
        self.solves += other.solves;
        self.total_iters += other.total_iters;
        self.non_converged += other.non_converged;
    }
}

#[derive(Debug, Clone)]
pub struct StochasticGrad {
    pub grad: ParamGrad,
    pub cg: CgReport,
}

/// Dense `D x d` chart Jacobian, column `i` from one forward-mode pass.
pub fn jacobian(gf: &InjectiveFlow, z: &[f64]) -> Result<Matrix> {
    if z.len() != gf.latent_dim() {
        return Err(Error::dim("jacobian", gf.latent_dim(), z.len()));
    }
    check_finite("jacobian point", z)?;
    let (jac, _, _) = gf.jacobian_with_value(z);
    if !jac.is_finite() {
        return Err(Error::NonFinite("jacobian".into()));
    }
    Ok(jac)
}

pub fn metric_tensor(jac: &Matrix) -> MetricTensor {
    MetricTensor {
        g: jac.gram(),
        origin: None,
    }
}

pub fn metric_at(gf: &InjectiveFlow, z: &[f64]) -> Result<MetricTensor> {
    let mut g = metric_tensor(&jacobian(gf, z)?);
    g.origin = Some(z.to_vec());
    Ok(g)
}

/// Sign with `sign(0) = 0`.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `Σ_{i≠j} |G_ij|`, both triangles counted.
pub fn offdiag_l1(g: &MetricTensor) -> f64 {
    let m = &g.g;
    let n = m.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += m[(i, j)].abs();
            }
        }
    }
    s
}

/// `½ log det G`, with the jitter policy of [`cholesky_logdet`].
pub fn half_logdet_exact(g: &MetricTensor) -> Result<f64> {
    Ok(0.5 * cholesky_logdet(&g.g)?.logdet())
}

/// Cotangent of the off-diagonal penalty w.r.t. `J`: `2 J S` with
/// `S_ij = sign(G_ij)` off the diagonal.
pub(crate) fn offdiag_cotangent(jac: &Matrix, g: &Matrix) -> Matrix {
    let d = g.rows();
    let mut s = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            if i != j {
                s[(i, j)] = 2.0 * sign(g[(i, j)]);
            }
        }
    }
    jac.matmul(&s).expect("J is D x d and S is d x d")
}

/// Cotangent of `½ log det G` w.r.t. `J`: `J G⁻¹`.
pub(crate) fn half_logdet_cotangent(jac: &Matrix, g: &Matrix) -> Result<Matrix> {
    let inv = cholesky_logdet(g)?.inverse();
    Ok(jac.matmul(&inv).expect("J is D x d and G⁻¹ is d x d"))
}

/// Forward-mode passes along the latent basis vectors, kept for the
/// forward-over-reverse products.
pub(crate) struct ChartJets {
    tapes: Vec<EmbedTape<Dual>>,
    pub jac: Matrix,
}

impl ChartJets {
    pub fn new(gf: &InjectiveFlow, z: &[f64]) -> Self {
        let d = gf.latent_dim();
        let mut tapes = Vec::with_capacity(d);
        let mut jac = Matrix::zeros(gf.data_dim(), d);
        let mut dir = vec![0.0; d];
        for i in 0..d {
            dir.iter_mut().for_each(|v| *v = 0.0);
            dir[i] = 1.0;
            let tape = gf.embed_taped(&Dual::seed(z, &dir));
            for (r, xv) in tape.x.iter().enumerate() {
                jac[(r, i)] = xv.eps;
            }
            tapes.push(tape);
        }
        Self { tapes, jac }
    }

    /// Accumulates `∇_{θ,z} Σ_i W_iᵀ J_i` (W held fixed).
    pub fn column_grad(
        &self,
        gf: &InjectiveFlow,
        w: &Matrix,
        grad: &mut [f64],
        gz: &mut [f64],
    ) {
        let mut dgrad = vec![Dual::default(); grad.len()];
        for (i, tape) in self.tapes.iter().enumerate() {
            let col = w.column(i);
            if col.iter().all(|v| *v == 0.0) {
                continue;
            }
            let dgz = gf.embed_backward(tape, &Dual::lift(&col), Dual::default(), Some(&mut dgrad));
            for (g, d) in gz.iter_mut().zip(&dgz) {
                *g += d.eps;
            }
        }
        for (g, d) in grad.iter_mut().zip(&dgrad) {
            *g += d.eps;
        }
    }
}

/// Accumulates `∇_{θ,z} aᵀ J(z, θ) b` for fixed `a`, `b`.
pub(crate) fn bilinear_grad(
    gf: &InjectiveFlow,
    z: &[f64],
    a: &[f64],
    b: &[f64],
    grad: &mut [f64],
    gz: &mut [f64],
) {
    let tape = gf.embed_taped(&Dual::seed(z, b));
    let mut dgrad = vec![Dual::default(); grad.len()];
    let dgz = gf.embed_backward(&tape, &Dual::lift(a), Dual::default(), Some(&mut dgrad));
    for (g, d) in grad.iter_mut().zip(&dgrad) {
        *g += d.eps;
    }
    for (g, d) in gz.iter_mut().zip(&dgz) {
        *g += d.eps;
    }
}

/// Hutchinson estimate of `∇_{θ,z} ½ log det JᵀJ`, scaled by `weight` and
/// accumulated. Each probe `ε` is pushed through CG on the matrix-free
/// operator `v ↦ Jᵀ(J v)` to get `y = G⁻¹ε`, then
/// `½ yᵀ(∂G)ε = ½[(Jy)ᵀ ∂J ε + (Jε)ᵀ ∂J y]`.
pub(crate) fn hutchinson_half_logdet(
    gf: &InjectiveFlow,
    z: &[f64],
    jac: &Matrix,
    cfg: &EstimatorConfig,
    rng: &mut Rng,
    weight: f64,
    grad: &mut [f64],
    gz: &mut [f64],
) -> Result<CgReport> {
    let d = gf.latent_dim();
    let op = FnOperator::new(d, |v: &[f64]| {
        let jv = gf.rect_jvp(z, v)?;
        Ok(gf.rect_vjp_latent(z, &jv))
    });
    let max_iter = cfg.cg_max_iter.unwrap_or_else(|| default_cg_max_iter(d));
    let mut report = CgReport::default();
    let k = cfg.probes.max(1);
    let coef = 0.5 * weight / k as f64;
    for _ in 0..k {
        let eps = gaussian_probe(rng, d);
        let sol = cg_solve(&op, &eps, cfg.cg_tol, max_iter)?;
        report.solves += 1;
        report.total_iters += sol.iters;
        if !sol.converged {
            report.non_converged += 1;
        }
        let jy = jac.matvec(&sol.x)?;
        let je = jac.matvec(&eps)?;
        let a1: Vec<f64> = jy.iter().map(|v| v * coef).collect();
        let a2: Vec<f64> = je.iter().map(|v| v * coef).collect();
        bilinear_grad(gf, z, &a1, &eps, grad, gz);
        bilinear_grad(gf, z, &a2, &sol.x, grad, gz);
    }
    Ok(report)
}

fn check_point(gf: &InjectiveFlow, z: &[f64], context: &'static str) -> Result<()> {
    if z.len() != gf.latent_dim() {
        return Err(Error::dim(context, gf.latent_dim(), z.len()));
    }
    check_finite(context, z)
}

/// Parameter gradient of `offdiag_l1(G(z))` at fixed `z`.
pub fn offdiag_l1_grad(gf: &InjectiveFlow, z: &[f64]) -> Result<ParamGrad> {
    check_point(gf, z, "offdiag_l1_grad")?;
    let jets = ChartJets::new(gf, z);
    let w = offdiag_cotangent(&jets.jac, &jets.jac.gram());
    let mut grad = vec![0.0; gf.param_count()];
    let mut gz = vec![0.0; gf.latent_dim()];
    jets.column_grad(gf, &w, &mut grad, &mut gz);
    check_finite("offdiag_l1_grad", &grad)?;
    Ok(ParamGrad(grad))
}

/// Parameter gradient of `½ log det G(z)` at fixed `z`, via the dense
/// `tr[G⁻¹ ∂G]` form.
pub fn half_logdet_grad_exact(gf: &InjectiveFlow, z: &[f64]) -> Result<ParamGrad> {
    check_point(gf, z, "half_logdet_grad_exact")?;
    let jets = ChartJets::new(gf, z);
    let w = half_logdet_cotangent(&jets.jac, &jets.jac.gram())?;
    let mut grad = vec![0.0; gf.param_count()];
    let mut gz = vec![0.0; gf.latent_dim()];
    jets.column_grad(gf, &w, &mut grad, &mut gz);
    check_finite("half_logdet_grad_exact", &grad)?;
    Ok(ParamGrad(grad))
}

/// Unbiased Hutchinson + CG estimate of [`half_logdet_grad_exact`].
/// Non-converged CG solves are counted in the report, and the estimate is
/// still returned.
pub fn half_logdet_grad_stochastic(
    gf: &InjectiveFlow,
    z: &[f64],
    cfg: &EstimatorConfig,
    rng: &mut Rng,
) -> Result<StochasticGrad> {
    check_point(gf, z, "half_logdet_grad_stochastic")?;
    if cfg.mode != EstimatorMode::Stochastic {
        return Err(Error::Config(vec![
            "half_logdet_grad_stochastic requires estimator mode `stochastic`".into(),
        ]));
    }
    let jac = jacobian(gf, z)?;
    let mut grad = vec![0.0; gf.param_count()];
    let mut gz = vec![0.0; gf.latent_dim()];
    let cg = hutchinson_half_logdet(gf, z, &jac, cfg, rng, 1.0, &mut grad, &mut gz)?;
    check_finite("half_logdet_grad_stochastic", &grad)?;
    Ok(StochasticGrad {
        grad: ParamGrad(grad),
        cg,
    })
}

/// Pairwise `|cos|` between Jacobian columns. Columns shorter than
/// [`MIN_COLUMN_NORM`] get zero rows and columns, including the diagonal.
pub fn pairwise_abs_cos(jac: &Matrix) -> Matrix {
    let d = jac.cols();
    let cols: Vec<Vec<f64>> = (0..d).map(|i| jac.column(i)).collect();
    let norms: Vec<f64> = cols.iter().map(|c| norm2(c)).collect();
    let mut out = Matrix::zeros(d, d);
    for i in 0..d {
        if norms[i] < MIN_COLUMN_NORM {
            continue;
        }
        out[(i, i)] = 1.0;
        for j in i + 1..d {
            if norms[j] < MIN_COLUMN_NORM {
                continue;
            }
            let c = (crate::linalg::dot(&cols[i], &cols[j]) / (norms[i] * norms[j])).abs();
            let c = c.min(1.0);
            out[(i, j)] = c;
            out[(j, i)] = c;
        }
    }
    out
}

/// Mean absolute cosine similarity over unordered pairs of (non-collapsed)
/// Jacobian columns; 0 when fewer than two columns qualify.
pub fn macs(jac: &Matrix) -> f64 {
    let d = jac.cols();
    let cos = pairwise_abs_cos(jac);
    let valid: Vec<usize> = (0..d).filter(|&i| cos[(i, i)] == 1.0).collect();
    let mut sum = 0.0;
    let mut n = 0usize;
    for (a, &i) in valid.iter().enumerate() {
        for &j in &valid[a + 1..] {
            sum += cos[(i, j)];
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Mean of `G_kk` over a batch of latent points.
pub fn diag_profile(latents: &[Vec<f64>], gf: &InjectiveFlow) -> Result<Vec<f64>> {
    if latents.is_empty() {
        return Err(Error::TooFewSamples(0));
    }
    let mut acc = vec![0.0; gf.latent_dim()];
    for z in latents {
        let g = metric_at(gf, z)?;
        for (a, v) in acc.iter_mut().zip(g.diag()) {
            *a += v;
        }
    }
    let n = latents.len() as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}
