//! Evaluation: Gaussian-moment FID-like score, log-likelihood, prominent
//! latent dimensions, restricted sampling and the OoD decision stump.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::injective::InjectiveFlow;
use crate::linalg::{symmetric_eigen, Matrix, Rng};
use crate::metric::{diag_profile, jacobian, macs};
use crate::training::sample_terms;

/// Eigenvalues above `-EIGEN_FLOOR` are clamped to zero.
pub const EIGEN_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mu: Vec<f64>,
    pub sigma: Matrix,
}

/// Sample mean and `1/(n-1)` covariance.
pub fn moments(xs: &[Vec<f64>]) -> Result<GaussianMoments> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let dim = xs[0].len();
    if let Some(bad) = xs.iter().find(|x| x.len() != dim) {
        return Err(Error::dim("moments", dim, bad.len()));
    }
    let mut mu = vec![0.0; dim];
    for x in xs {
        for (m, v) in mu.iter_mut().zip(x) {
            *m += v;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n as f64);
    let mut sigma = Matrix::zeros(dim, dim);
    let mut c = vec![0.0; dim];
    for x in xs {
        for ((ci, v), m) in c.iter_mut().zip(x).zip(&mu) {
            *ci = v - m;
        }
        for i in 0..dim {
            for j in i..dim {
                sigma[(i, j)] += c[i] * c[j];
            }
        }
    }
    let k = 1.0 / (n as f64 - 1.0);
    for i in 0..dim {
        for j in i..dim {
            let v = sigma[(i, j)] * k;
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
    }
    Ok(GaussianMoments { mu, sigma })
}

fn clamped_eigen(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let (mut vals, vecs) = symmetric_eigen(m)?;
    for v in &mut vals {
        if *v < 0.0 {
            if *v < -EIGEN_FLOOR {
                return Err(Error::MomentDegeneracy(*v));
            }
            *v = 0.0;
        }
    }
    Ok((vals, vecs))
}

fn psd_sqrt(m: &Matrix) -> Result<Matrix> {
    let (vals, vecs) = clamped_eigen(m)?;
    let n = m.rows();
    let mut out = Matrix::zeros(n, n);
    for (k, l) in vals.iter().enumerate() {
        let s = l.sqrt();
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] += vecs[(i, k)] * s * vecs[(j, k)];
            }
        }
    }
    Ok(out)
}

/// `tr (Σ Σ̃)^{1/2}` through the symmetric form `(Σ^{1/2} Σ̃ Σ^{1/2})^{1/2}`.
pub fn trace_sqrt_product(sigma: &Matrix, sigma_t: &Matrix) -> Result<f64> {
    let s = psd_sqrt(sigma)?;
    let m = s.matmul(sigma_t)?.matmul(&s)?;
    let sym = Matrix::from_vec(
        m.rows(),
        m.cols(),
        (0..m.rows() * m.cols())
            .map(|k| {
                let (i, j) = (k / m.cols(), k % m.cols());
                0.5 * (m[(i, j)] + m[(j, i)])
            })
            .collect(),
    )?;
    let (vals, _) = clamped_eigen(&sym)?;
    Ok(vals.iter().map(|v| v.sqrt()).sum())
}

/// `‖μ − μ̃‖² + tr(Σ + Σ̃ − 2(ΣΣ̃)^{1/2})`, floored at 0.
pub fn fid_like(a: &GaussianMoments, b: &GaussianMoments) -> Result<f64> {
    if a.mu.len() != b.mu.len() {
        return Err(Error::dim("fid_like", a.mu.len(), b.mu.len()));
    }
    let mean_term: f64 = a.mu.iter().zip(&b.mu).map(|(x, y)| (x - y) * (x - y)).sum();
    let tr = a.sigma.trace() + b.sigma.trace() - 2.0 * trace_sqrt_product(&a.sigma, &b.sigma)?;
    Ok((mean_term + tr).max(0.0))
}

/// `log p(x)` under the model, with the exact `½ log det JᵀJ`.
pub fn log_prob(gf: &InjectiveFlow, x: &[f64]) -> Result<f64> {
    let t = sample_terms(gf, x)?;
    Ok(t.log_prior - t.logdet_h - t.half_logdet_jtj)
}

pub fn log_probs(gf: &InjectiveFlow, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    xs.par_iter().map(|x| log_prob(gf, x)).collect()
}

pub fn mean_loglik(gf: &InjectiveFlow, xs: &[Vec<f64>]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::TooFewSamples(0));
    }
    let lp = log_probs(gf, xs)?;
    Ok(lp.iter().sum::<f64>() / lp.len() as f64)
}

/// Mean MACS of the chart Jacobian at `project(x)` over the points.
pub fn mean_macs(gf: &InjectiveFlow, xs: &[Vec<f64>]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::TooFewSamples(0));
    }
    let vals: Result<Vec<f64>> = xs
        .par_iter()
        .map(|x| Ok(macs(&jacobian(gf, &gf.project(x)?)?)))
        .collect();
    let vals = vals?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Mean `|cos|` matrix of the chart Jacobian columns over the points.
pub fn mean_abs_cos(gf: &InjectiveFlow, xs: &[Vec<f64>]) -> Result<Matrix> {
    if xs.is_empty() {
        return Err(Error::TooFewSamples(0));
    }
    let d = gf.latent_dim();
    let mut acc = Matrix::zeros(d, d);
    for x in xs {
        let c = crate::metric::pairwise_abs_cos(&jacobian(gf, &gf.project(x)?)?);
        for i in 0..d {
            for j in 0..d {
                acc[(i, j)] += c[(i, j)];
            }
        }
    }
    Ok(acc.scale(1.0 / xs.len() as f64))
}

/// Latents of the data points, for [`diag_profile`].
pub fn project_all(gf: &InjectiveFlow, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    xs.par_iter().map(|x| gf.project(x)).collect()
}

/// Indices of the `k` largest `|G_kk|`, most prominent first; ties go to the
/// lower index.
pub fn prominent_dims(profile: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..profile.len()).collect();
    idx.sort_by(|&a, &b| {
        profile[b]
            .abs()
            .partial_cmp(&profile[a].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k.min(profile.len()));
    idx
}

fn check_dims(gf: &InjectiveFlow, dims: &[usize]) -> Result<()> {
    let d = gf.latent_dim();
    match dims.iter().find(|&&i| i >= d) {
        Some(&i) => Err(Error::dim("latent dimension index", d, i)),
        None => Ok(()),
    }
}

/// `n` samples with latents drawn from the prior on `dims` and zero
/// elsewhere. The full latent vector is always drawn, so `dims = all`
/// reproduces [`sample`] under the same stream.
pub fn restricted_sample(gf: &InjectiveFlow, dims: &[usize], n: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    check_dims(gf, dims)?;
    let d = gf.latent_dim();
    let prior = gf.prior();
    let mut keep = vec![false; d];
    for &i in dims {
        keep[i] = true;
    }
    let zs: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut z = prior.sample(rng);
            for (v, k) in z.iter_mut().zip(&keep) {
                if !k {
                    *v = 0.0;
                }
            }
            z
        })
        .collect();
    zs.par_iter().map(|z| gf.embed(z)).collect()
}

pub fn sample(gf: &InjectiveFlow, n: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    let all: Vec<usize> = (0..gf.latent_dim()).collect();
    restricted_sample(gf, &all, n, rng)
}

/// Mean squared error per coordinate of reconstructions that keep only
/// `dims` of `project(x)`.
pub fn restricted_recon_mse(gf: &InjectiveFlow, dims: &[usize], xs: &[Vec<f64>]) -> Result<f64> {
    check_dims(gf, dims)?;
    if xs.is_empty() {
        return Err(Error::TooFewSamples(0));
    }
    let mut keep = vec![false; gf.latent_dim()];
    for &i in dims {
        keep[i] = true;
    }
    let errs: Result<Vec<f64>> = xs
        .par_iter()
        .map(|x| {
            let mut z = gf.project(x)?;
            for (v, k) in z.iter_mut().zip(&keep) {
                if !k {
                    *v = 0.0;
                }
            }
            let xh = gf.embed(&z)?;
            Ok(x.iter().zip(&xh).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        })
        .collect();
    let total: f64 = errs?.iter().sum();
    Ok(total / (xs.len() * gf.data_dim()) as f64)
}

/// Single log-likelihood threshold (`in` when `ll >= threshold`) maximising
/// balanced accuracy. Returns `(threshold, accuracy)`; among equally good
/// thresholds the smallest wins.
pub fn ood_stump(loglik_in: &[f64], loglik_out: &[f64]) -> Result<(f64, f64)> {
    if loglik_in.is_empty() {
        return Err(Error::TooFewSamples(0));
    }
    if loglik_out.is_empty() {
        return Err(Error::TooFewSamples(0));
    }
    let sorted = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    let a = sorted(loglik_in);
    let b = sorted(loglik_out);
    let mut cands: Vec<f64> = a.iter().chain(&b).copied().collect();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    cands.push(f64::INFINITY);
    let mut best = (cands[0], f64::NEG_INFINITY);
    for &t in &cands {
        let tpr = (a.len() - a.partition_point(|v| *v < t)) as f64 / a.len() as f64;
        let tnr = b.partition_point(|v| *v < t) as f64 / b.len() as f64;
        let acc = 0.5 * (tpr + tnr);
        if acc > best.1 {
            best = (t, acc);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fid_like: f64,
    pub mean_loglik: f64,
    pub macs: f64,
    pub diag_profile: Vec<f64>,
    pub prominent_order: Vec<usize>,
}

/// Report on held-out data; the FID-like score compares `data.len()` model
/// samples against `data`.
pub fn evaluate_model(gf: &InjectiveFlow, data: &[Vec<f64>], rng: &mut Rng) -> Result<EvalReport> {
    let generated = sample(gf, data.len(), rng)?;
    let fid = fid_like(&moments(data)?, &moments(&generated)?)?;
    let profile = diag_profile(&project_all(gf, data)?, gf)?;
    Ok(EvalReport {
        fid_like: fid,
        mean_loglik: mean_loglik(gf, data)?,
        macs: mean_macs(gf, data)?,
        prominent_order: prominent_dims(&profile, profile.len()),
        diag_profile: profile,
    })
}
