//! Injective flow `ℝ^d → ℝ^D`: a square flow on the latent space, zero
//! padding, then a square flow on the data space.

use crate::error::{check_finite, Error, Result};
use crate::flownet::{FlowModule, FlowTape, ParamGrad};
use crate::linalg::{Matrix, Rng};
use crate::scalar::{Dual, Real};

/// Standard normal prior on `ℝ^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentPrior {
    pub dim: usize,
}

impl LatentPrior {
    pub fn log_density(&self, z: &[f64]) -> f64 {
        let sq: f64 = z.iter().map(|v| v * v).sum();
        -0.5 * sq - 0.5 * self.dim as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        (0..self.dim).map(|_| rng.normal()).collect()
    }
}

/// `embed(z) = f(pad(h(z)))`, with left inverse
/// `project(x) = h⁻¹(slice(f⁻¹(x)))`.
///
/// Parameter gradients are laid out as `[h parameters | f parameters]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectiveFlow {
    h: FlowModule,
    f: FlowModule,
}

/// Intermediates of one `embed` pass.
pub struct EmbedTape<T> {
    pub x: Vec<T>,
    pub logdet_h: T,
    h: FlowTape<T>,
    f: FlowTape<T>,
}

/// Intermediates of one `project` pass.
pub struct ProjectTape {
    pub z: Vec<f64>,
    h: FlowTape<f64>,
    f: FlowTape<f64>,
}

impl InjectiveFlow {
    pub fn new(h: FlowModule, f: FlowModule) -> Result<Self> {
        if h.dim() > f.dim() {
            return Err(Error::Config(vec![format!(
                "latent dimension {} exceeds data dimension {}",
                h.dim(),
                f.dim()
            )]));
        }
        if h.dim() == 0 {
            return Err(Error::Config(vec!["latent dimension must be >= 1".into()]));
        }
        Ok(Self { h, f })
    }

    /// Both flows empty: `embed(z) = pad(z)`.
    pub fn identity(latent_dim: usize, data_dim: usize) -> Result<Self> {
        Self::new(FlowModule::identity(latent_dim), FlowModule::identity(data_dim))
    }

    pub fn latent_dim(&self) -> usize {
        self.h.dim()
    }

    pub fn data_dim(&self) -> usize {
        self.f.dim()
    }

    pub fn h(&self) -> &FlowModule {
        &self.h
    }

    pub fn f(&self) -> &FlowModule {
        &self.f
    }

    pub fn h_mut(&mut self) -> &mut FlowModule {
        &mut self.h
    }

    pub fn f_mut(&mut self) -> &mut FlowModule {
        &mut self.f
    }

    pub fn prior(&self) -> LatentPrior {
        LatentPrior {
            dim: self.latent_dim(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.h.param_count() + self.f.param_count()
    }

    /// Concatenated parameter vector `[h | f]`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.h.params().to_vec();
        p.extend_from_slice(self.f.params());
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::dim("InjectiveFlow::set_params", self.param_count(), params.len()));
        }
        let nh = self.h.param_count();
        self.h.params_mut().copy_from_slice(&params[..nh]);
        self.f.params_mut().copy_from_slice(&params[nh..]);
        Ok(())
    }

    pub fn pad<T: Real>(&self, u: &[T]) -> Vec<T> {
        let mut v = u.to_vec();
        v.resize(self.data_dim(), T::zero());
        v
    }

    pub fn embed_taped<T: Real>(&self, z: &[T]) -> EmbedTape<T> {
        let (u, logdet_h, h_tape) = self.h.forward_taped(z);
        let (x, _, f_tape) = self.f.forward_taped(&self.pad(&u));
        EmbedTape {
            x,
            logdet_h,
            h: h_tape,
            f: f_tape,
        }
    }

    /// Reverse pass through `embed`; `gx` is the cotangent of `x` and
    /// `glogdet_h` that of the h-flow log-determinant. Returns the latent
    /// cotangent and accumulates parameter cotangents into `grad`.
    pub fn embed_backward<T: Real>(
        &self,
        tape: &EmbedTape<T>,
        gx: &[T],
        glogdet_h: T,
        grad: Option<&mut [T]>,
    ) -> Vec<T> {
        let nh = self.h.param_count();
        let (gh, gf) = match grad {
            Some(g) => {
                let (a, b) = g.split_at_mut(nh);
                (Some(a), Some(b))
            }
            None => (None, None),
        };
        let gpad = self.f.backward_forward(&tape.f, gx, T::zero(), gf);
        let gu = &gpad[..self.latent_dim()];
        self.h.backward_forward(&tape.h, gu, glogdet_h, gh)
    }

    pub fn project_taped(&self, x: &[f64]) -> ProjectTape {
        let (v, _, f_tape) = self.f.inverse_taped(x);
        let (z, _, h_tape) = self.h.inverse_taped(&v[..self.latent_dim()]);
        ProjectTape {
            z,
            h: h_tape,
            f: f_tape,
        }
    }

    /// Reverse pass through `project` for a latent cotangent `gz`. The data
    /// cotangent is returned but is usually discarded.
    pub fn project_backward(&self, tape: &ProjectTape, gz: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let nh = self.h.param_count();
        let (gh, gf) = grad.split_at_mut(nh);
        let gw = self.h.backward_inverse(&tape.h, gz, 0.0, Some(gh));
        let gv = self.pad(&gw);
        self.f.backward_inverse(&tape.f, &gv, 0.0, Some(gf))
    }

    fn check(&self, context: &'static str, v: &[f64], n: usize) -> Result<()> {
        if v.len() != n {
            return Err(Error::dim(context, n, v.len()));
        }
        check_finite(context, v)
    }

    pub fn embed(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check("embed", z, self.latent_dim())?;
        let x = self.embed_taped(z).x;
        check_finite("embed output", &x)?;
        Ok(x)
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check("project", x, self.data_dim())?;
        let z = self.project_taped(x).z;
        check_finite("project output", &z)?;
        Ok(z)
    }

    /// `(embed(project(x)), ||x - embed(project(x))||²)`.
    pub fn reconstruct(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let z = self.project(x)?;
        let x_hat = self.embed(&z)?;
        let sq = x.iter().zip(&x_hat).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok((x_hat, sq))
    }

    /// `J v` with `J = ∂embed/∂z` (`D x d`).
    pub fn rect_jvp(&self, z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check("rect_jvp point", z, self.latent_dim())?;
        self.check("rect_jvp direction", v, self.latent_dim())?;
        let tape = self.embed_taped(&Dual::seed(z, v));
        let out: Vec<f64> = tape.x.iter().map(|d| d.eps).collect();
        check_finite("rect_jvp", &out)?;
        Ok(out)
    }

    /// `(J^T u, (∂embed/∂θ)^T u)`.
    pub fn rect_vjp(&self, z: &[f64], u: &[f64]) -> Result<(Vec<f64>, ParamGrad)> {
        self.check("rect_vjp point", z, self.latent_dim())?;
        self.check("rect_vjp cotangent", u, self.data_dim())?;
        let tape = self.embed_taped(z);
        let mut grad = vec![0.0; self.param_count()];
        let gz = self.embed_backward(&tape, u, 0.0, Some(&mut grad));
        check_finite("rect_vjp", &gz)?;
        Ok((gz, ParamGrad(grad)))
    }

    /// `J^T u` without accumulating parameter cotangents.
    pub fn rect_vjp_latent(&self, z: &[f64], u: &[f64]) -> Vec<f64> {
        let tape = self.embed_taped(z);
        self.embed_backward(&tape, u, 0.0, None)
    }

    /// Dense `D x d` Jacobian from `d` forward-mode passes.
    pub(crate) fn jacobian_with_value(&self, z: &[f64]) -> (Matrix, Vec<f64>, f64) {
        let d = self.latent_dim();
        let mut jac = Matrix::zeros(self.data_dim(), d);
        let mut x = Vec::new();
        let mut logdet_h = 0.0;
        let mut dir = vec![0.0; d];
        for i in 0..d {
            dir.iter_mut().for_each(|v| *v = 0.0);
            dir[i] = 1.0;
            let tape = self.embed_taped(&Dual::seed(z, &dir));
            for (r, xv) in tape.x.iter().enumerate() {
                jac[(r, i)] = xv.eps;
            }
            if i == 0 {
                x = tape.x.iter().map(|v| v.re).collect();
                logdet_h = tape.logdet_h.re;
            }
        }
        (jac, x, logdet_h)
    }
}
