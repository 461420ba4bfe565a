//! Real NVP building blocks with structural derivatives.
//!
//! A [`FlowModule`] is a stack of affine couplings separated by a fixed
//! reversal permutation. Parameters live in one flat buffer owned by the
//! module; every layer addresses its block by offset. Each layer has a closed
//! form forward map, inverse map and reverse (adjoint) pass for both
//! directions, all generic over [`Real`] so the same code yields values
//! (`f64`), JVPs ([`Dual`]) and forward-over-reverse products.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};
use crate::linalg::Rng;
use crate::scalar::{Dual, Real};

/// Scale clamp `α` in `s = α tanh(s_raw / α)`.
pub const DEFAULT_SCALE_CLAMP: f64 = 5.0;

/// Gradient buffer aligned with a parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad(pub Vec<f64>);

impl ParamGrad {
    pub fn zeros(n: usize) -> Self {
        ParamGrad(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn add_assign(&mut self, other: &ParamGrad) {
        assert_eq!(self.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn add_scaled(&mut self, k: f64, other: &ParamGrad) {
        assert_eq!(self.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += k * b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.0.iter_mut().for_each(|v| *v *= k);
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Fully connected tanh network. Weights are row-major `out x in`, followed
/// by the bias, per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    offset: usize,
}

impl Mlp {
    pub fn new(widths: Vec<usize>, offset: usize) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        Self { widths, offset }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn param_range(&self) -> Range<usize> {
        self.offset..self.offset + self.param_count()
    }

    fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Hidden layers Kaiming-uniform with tanh gain, output layer zero.
    fn init(&self, params: &mut [f64], rng: &mut Rng) {
        let mut off = self.offset;
        let last = self.n_layers() - 1;
        for (l, w) in self.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (5.0 / 3.0) * (3.0 / fan_in as f64).sqrt();
            for p in &mut params[off..off + fan_in * fan_out] {
                *p = if l == last {
                    0.0
                } else {
                    rng.uniform_range(-bound, bound)
                };
            }
            off += fan_in * fan_out;
            params[off..off + fan_out].iter_mut().for_each(|b| *b = 0.0);
            off += fan_out;
        }
    }

    /// Forward pass. `acts` receives the input followed by every hidden
    /// activation; the returned vector is the linear output.
    fn forward<T: Real>(&self, params: &[f64], x: &[T], acts: &mut Vec<Vec<T>>) -> Vec<T> {
        debug_assert_eq!(x.len(), self.widths[0]);
        acts.clear();
        acts.push(x.to_vec());
        let mut off = self.offset;
        let last = self.n_layers() - 1;
        for (l, w) in self.widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[off..off + n_in * n_out];
            let bias = &params[off + n_in * n_out..off + n_in * n_out + n_out];
            let input = acts.last().expect("input pushed above");
            let mut out = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let mut a = T::cst(bias[o]);
                for (xi, &wi) in input.iter().zip(row) {
                    a += xi.scale(wi);
                }
                out.push(if l == last { a } else { a.tanh() });
            }
            off += n_in * n_out + n_out;
            if l == last {
                return out;
            }
            acts.push(out);
        }
        unreachable!("MLP has at least one layer")
    }

    /// Reverse pass. Accumulates parameter cotangents into `grad` (indexed
    /// like the flat parameter vector) and returns the input cotangent.
    fn backward<T: Real>(
        &self,
        params: &[f64],
        acts: &[Vec<T>],
        gy: &[T],
        mut grad: Option<&mut [T]>,
    ) -> Vec<T> {
        let n_layers = self.n_layers();
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = self.offset;
        for w in self.widths.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut g_out: Vec<T> = gy.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let off = offsets[l];
            // pre-activation cotangent
            if l != n_layers - 1 {
                let h = &acts[l + 1];
                for (g, &hv) in g_out.iter_mut().zip(h) {
                    *g = *g * (T::cst(1.0) - hv * hv);
                }
            }
            let input = &acts[l];
            if let Some(grad) = grad.as_deref_mut() {
                for o in 0..n_out {
                    let go = g_out[o];
                    let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                    for (gw, &xi) in row.iter_mut().zip(input) {
                        *gw += go * xi;
                    }
                    grad[off + n_in * n_out + o] += go;
                }
            }
            let weights = &params[off..off + n_in * n_out];
            let mut g_in = vec![T::zero(); n_in];
            for o in 0..n_out {
                let go = g_out[o];
                for (gi, &w) in g_in.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                    *gi += go.scale(w);
                }
            }
            g_out = g_in;
        }
        g_out
    }
}

/// Affine coupling: coordinates with `mask = true` pass through and
/// condition the scale and shift applied to the others.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineCoupling {
    dim: usize,
    mask: Vec<bool>,
    pass: Vec<usize>,
    trans: Vec<usize>,
    scale_net: Mlp,
    shift_net: Mlp,
    clamp: f64,
}

#[derive(Debug, Clone)]
struct CouplingTape<T> {
    // transformed block: input for the forward direction, output for the inverse
    xb: Vec<T>,
    th: Vec<T>,
    // e^{s} (forward) or e^{-s} (inverse)
    es: Vec<T>,
    scale_acts: Vec<Vec<T>>,
    shift_acts: Vec<Vec<T>>,
}

impl AffineCoupling {
    pub fn new(mask: Vec<bool>, hidden: &[usize], clamp: f64, offset: usize) -> Result<Self> {
        let pass: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        let trans: Vec<usize> = (0..mask.len()).filter(|&i| !mask[i]).collect();
        if pass.is_empty() || trans.is_empty() {
            return Err(Error::Config(vec![format!(
                "coupling mask {mask:?} needs at least one pass-through and one transformed coordinate"
            )]));
        }
        if !(clamp > 0.0) {
            return Err(Error::Config(vec![format!("scale clamp must be > 0, got {clamp}")]));
        }
        let widths: Vec<usize> = std::iter::once(pass.len())
            .chain(hidden.iter().copied())
            .chain(std::iter::once(trans.len()))
            .collect();
        let scale_net = Mlp::new(widths.clone(), offset);
        let shift_net = Mlp::new(widths, offset + scale_net.param_count());
        Ok(Self {
            dim: mask.len(),
            mask,
            pass,
            trans,
            scale_net,
            shift_net,
            clamp,
        })
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn scale_net(&self) -> &Mlp {
        &self.scale_net
    }

    pub fn shift_net(&self) -> &Mlp {
        &self.shift_net
    }

    pub fn clamp(&self) -> f64 {
        self.clamp
    }

    pub fn param_count(&self) -> usize {
        self.scale_net.param_count() + self.shift_net.param_count()
    }

    pub fn param_range(&self) -> Range<usize> {
        self.scale_net.offset..self.shift_net.param_range().end
    }

    fn conditioner<T: Real>(
        &self,
        params: &[f64],
        xa: &[T],
    ) -> (Vec<T>, Vec<T>, Vec<T>, Vec<Vec<T>>, Vec<Vec<T>>) {
        let mut scale_acts = Vec::new();
        let mut shift_acts = Vec::new();
        let raw = self.scale_net.forward(params, xa, &mut scale_acts);
        let t = self.shift_net.forward(params, xa, &mut shift_acts);
        let inv = 1.0 / self.clamp;
        let th: Vec<T> = raw.iter().map(|r| r.scale(inv).tanh()).collect();
        let s: Vec<T> = th.iter().map(|v| v.scale(self.clamp)).collect();
        (s, th, t, scale_acts, shift_acts)
    }

    fn forward<T: Real>(&self, params: &[f64], x: &[T]) -> (Vec<T>, T, CouplingTape<T>) {
        let xa: Vec<T> = self.pass.iter().map(|&i| x[i]).collect();
        let xb: Vec<T> = self.trans.iter().map(|&i| x[i]).collect();
        let (s, th, t, scale_acts, shift_acts) = self.conditioner(params, &xa);
        let es: Vec<T> = s.iter().map(|v| v.exp()).collect();
        let mut y = x.to_vec();
        let mut logdet = T::zero();
        for (k, &i) in self.trans.iter().enumerate() {
            y[i] = xb[k] * es[k] + t[k];
            logdet += s[k];
        }
        let tape = CouplingTape {
            xb,
            th,
            es,
            scale_acts,
            shift_acts,
        };
        (y, logdet, tape)
    }

    fn inverse<T: Real>(&self, params: &[f64], y: &[T]) -> (Vec<T>, T, CouplingTape<T>) {
        let ya: Vec<T> = self.pass.iter().map(|&i| y[i]).collect();
        let (s, th, t, scale_acts, shift_acts) = self.conditioner(params, &ya);
        let ems: Vec<T> = s.iter().map(|v| (-*v).exp()).collect();
        let mut x = y.to_vec();
        let mut xb = Vec::with_capacity(self.trans.len());
        let mut logdet = T::zero();
        for (k, &i) in self.trans.iter().enumerate() {
            let v = (y[i] - t[k]) * ems[k];
            x[i] = v;
            xb.push(v);
            logdet -= s[k];
        }
        let tape = CouplingTape {
            xb,
            th,
            es: ems,
            scale_acts,
            shift_acts,
        };
        (x, logdet, tape)
    }

    /// Shared tail of both reverse passes: given cotangents of the clamped
    /// scale and of the shift, push them through the conditioners.
    fn conditioner_backward<T: Real>(
        &self,
        params: &[f64],
        tape: &CouplingTape<T>,
        gs: &[T],
        gt: &[T],
        mut grad: Option<&mut [T]>,
    ) -> Vec<T> {
        let g_raw: Vec<T> = gs
            .iter()
            .zip(&tape.th)
            .map(|(&g, &th)| g * (T::cst(1.0) - th * th))
            .collect();
        let ga1 = self
            .scale_net
            .backward(params, &tape.scale_acts, &g_raw, grad.as_deref_mut());
        let ga2 = self.shift_net.backward(params, &tape.shift_acts, gt, grad);
        ga1.iter().zip(&ga2).map(|(&a, &b)| a + b).collect()
    }

    fn backward_forward<T: Real>(
        &self,
        params: &[f64],
        tape: &CouplingTape<T>,
        gy: &[T],
        glogdet: T,
        grad: Option<&mut [T]>,
    ) -> Vec<T> {
        let nb = self.trans.len();
        let mut gx = gy.to_vec();
        let mut gs = Vec::with_capacity(nb);
        let mut gt = Vec::with_capacity(nb);
        for (k, &i) in self.trans.iter().enumerate() {
            let g = gy[i];
            gx[i] = g * tape.es[k];
            gt.push(g);
            gs.push(g * tape.xb[k] * tape.es[k] + glogdet);
        }
        let ga = self.conditioner_backward(params, tape, &gs, &gt, grad);
        for (k, &i) in self.pass.iter().enumerate() {
            gx[i] += ga[k];
        }
        gx
    }

    fn backward_inverse<T: Real>(
        &self,
        params: &[f64],
        tape: &CouplingTape<T>,
        gx: &[T],
        glogdet: T,
        grad: Option<&mut [T]>,
    ) -> Vec<T> {
        let nb = self.trans.len();
        let mut gy = gx.to_vec();
        let mut gs = Vec::with_capacity(nb);
        let mut gt = Vec::with_capacity(nb);
        for (k, &i) in self.trans.iter().enumerate() {
            let g = gx[i];
            gy[i] = g * tape.es[k];
            gt.push(-(g * tape.es[k]));
            gs.push(-(g * tape.xb[k]) - glogdet);
        }
        let ga = self.conditioner_backward(params, tape, &gs, &gt, grad);
        for (k, &i) in self.pass.iter().enumerate() {
            gy[i] += ga[k];
        }
        gy
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Coupling(AffineCoupling),
    /// Fixed coordinate reversal.
    Reverse,
}

/// Per-layer intermediates of one pass, needed by the reverse pass.
#[derive(Debug, Clone)]
pub struct FlowTape<T> {
    layers: Vec<Option<CouplingTape<T>>>,
}

/// Dimension-preserving composition of couplings and reversals.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModule {
    dim: usize,
    layers: Vec<Layer>,
    params: Vec<f64>,
}

/// Serializable architecture of a [`FlowModule`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub dim: usize,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Coupling {
        mask: Vec<bool>,
        hidden: Vec<usize>,
        scale_clamp: f64,
    },
    Reverse,
}

/// Mask of the `k`-th coupling. Masks alternate between even and odd
/// coordinates as seen in the module's input frame; the reversals in between
/// flip parity for even dimensions, which is accounted for here.
pub fn coupling_mask(dim: usize, k: usize) -> Vec<bool> {
    let parity = if dim % 2 == 0 { 0 } else { k % 2 };
    (0..dim).map(|i| i % 2 == parity).collect()
}

impl FlowModule {
    /// The empty flow on `dim` coordinates.
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            layers: Vec::new(),
            params: Vec::new(),
        }
    }

    /// Real NVP stack of `n_couplings` affine couplings with `hidden` widths.
    /// Output layers start at zero, so the flow is the identity at init.
    pub fn real_nvp(
        dim: usize,
        n_couplings: usize,
        hidden: &[usize],
        clamp: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if n_couplings > 0 && dim < 2 {
            return Err(Error::Config(vec![format!(
                "a {dim}-dimensional flow cannot hold coupling layers"
            )]));
        }
        let mut spec = FlowSpec {
            dim,
            layers: Vec::new(),
        };
        for k in 0..n_couplings {
            if k > 0 {
                spec.layers.push(LayerSpec::Reverse);
            }
            spec.layers.push(LayerSpec::Coupling {
                mask: coupling_mask(dim, k),
                hidden: hidden.to_vec(),
                scale_clamp: clamp,
            });
        }
        // restore the input ordering so the zero-initialised stack is the identity
        if n_couplings % 2 == 0 && n_couplings > 0 {
            spec.layers.push(LayerSpec::Reverse);
        }
        let mut flow = Self::from_spec(&spec, None)?;
        flow.init_params(rng);
        Ok(flow)
    }

    /// Builds the module; `params` defaults to zeros.
    pub fn from_spec(spec: &FlowSpec, params: Option<Vec<f64>>) -> Result<Self> {
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut offset = 0;
        for l in &spec.layers {
            match l {
                LayerSpec::Coupling {
                    mask,
                    hidden,
                    scale_clamp,
                } => {
                    if mask.len() != spec.dim {
                        return Err(Error::dim("coupling mask", spec.dim, mask.len()));
                    }
                    let c = AffineCoupling::new(mask.clone(), hidden, *scale_clamp, offset)?;
                    offset += c.param_count();
                    layers.push(Layer::Coupling(c));
                }
                LayerSpec::Reverse => layers.push(Layer::Reverse),
            }
        }
        let params = match params {
            Some(p) if p.len() != offset => return Err(Error::dim("flow parameters", offset, p.len())),
            Some(p) => p,
            None => vec![0.0; offset],
        };
        Ok(Self {
            dim: spec.dim,
            layers,
            params,
        })
    }

    pub fn spec(&self) -> FlowSpec {
        FlowSpec {
            dim: self.dim,
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Coupling(c) => LayerSpec::Coupling {
                        mask: c.mask.clone(),
                        hidden: c.scale_net.widths[1..c.scale_net.widths.len() - 1].to_vec(),
                        scale_clamp: c.clamp,
                    },
                    Layer::Reverse => LayerSpec::Reverse,
                })
                .collect(),
        }
    }

    fn init_params(&mut self, rng: &mut Rng) {
        for l in &self.layers {
            if let Layer::Coupling(c) = l {
                c.scale_net.init(&mut self.params, rng);
                c.shift_net.init(&mut self.params, rng);
            }
        }
    }

    /// Overwrites every parameter with `U(-scale, scale)` noise. Test helper
    /// for exercising non-identity flows.
    pub fn randomize_params(&mut self, rng: &mut Rng, scale: f64) {
        for p in &mut self.params {
            *p = rng.uniform_range(-scale, scale);
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Parameter block of every coupling, in layer order.
    pub fn layer_param_ranges(&self) -> Vec<Range<usize>> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Coupling(c) => Some(c.param_range()),
                Layer::Reverse => None,
            })
            .collect()
    }

    pub fn forward_taped<T: Real>(&self, z: &[T]) -> (Vec<T>, T, FlowTape<T>) {
        let mut x = z.to_vec();
        let mut logdet = T::zero();
        let mut tapes = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            match l {
                Layer::Coupling(c) => {
                    let (y, ld, tape) = c.forward(&self.params, &x);
                    x = y;
                    logdet += ld;
                    tapes.push(Some(tape));
                }
                Layer::Reverse => {
                    x.reverse();
                    tapes.push(None);
                }
            }
        }
        (x, logdet, FlowTape { layers: tapes })
    }

    pub fn inverse_taped<T: Real>(&self, x: &[T]) -> (Vec<T>, T, FlowTape<T>) {
        let mut z = x.to_vec();
        let mut logdet = T::zero();
        let mut tapes = Vec::with_capacity(self.layers.len());
        for l in self.layers.iter().rev() {
            match l {
                Layer::Coupling(c) => {
                    let (y, ld, tape) = c.inverse(&self.params, &z);
                    z = y;
                    logdet += ld;
                    tapes.push(Some(tape));
                }
                Layer::Reverse => {
                    z.reverse();
                    tapes.push(None);
                }
            }
        }
        tapes.reverse();
        (z, logdet, FlowTape { layers: tapes })
    }

    /// Reverse pass of [`forward_taped`](Self::forward_taped): cotangents of
    /// the output and of the log-determinant in, input cotangent out.
    pub fn backward_forward<T: Real>(
        &self,
        tape: &FlowTape<T>,
        gy: &[T],
        glogdet: T,
        mut grad: Option<&mut [T]>,
    ) -> Vec<T> {
        let mut g = gy.to_vec();
        for (l, t) in self.layers.iter().zip(&tape.layers).rev() {
            match (l, t) {
                (Layer::Coupling(c), Some(t)) => {
                    g = c.backward_forward(&self.params, t, &g, glogdet, grad.as_deref_mut());
                }
                (Layer::Reverse, None) => g.reverse(),
                _ => unreachable!("tape does not match layers"),
            }
        }
        g
    }

    /// Reverse pass of [`inverse_taped`](Self::inverse_taped).
    pub fn backward_inverse<T: Real>(
        &self,
        tape: &FlowTape<T>,
        gz: &[T],
        glogdet: T,
        mut grad: Option<&mut [T]>,
    ) -> Vec<T> {
        let mut g = gz.to_vec();
        for (l, t) in self.layers.iter().zip(&tape.layers) {
            match (l, t) {
                (Layer::Coupling(c), Some(t)) => {
                    g = c.backward_inverse(&self.params, t, &g, glogdet, grad.as_deref_mut());
                }
                (Layer::Reverse, None) => g.reverse(),
                _ => unreachable!("tape does not match layers"),
            }
        }
        g
    }

    fn check_len(&self, context: &'static str, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::dim(context, self.dim, v.len()));
        }
        Ok(())
    }

    /// `(x, log|det ∂x/∂z|)`.
    pub fn forward(&self, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_len("forward", z)?;
        check_finite("forward input", z)?;
        let (x, ld, _) = self.forward_taped(z);
        check_finite("forward output", &x)?;
        check_finite("forward logdet", &[ld])?;
        Ok((x, ld))
    }

    /// `(z, log|det ∂z/∂x|)`.
    pub fn inverse(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_len("inverse", x)?;
        check_finite("inverse input", x)?;
        let (z, ld, _) = self.inverse_taped(x);
        check_finite("inverse output", &z)?;
        check_finite("inverse logdet", &[ld])?;
        Ok((z, ld))
    }

    /// `(∂x/∂z) v`, forward mode.
    pub fn jvp(&self, z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_len("jvp point", z)?;
        self.check_len("jvp direction", v)?;
        let (x, _, _) = self.forward_taped(&Dual::seed(z, v));
        let out: Vec<f64> = x.iter().map(|d| d.eps).collect();
        check_finite("jvp", &out)?;
        Ok(out)
    }

    /// `((∂x/∂z)^T u, (∂x/∂θ)^T u)`.
    pub fn vjp(&self, z: &[f64], u: &[f64]) -> Result<(Vec<f64>, ParamGrad)> {
        self.check_len("vjp point", z)?;
        self.check_len("vjp cotangent", u)?;
        let (_, _, tape) = self.forward_taped(z);
        let mut grad = vec![0.0; self.param_count()];
        let dz = self.backward_forward(&tape, u, 0.0, Some(&mut grad));
        check_finite("vjp", &dz)?;
        check_finite("vjp parameters", &grad)?;
        Ok((dz, ParamGrad(grad)))
    }

    /// Parameter gradient of `forward(z).logdet`.
    pub fn grad_logdet_params(&self, z: &[f64]) -> Result<ParamGrad> {
        self.check_len("grad_logdet_params", z)?;
        let (_, _, tape) = self.forward_taped(z);
        let mut grad = vec![0.0; self.param_count()];
        let zeros = vec![0.0; self.dim];
        self.backward_forward(&tape, &zeros, 1.0, Some(&mut grad));
        check_finite("grad_logdet_params", &grad)?;
        Ok(ParamGrad(grad))
    }
}
