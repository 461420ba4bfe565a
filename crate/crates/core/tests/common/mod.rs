#![allow(dead_code)]

use cmflow::flownet::DEFAULT_SCALE_CLAMP;
use cmflow::{FlowModule, InjectiveFlow, Matrix, Rng};

pub fn random_flow(dim: usize, couplings: usize, hidden: &[usize], seed: u64, scale: f64) -> FlowModule {
    let mut rng = Rng::new(seed);
    let mut f = FlowModule::real_nvp(dim, couplings, hidden, DEFAULT_SCALE_CLAMP, &mut rng).unwrap();
    f.randomize_params(&mut rng, scale);
    f
}

/// Injective flow with non-trivial h and f.
pub fn random_gf(d: usize, big_d: usize, seed: u64, scale: f64) -> InjectiveFlow {
    let hl = if d >= 2 { 2 } else { 0 };
    let h = random_flow(d, hl, &[5], seed, scale);
    let f = random_flow(big_d, 3, &[6], seed.wrapping_add(1000), scale);
    InjectiveFlow::new(h, f).unwrap()
}

pub fn gaussian(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

/// Central difference of a scalar function.
pub fn fd_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let fp = f(&p);
            p[i] = orig - h;
            let fm = f(&p);
            p[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Jacobian (`m x n`) of a vector function.
pub fn fd_jacobian(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Matrix {
    let mut p = x.to_vec();
    let mut cols = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = p[i];
        p[i] = orig + h;
        let fp = f(&p);
        p[i] = orig - h;
        let fm = f(&p);
        p[i] = orig;
        cols.push(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect::<Vec<_>>());
    }
    Matrix::from_columns(&cols).unwrap()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / nb.max(1e-12)
}

/// `log |det A|` through LU.
pub fn log_abs_det(a: &Matrix) -> f64 {
    let m = nalgebra::DMatrix::from_row_slice(a.rows(), a.cols(), a.as_slice());
    m.lu().determinant().abs().ln()
}

pub fn to_na(a: &Matrix) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_row_slice(a.rows(), a.cols(), a.as_slice())
}
