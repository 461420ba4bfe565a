//! Dense-algebra and brute-force oracles for the numerical kernels.

mod common;

use cmflow::evalkit::{fid_like, moments, ood_stump, prominent_dims, trace_sqrt_product, GaussianMoments};
use cmflow::linalg::{cg_solve, cholesky_logdet, symmetric_eigen, FnOperator};
use cmflow::metric::{half_logdet_exact, jacobian, metric_tensor, offdiag_l1, pairwise_abs_cos};
use cmflow::{Matrix, Rng};
use common::{gaussian, random_gf, to_na};

fn random_matrix(rng: &mut Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_vec(r, c, gaussian(rng, r * c)).unwrap()
}

fn random_spd(rng: &mut Rng, n: usize, ridge: f64) -> Matrix {
    let b = random_matrix(rng, n, n);
    let mut a = b.matmul(&b.transpose()).unwrap();
    for i in 0..n {
        a[(i, i)] += ridge;
    }
    a
}

fn random_psd(rng: &mut Rng, n: usize, rank: usize) -> Matrix {
    let b = random_matrix(rng, n, rank);
    b.matmul(&b.transpose()).unwrap()
}

#[test]
fn cholesky_logdet_matches_svd() {
    let mut rng = Rng::new(1);
    for n in 1..=8 {
        for _ in 0..10 {
            let a = random_spd(&mut rng, n, 1e-2);
            let svd = to_na(&a).svd(false, false);
            let expect: f64 = svd.singular_values.iter().map(|s| s.ln()).sum();
            let got = cholesky_logdet(&a).unwrap().logdet();
            assert!((got - expect).abs() < 1e-9 * (1.0 + expect.abs()), "n={n}: {got} vs {expect}");
        }
    }
}

#[test]
fn half_logdet_of_metric_matches_singular_values() {
    for seed in 0..10 {
        let (d, big_d) = (1 + (seed as usize % 4), 5);
        let gf = random_gf(d, big_d, seed, 0.3);
        let mut rng = Rng::new(seed + 100);
        let z = gaussian(&mut rng, d);
        let j = jacobian(&gf, &z).unwrap();
        let svd = to_na(&j).svd(false, false);
        let expect: f64 = svd.singular_values.iter().map(|s| s.ln()).sum();
        let got = half_logdet_exact(&metric_tensor(&j)).unwrap();
        assert!((got - expect).abs() < 1e-9, "seed {seed}: {got} vs {expect}");
    }
}

#[test]
fn symmetric_eigen_matches_nalgebra() {
    let mut rng = Rng::new(2);
    for n in 1..=7 {
        let a = random_spd(&mut rng, n, 0.0);
        let (vals, vecs) = symmetric_eigen(&a).unwrap();
        let mut expect: Vec<f64> = to_na(&a).symmetric_eigen().eigenvalues.iter().copied().collect();
        let mut got = vals.clone();
        expect.sort_by(f64::total_cmp);
        got.sort_by(f64::total_cmp);
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-9 * (1.0 + e.abs()));
        }
        // A v = λ v for every returned pair
        for (k, l) in vals.iter().enumerate() {
            let v = vecs.column(k);
            let av = a.matvec(&v).unwrap();
            for i in 0..n {
                assert!((av[i] - l * v[i]).abs() < 1e-8 * (1.0 + l.abs()));
            }
        }
    }
}

#[test]
fn metric_is_gram_of_fd_jacobian() {
    for seed in 0..5 {
        let gf = random_gf(3, 5, seed, 0.4);
        let z = gaussian(&mut Rng::new(seed), 3);
        let fd = common::fd_jacobian(&z, 1e-6, |zz| gf.embed(zz).unwrap());
        let g = metric_tensor(&jacobian(&gf, &z).unwrap());
        let g_fd = fd.transpose().matmul(&fd).unwrap();
        assert!(g.matrix().max_abs_diff(&g_fd) < 1e-6);
    }
}

#[test]
fn offdiag_and_cosine_brute_force() {
    let mut rng = Rng::new(3);
    for _ in 0..20 {
        let j = random_matrix(&mut rng, 6, 4);
        let g = j.transpose().matmul(&j).unwrap();
        let mut l1 = 0.0;
        let mut cos_sum = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                if a != b {
                    l1 += g[(a, b)].abs();
                    let ca = j.column(a);
                    let cb = j.column(b);
                    let dot: f64 = ca.iter().zip(&cb).map(|(x, y)| x * y).sum();
                    let na = ca.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let nb = cb.iter().map(|x| x * x).sum::<f64>().sqrt();
                    cos_sum += (dot / (na * nb)).abs();
                }
            }
        }
        assert!((offdiag_l1(&metric_tensor(&j)) - l1).abs() < 1e-10 * (1.0 + l1));
        let cos = pairwise_abs_cos(&j);
        let mut got = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                if a != b {
                    got += cos[(a, b)];
                }
            }
        }
        assert!((got - cos_sum).abs() < 1e-10);
        assert!((cmflow::metric::macs(&j) - cos_sum / 12.0).abs() < 1e-12);
    }
}

#[test]
fn cg_matches_dense_solve() {
    let mut rng = Rng::new(4);
    for n in [1, 2, 5, 10, 20] {
        let a = random_spd(&mut rng, n, 0.5);
        let b = gaussian(&mut rng, n);
        let sol = cg_solve(&a, &b, 1e-12, 10 * n).unwrap();
        assert!(sol.converged);
        let expect = to_na(&a).lu().solve(&nalgebra::DVector::from_column_slice(&b)).unwrap();
        for i in 0..n {
            assert!((sol.x[i] - expect[i]).abs() < 1e-8 * (1.0 + expect[i].abs()));
        }
    }
}

#[test]
fn cg_error_in_energy_norm_is_monotone() {
    let mut rng = Rng::new(5);
    for _ in 0..10 {
        let n = 12;
        let a = random_spd(&mut rng, n, 0.1);
        let b = gaussian(&mut rng, n);
        let exact = to_na(&a).lu().solve(&nalgebra::DVector::from_column_slice(&b)).unwrap();
        let mut last = f64::INFINITY;
        for k in 1..=n {
            let sol = cg_solve(&a, &b, 1e-300, k).unwrap();
            let e: Vec<f64> = (0..n).map(|i| sol.x[i] - exact[i]).collect();
            let ae = a.matvec(&e).unwrap();
            let energy: f64 = e.iter().zip(&ae).map(|(x, y)| x * y).sum();
            assert!(energy <= last * (1.0 + 1e-9) + 1e-20, "iteration {k}: {energy} > {last}");
            last = energy;
        }
    }
}

#[test]
fn cg_on_matrix_free_operator() {
    let mut rng = Rng::new(6);
    let j = random_matrix(&mut rng, 7, 4);
    let op = FnOperator::new(4, |v: &[f64]| j.tr_matvec(&j.matvec(v)?));
    let b = gaussian(&mut rng, 4);
    let sol = cg_solve(&op, &b, 1e-12, 50).unwrap();
    let g = j.transpose().matmul(&j).unwrap();
    let r = g.matvec(&sol.x).unwrap();
    for i in 0..4 {
        assert!((r[i] - b[i]).abs() < 1e-9);
    }
}

fn naive_trace_sqrt(a: &Matrix, b: &Matrix) -> f64 {
    // eigenvalues of the (non-symmetric) product are real and non-negative
    let p = to_na(a) * to_na(b);
    p.complex_eigenvalues().iter().map(|l| l.re.max(0.0).sqrt()).sum()
}

#[test]
fn trace_sqrt_symmetric_form_matches_naive_product() {
    let mut rng = Rng::new(7);
    for i in 0..100 {
        let n = 1 + i % 6;
        let a = if i % 3 == 0 { random_psd(&mut rng, n, n.div_ceil(2)) } else { random_spd(&mut rng, n, 0.1) };
        let b = random_spd(&mut rng, n, 0.05);
        let got = trace_sqrt_product(&a, &b).unwrap();
        let expect = naive_trace_sqrt(&a, &b);
        assert!((got - expect).abs() < 1e-6, "pair {i}: {got} vs {expect}");
    }
}

#[test]
fn fid_matches_closed_form_for_diagonal_gaussians() {
    let mut rng = Rng::new(8);
    for _ in 0..20 {
        let n = 4;
        let da: Vec<f64> = (0..n).map(|_| 0.1 + rng.uniform() * 3.0).collect();
        let db: Vec<f64> = (0..n).map(|_| 0.1 + rng.uniform() * 3.0).collect();
        let mu_a = gaussian(&mut rng, n);
        let mu_b = gaussian(&mut rng, n);
        let a = GaussianMoments { mu: mu_a.clone(), sigma: Matrix::from_diag(&da) };
        let b = GaussianMoments { mu: mu_b.clone(), sigma: Matrix::from_diag(&db) };
        let expect: f64 = (0..n)
            .map(|k| (mu_a[k] - mu_b[k]).powi(2) + (da[k].sqrt() - db[k].sqrt()).powi(2))
            .sum();
        assert!((fid_like(&a, &b).unwrap() - expect).abs() < 1e-10);
    }
}

#[test]
fn moments_match_nalgebra_covariance() {
    let mut rng = Rng::new(9);
    let xs: Vec<Vec<f64>> = (0..50).map(|_| gaussian(&mut rng, 3)).collect();
    let m = moments(&xs).unwrap();
    let data = nalgebra::DMatrix::from_fn(50, 3, |i, j| xs[i][j]);
    let mean = data.row_mean();
    let centered = nalgebra::DMatrix::from_fn(50, 3, |i, j| xs[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / 49.0;
    for i in 0..3 {
        assert!((m.mu[i] - mean[i]).abs() < 1e-12);
        for j in 0..3 {
            assert!((m.sigma[(i, j)] - cov[(i, j)]).abs() < 1e-12);
        }
    }
}

fn brute_stump(a: &[f64], b: &[f64]) -> f64 {
    let mut grid: Vec<f64> = a.iter().chain(b).copied().collect();
    let extra: Vec<f64> = grid.iter().flat_map(|v| [v - 1e-9, v + 1e-9]).collect();
    grid.extend(extra);
    grid.push(f64::INFINITY);
    grid.push(f64::NEG_INFINITY);
    grid.iter()
        .map(|&t| {
            let tpr = a.iter().filter(|v| **v >= t).count() as f64 / a.len() as f64;
            let tnr = b.iter().filter(|v| **v < t).count() as f64 / b.len() as f64;
            0.5 * (tpr + tnr)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn stump_matches_brute_force_scan() {
    let mut rng = Rng::new(10);
    for _ in 0..200 {
        let na = 1 + rng.below(15);
        let nb = 1 + rng.below(15);
        // coarse values force ties
        let a: Vec<f64> = (0..na).map(|_| (rng.normal() * 3.0 + 1.0).round()).collect();
        let b: Vec<f64> = (0..nb).map(|_| (rng.normal() * 3.0).round()).collect();
        let (t, acc) = ood_stump(&a, &b).unwrap();
        assert!((acc - brute_stump(&a, &b)).abs() < 1e-12);
        let tpr = a.iter().filter(|v| **v >= t).count() as f64 / na as f64;
        let tnr = b.iter().filter(|v| **v < t).count() as f64 / nb as f64;
        assert!((0.5 * (tpr + tnr) - acc).abs() < 1e-12);
    }
}

#[test]
fn prominent_dims_match_stable_sort() {
    let mut rng = Rng::new(11);
    for _ in 0..100 {
        let n = 1 + rng.below(10);
        let profile: Vec<f64> = (0..n).map(|_| (rng.normal() * 2.0).round()).collect();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&i, &j| profile[j].abs().total_cmp(&profile[i].abs()).then(i.cmp(&j)));
        for k in 0..=n {
            assert_eq!(prominent_dims(&profile, k), idx[..k].to_vec());
        }
    }
}
