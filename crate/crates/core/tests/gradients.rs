//! Analytic derivatives against central finite differences.

mod common;

use cmflow::linalg::dot;
use cmflow::metric::{
    half_logdet_exact, half_logdet_grad_exact, half_logdet_grad_stochastic, jacobian, metric_at,
    offdiag_l1, offdiag_l1_grad, EstimatorConfig,
};
use cmflow::training::{
    evaluate, loss, sample_objective_grad, sample_terms, SampleTerms, TermWeights, TrainConfig,
};
use cmflow::{InjectiveFlow, Rng};
use common::*;

fn with_params(gf: &InjectiveFlow, p: &[f64]) -> InjectiveFlow {
    let mut g = gf.clone();
    g.set_params(p).unwrap();
    g
}

#[test]
fn flow_logdet_matches_fd_jacobian() {
    for (dim, seed) in [(2, 1), (3, 2), (5, 3)] {
        let flow = random_flow(dim, 4, &[8], seed, 0.5);
        let z = gaussian(&mut Rng::new(seed + 10), dim);
        let (_, logdet) = flow.forward(&z).unwrap();
        let j = fd_jacobian(&z, 1e-6, |p| flow.forward(p).unwrap().0);
        assert!((logdet - log_abs_det(&j)).abs() < 1e-6, "dim {dim}");
        let (x, _) = flow.forward(&z).unwrap();
        let (_, logdet_inv) = flow.inverse(&x).unwrap();
        let ji = fd_jacobian(&x, 1e-6, |p| flow.inverse(p).unwrap().0);
        assert!((logdet_inv - log_abs_det(&ji)).abs() < 1e-6);
    }
}

#[test]
fn flow_jvp_and_vjp_match_fd() {
    let flow = random_flow(4, 3, &[7, 7], 21, 0.5);
    let mut rng = Rng::new(22);
    let z = gaussian(&mut rng, 4);
    let j = fd_jacobian(&z, 1e-6, |p| flow.forward(p).unwrap().0);
    for i in 0..4 {
        let mut e = vec![0.0; 4];
        e[i] = 1.0;
        let col = flow.jvp(&z, &e).unwrap();
        assert!(rel_err(&col, &j.column(i)) < 1e-6);
    }
    let u = gaussian(&mut rng, 4);
    let (dz, dp) = flow.vjp(&z, &u).unwrap();
    assert!(rel_err(&dz, &j.tr_matvec(&u).unwrap()) < 1e-6);
    let fd = fd_grad(flow.params(), 1e-6, |p| {
        let mut f = flow.clone();
        f.params_mut().copy_from_slice(p);
        dot(&u, &f.forward(&z).unwrap().0)
    });
    assert!(rel_err(dp.as_slice(), &fd) < 1e-6);
}

#[test]
fn flow_logdet_param_gradient_matches_fd() {
    let flow = random_flow(3, 3, &[6], 31, 0.5);
    let z = gaussian(&mut Rng::new(32), 3);
    let g = flow.grad_logdet_params(&z).unwrap();
    let fd = fd_grad(flow.params(), 1e-6, |p| {
        let mut f = flow.clone();
        f.params_mut().copy_from_slice(p);
        f.forward(&z).unwrap().1
    });
    assert!(rel_err(g.as_slice(), &fd) < 1e-6);
}

#[test]
fn rect_jacobian_matches_fd() {
    for (d, big_d, seed) in [(1, 3, 40), (2, 3, 41), (3, 6, 42)] {
        let gf = random_gf(d, big_d, seed, 0.4);
        let z = gaussian(&mut Rng::new(seed + 1), d);
        let j = jacobian(&gf, &z).unwrap();
        let fd = fd_jacobian(&z, 1e-6, |p| gf.embed(p).unwrap());
        assert!(j.max_abs_diff(&fd) < 1e-5, "d={d} D={big_d}");
    }
}

#[test]
fn rect_vjp_adjoint_and_params() {
    let gf = random_gf(2, 4, 50, 0.4);
    let mut rng = Rng::new(51);
    let z = gaussian(&mut rng, 2);
    let v = gaussian(&mut rng, 2);
    let u = gaussian(&mut rng, 4);
    let jv = gf.rect_jvp(&z, &v).unwrap();
    let (jtu, dp) = gf.rect_vjp(&z, &u).unwrap();
    assert!((dot(&u, &jv) - dot(&jtu, &v)).abs() < 1e-12);
    let fd = fd_grad(&gf.params(), 1e-6, |p| dot(&u, &with_params(&gf, p).embed(&z).unwrap()));
    assert!(rel_err(dp.as_slice(), &fd) < 1e-6);
}

#[test]
fn offdiag_gradient_matches_fd() {
    let gf = random_gf(2, 3, 60, 0.4);
    assert!(gf.param_count() <= 300, "{}", gf.param_count());
    let z = gaussian(&mut Rng::new(61), 2);
    let g = offdiag_l1_grad(&gf, &z).unwrap();
    let fd = fd_grad(&gf.params(), 1e-5, |p| offdiag_l1(&metric_at(&with_params(&gf, p), &z).unwrap()));
    let e = rel_err(g.as_slice(), &fd);
    assert!(e < 1e-3, "relative error {e}");
}

#[test]
fn offdiag_gradient_vanishes_for_identity_and_one_dim() {
    let gf = InjectiveFlow::new(
        random_flow(2, 2, &[4], 62, 0.0),
        random_flow(3, 2, &[4], 63, 0.0),
    )
    .unwrap();
    let g = offdiag_l1_grad(&gf, &[0.3, -0.4]).unwrap();
    assert!(g.as_slice().iter().all(|v| *v == 0.0));
    let gf1 = random_gf(1, 3, 64, 0.4);
    let g1 = offdiag_l1_grad(&gf1, &[0.8]).unwrap();
    assert!(g1.as_slice().iter().all(|v| *v == 0.0));
}

#[test]
fn half_logdet_gradient_matches_fd() {
    for (d, big_d, seed) in [(2, 3, 70), (3, 5, 71)] {
        let gf = random_gf(d, big_d, seed, 0.4);
        let z = gaussian(&mut Rng::new(seed + 1), d);
        let g = half_logdet_grad_exact(&gf, &z).unwrap();
        let fd = fd_grad(&gf.params(), 1e-5, |p| {
            half_logdet_exact(&metric_at(&with_params(&gf, p), &z).unwrap()).unwrap()
        });
        let e = rel_err(g.as_slice(), &fd);
        assert!(e < 1e-4, "d={d}: relative error {e}");
    }
}

#[test]
fn stochastic_estimator_at_identity_init() {
    let gf = InjectiveFlow::new(
        random_flow(2, 2, &[4], 80, 0.0),
        random_flow(4, 2, &[4], 81, 0.0),
    )
    .unwrap();
    let z = [0.5, -0.2];
    let exact = half_logdet_grad_exact(&gf, &z).unwrap();
    let cfg = EstimatorConfig::stochastic(1, 1e-3);
    let est = half_logdet_grad_stochastic(&gf, &z, &cfg, &mut Rng::new(3)).unwrap();
    // G = I: CG is exact after one iteration
    assert_eq!(est.cg.solves, 1);
    assert_eq!(est.cg.total_iters, 1);
    assert_eq!(est.cg.non_converged, 0);
    let many = EstimatorConfig::stochastic(20_000, 1e-3);
    let avg = half_logdet_grad_stochastic(&gf, &z, &many, &mut Rng::new(4)).unwrap();
    assert_eq!(avg.cg.total_iters, 20_000);
    let e = rel_err(avg.grad.as_slice(), exact.as_slice());
    assert!(e < 0.05, "relative error {e}");
}

#[test]
fn pad_linearity_identity() {
    // ½logdet of the full chart = logdet_h + ½logdet of f's metric on the padded image
    let gf = random_gf(3, 5, 90, 0.4);
    let z = gaussian(&mut Rng::new(91), 3);
    let full = half_logdet_exact(&metric_at(&gf, &z).unwrap()).unwrap();
    let (u, ldh) = gf.h().forward(&z).unwrap();
    let mut upad = u.clone();
    upad.resize(5, 0.0);
    let jf = fd_jacobian(&upad, 1e-6, |p| gf.f().forward(p).unwrap().0);
    let jf_cols = (0..3).map(|i| jf.column(i)).collect::<Vec<_>>();
    let jf_slab = cmflow::Matrix::from_columns(&jf_cols).unwrap();
    let mut jac_f = cmflow::Matrix::zeros(5, 3);
    // exact slab through JVPs for the identity check
    for i in 0..3 {
        let mut e = vec![0.0; 5];
        e[i] = 1.0;
        for (r, v) in gf.f().jvp(&upad, &e).unwrap().into_iter().enumerate() {
            jac_f[(r, i)] = v;
        }
    }
    assert!(jac_f.max_abs_diff(&jf_slab) < 1e-6);
    let half_f = half_logdet_exact(&cmflow::metric::metric_tensor(&jac_f)).unwrap();
    assert!((full - (ldh + half_f)).abs() < 1e-8, "{full} vs {}", ldh + half_f);
    let terms = sample_terms(&gf, &gf.embed(&z).unwrap()).unwrap();
    assert!((terms.half_logdet_jtj - half_f).abs() < 1e-8);
}

fn total(t: &SampleTerms, w: &TermWeights) -> f64 {
    w.log_prior * t.log_prior
        + w.logdet_h * t.logdet_h
        + w.half_logdet_jtj * t.half_logdet_jtj
        + w.recon * t.recon
        + w.offdiag_l1 * t.offdiag_l1
}

#[test]
fn per_term_gradients_match_fd_off_manifold() {
    let gf = random_gf(2, 3, 100, 0.4);
    let x = vec![0.4, -0.7, 0.9];
    let unit = |k: usize| {
        let mut w = TermWeights::default();
        match k {
            0 => w.log_prior = 1.0,
            1 => w.logdet_h = 1.0,
            2 => w.half_logdet_jtj = 1.0,
            3 => w.recon = 1.0,
            _ => w.offdiag_l1 = 1.0,
        }
        w
    };
    for k in 0..5 {
        let w = unit(k);
        let (_, g, _) =
            sample_objective_grad(&gf, &x, &w, &EstimatorConfig::default(), &mut Rng::new(0)).unwrap();
        let fd = fd_grad(&gf.params(), 1e-5, |p| total(&sample_terms(&with_params(&gf, p), &x).unwrap(), &w));
        let e = rel_err(g.as_slice(), &fd);
        let tol = if k == 4 { 1e-3 } else { 1e-4 };
        assert!(e < tol, "term {k}: relative error {e}");
    }
}

#[test]
fn full_objective_gradient_matches_fd() {
    let gf = random_gf(2, 3, 110, 0.4);
    let mut rng = Rng::new(111);
    let batch: Vec<Vec<f64>> = (0..6).map(|_| gaussian(&mut rng, 3)).collect();
    let cfg = TrainConfig {
        beta: 1.5,
        gamma: 0.7,
        ..TrainConfig::default()
    };
    let aw = 0.8;
    let out = loss(&gf, &batch, &cfg, &mut Rng::new(1), aw).unwrap();
    let fd = fd_grad(&gf.params(), 1e-5, |p| {
        evaluate(&with_params(&gf, p), &batch, cfg.beta, cfg.gamma, aw)
            .unwrap()
            .total_objective
    });
    let e = rel_err(out.grad.as_slice(), &fd);
    assert!(e < 1e-4, "relative error {e}");
    let ev = evaluate(&gf, &batch, cfg.beta, cfg.gamma, aw).unwrap();
    assert_eq!(ev, out.breakdown);
}

#[test]
fn square_case_reduces_to_flow_likelihood() {
    let gf = random_gf(3, 3, 120, 0.4);
    let mut rng = Rng::new(121);
    let cfg = TrainConfig {
        beta: 3.0,
        gamma: 0.0,
        ..TrainConfig::default()
    };
    let batch: Vec<Vec<f64>> = (0..5).map(|_| gaussian(&mut rng, 3)).collect();
    let out = evaluate(&gf, &batch, cfg.beta, cfg.gamma, 1.0).unwrap();
    assert!(out.recon < 1e-20);
    // change of variables through the full square map
    let mut nf = 0.0;
    for x in &batch {
        let z = gf.project(x).unwrap();
        let (_, ldh) = gf.h().forward(&z).unwrap();
        let mut u = gf.h().forward(&z).unwrap().0;
        u.resize(3, 0.0);
        let (_, ldf) = gf.f().forward(&u).unwrap();
        nf += gf.prior().log_density(&z) - ldh - ldf;
    }
    nf /= batch.len() as f64;
    assert!((out.total_objective - nf).abs() < 1e-10);
}
