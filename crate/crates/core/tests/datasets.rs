use std::f64::consts::PI;

use cmflow::datasets::{
    generate, moebius_area_bound, moebius_area_element, sample_fuzzy_line, sample_moebius_counted,
    sample_sphere, DatasetKind, DatasetSpec, MOEBIUS_HALF_WIDTH,
};
use cmflow::Rng;

const N: usize = 100_000;

#[test]
fn fuzzy_line_correlation() {
    let xs = sample_fuzzy_line(N, &mut Rng::new(1));
    let n = N as f64;
    let mean = |k: usize| xs.iter().map(|x| x[k]).sum::<f64>() / n;
    let (m0, m1) = (mean(0), mean(1));
    let cov = xs.iter().map(|x| (x[0] - m0) * (x[1] - m1)).sum::<f64>() / n;
    let var = |k: usize, m: f64| xs.iter().map(|x| (x[k] - m).powi(2)).sum::<f64>() / n;
    let corr = cov / (var(0, m0) * var(1, m1)).sqrt();
    // Var x1 = 25/12, Var eps = 1/12
    let analytic = 1.0 / (1.0f64 + 1.0 / 25.0).sqrt();
    assert!(corr > 0.97, "{corr}");
    assert!((corr - analytic).abs() < 2e-3, "{corr} vs {analytic}");
}

#[test]
fn sphere_mean_and_octants() {
    let xs = sample_sphere(N, &mut Rng::new(2));
    for k in 0..3 {
        let m = xs.iter().map(|x| x[k]).sum::<f64>() / N as f64;
        assert!(m.abs() < 0.02, "axis {k}: {m}");
    }
    let mut octants = [0usize; 8];
    for x in &xs {
        let o = (x[0] > 0.0) as usize | ((x[1] > 0.0) as usize) << 1 | ((x[2] > 0.0) as usize) << 2;
        octants[o] += 1;
    }
    let expect = N as f64 / 8.0;
    let bound = 3.0 * (N as f64).sqrt();
    for (o, c) in octants.iter().enumerate() {
        assert!((*c as f64 - expect).abs() <= bound, "octant {o}: {c}");
    }
}

#[test]
fn sphere_second_moments_are_rotation_invariant() {
    let xs = sample_sphere(N, &mut Rng::new(3));
    let (a, b) = (0.7f64, 1.1f64);
    // rotation about z then about x
    let rot = |x: &[f64]| {
        let (x0, x1, x2) = (a.cos() * x[0] - a.sin() * x[1], a.sin() * x[0] + a.cos() * x[1], x[2]);
        [x0, b.cos() * x1 - b.sin() * x2, b.sin() * x1 + b.cos() * x2]
    };
    let second = |pts: &mut dyn Iterator<Item = [f64; 3]>| {
        let mut m = [[0.0; 3]; 3];
        for p in pts {
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += p[i] * p[j] / N as f64;
                }
            }
        }
        m
    };
    let m0 = second(&mut xs.iter().map(|x| [x[0], x[1], x[2]]));
    let m1 = second(&mut xs.iter().map(|x| rot(x)));
    // E[x x^T] = I/3; each entry has sd well below 2e-3 at this n
    for i in 0..3 {
        for j in 0..3 {
            let e = if i == j { 1.0 / 3.0 } else { 0.0 };
            assert!((m0[i][j] - e).abs() < 6e-3);
            assert!((m1[i][j] - e).abs() < 6e-3);
        }
    }
}

fn moebius_grid(nu: usize, nv: usize) -> (Vec<f64>, f64) {
    // cumulative area over u on a midpoint grid
    let w = MOEBIUS_HALF_WIDTH;
    let (du, dv) = (2.0 * PI / nu as f64, 2.0 * w / nv as f64);
    let mut cum = Vec::with_capacity(nu + 1);
    cum.push(0.0);
    let mut total = 0.0;
    for i in 0..nu {
        let u = (i as f64 + 0.5) * du;
        let strip: f64 = (0..nv).map(|j| moebius_area_element(u, -w + (j as f64 + 0.5) * dv) * dv).sum();
        total += strip * du;
        cum.push(total);
    }
    (cum, total)
}

#[test]
fn moebius_acceptance_rate_matches_area() {
    let (pts, proposals) = sample_moebius_counted(N, &mut Rng::new(4));
    assert_eq!(pts.len(), N);
    let (_, area) = moebius_grid(2000, 400);
    let expect = area / (2.0 * PI * 2.0 * MOEBIUS_HALF_WIDTH * moebius_area_bound());
    let rate = N as f64 / proposals as f64;
    assert!((rate / expect - 1.0).abs() < 0.02, "{rate} vs {expect}");
}

#[test]
fn moebius_u_marginal_follows_area_weighting() {
    let (pts, _) = sample_moebius_counted(N, &mut Rng::new(5));
    let mut us: Vec<f64> = pts.iter().map(|p| p[1].atan2(p[0]).rem_euclid(2.0 * PI)).collect();
    us.sort_by(f64::total_cmp);
    let nu = 4000;
    let (cum, total) = moebius_grid(nu, 200);
    let cdf = |u: f64| {
        let t = u / (2.0 * PI) * nu as f64;
        let i = (t.floor() as usize).min(nu - 1);
        let frac = t - i as f64;
        (cum[i] + frac * (cum[i + 1] - cum[i])) / total
    };
    let n = us.len() as f64;
    let ks = us
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let f = cdf(u);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.01, "KS = {ks}");
}

#[test]
fn generated_splits_are_deterministic() {
    for kind in [DatasetKind::FuzzyLine, DatasetKind::Sphere, DatasetKind::Moebius] {
        let spec = DatasetSpec::synthetic(kind, 500, 9);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.valid, b.valid);
        assert_eq!(a.test, b.test);
        assert_eq!(a.train.len() + a.valid.len() + a.test.len(), 500);
        assert!(a.train.iter().flatten().all(|v| v.is_finite()));
        let other = generate(&DatasetSpec::synthetic(kind, 500, 10)).unwrap();
        assert_ne!(a.train, other.train);
    }
}
