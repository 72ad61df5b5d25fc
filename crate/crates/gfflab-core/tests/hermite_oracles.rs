use gfflab_core::gaussian::ExactSampler;
use gfflab_core::hermite::*;
use gfflab_core::numeric::{bvn_cdf, gaussian_density, norm_cdf, norm_pdf};
use gfflab_core::rng::stream;
use gfflab_core::stats::Estimate;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng as _;

fn random_spd(n: usize, rng: &mut gfflab_core::rng::Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
    &a * a.transpose() + DMatrix::identity(n, n) * 0.3
}

#[test]
fn univariate_bound_on_grid() {
    for n in 0..=30u32 {
        for k in -50..=50 {
            let y = k as f64 / 10.0;
            assert!(hermite_1d(n, y).abs() <= hermite_1d_bound(n, y) * (1.0 + 1e-12), "n {n} y {y}");
        }
    }
}

#[test]
fn mixed_hermite_matches_density_differences() {
    let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
    let h = hermite_multivariate(&cov, &[1, 1]).unwrap();
    let x = [0.0, 0.0];
    let e = 1e-3;
    let phi = |a: f64, b: f64| gaussian_density(&cov, &[a, b]).unwrap();
    let mixed = (phi(e, e) - phi(e, -e) - phi(-e, e) + phi(-e, -e)) / (4.0 * e * e);
    assert!((h.eval(&x) - mixed / phi(0.0, 0.0)).abs() < 1e-6);
    // Precision entry at the origin: H^{(1,1)}(0) = -A_12.
    assert!((h.eval(&x) - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn pair_wick_product() {
    let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.7, 0.7, 1.0]);
    let p = wick_polynomial(&cov, &[0, 1]).unwrap();
    assert_eq!(p.coeff(&[1, 1]), 1.0);
    assert_eq!(p.coeff(&[0, 0]), -0.7);
    assert_eq!(p.terms().count(), 2);
}

#[test]
fn moments_of_wick_pairs() {
    let r = 0.3;
    let cov = DMatrix::from_row_slice(4, 4, &[1.0, 0.2, r, r, 0.2, 1.0, r, r, r, r, 1.0, -0.1, r, r, -0.1, 1.0]);
    assert!((wick_moment(&cov, &[vec![0, 1], vec![2, 3]]) - 2.0 * r * r).abs() < 1e-15);
    let one = DMatrix::from_element(1, 1, 1.0);
    assert_eq!(wick_moment(&one, &[vec![0, 0], vec![0, 0]]), 2.0);
}

#[test]
fn diagram_moment_matches_monte_carlo() {
    let mut rng = stream(21, 0, 0);
    let cov = random_spd(4, &mut rng) * 0.5;
    let rows = vec![vec![0, 1], vec![1, 2], vec![2, 3], vec![3, 0]];
    let exact = wick_moment(&cov, &rows);
    let polys: Vec<Poly> = rows.iter().map(|r| wick_polynomial(&cov, r).unwrap()).collect();
    let s = ExactSampler::from_matrix(cov.clone()).unwrap();
    let xs: Vec<f64> = (0..1_000_000)
        .map(|_| {
            let x = s.sample(&mut rng);
            polys.iter().map(|p| p.eval(&x)).product()
        })
        .collect();
    let e = Estimate::from_samples(&xs);
    assert!((e.value - exact).abs() < 4.0 * e.stderr, "{e:?} vs {exact}");
}

#[test]
fn different_degrees_are_orthogonal() {
    let mut rng = stream(5, 0, 0);
    let cov = random_spd(3, &mut rng);
    for (a, b) in [(vec![0], vec![1, 2, 0]), (vec![0, 1], vec![2, 2, 1, 0]), (vec![1, 1, 1], vec![0])] {
        let v = wick_moment(&cov, &[a.clone(), b.clone()]);
        let via_poly = wick_polynomial(&cov, &a)
            .unwrap()
            .mul(&wick_polynomial(&cov, &b).unwrap())
            .gaussian_expectation(&[0.0; 3], &cov);
        assert_eq!(v, 0.0);
        assert!(via_poly.abs() < 1e-12, "{a:?} {b:?}: {via_poly}");
    }
}

#[test]
fn multivariate_bound_has_no_violations() {
    let mut rng = stream(77, 0, 0);
    let mut checked = 0;
    while checked < 10_000 {
        let k = 1 + (rng.random::<u32>() % 3) as usize;
        let cov = random_spd(k, &mut rng);
        let lmin = cov.clone().symmetric_eigenvalues().min();
        let alpha: Vec<u32> = (0..k).map(|_| rng.random::<u32>() % 4).collect();
        let p: u32 = alpha.iter().sum();
        if p > 6 {
            continue;
        }
        let x: Vec<f64> = (0..k).map(|_| 6.0 * (rng.random::<f64>() - 0.5)).collect();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let h = hermite_multivariate(&cov, &alpha).unwrap().eval(&x);
        assert!(h.abs() <= hermite_bound(k, p, lmin, norm), "cov {cov} alpha {alpha:?} x {x:?}");
        checked += 1;
    }
}

#[test]
fn conditional_moment_without_free_indices() {
    // The reduction needs X_I and Y_J uncorrelated; otherwise the joint
    // Hermite polynomial still depends on Y_J.
    let mut rng = stream(8, 0, 0);
    let mut cov = random_spd(3, &mut rng);
    for i in 0..2 {
        cov[(i, 2)] = 0.0;
        cov[(2, i)] = 0.0;
    }
    let cov_i = cov.view((0, 0), (2, 2)).into_owned();
    let x = [0.3, -0.8];
    let v = conditional_hermite_moment(&cov, 2, &[1, 2], &[0], &[2, 0], &[0], &x).unwrap();
    let a = hermite_multivariate(&cov_i, &[1, 2]).unwrap().eval(&x);
    let b = hermite_multivariate(&cov_i, &[2, 0]).unwrap().eval(&x);
    assert!((v - a * b).abs() < 1e-10 * (1.0 + (a * b).abs()));
}

#[test]
fn conditional_moment_diagonal_reduction() {
    let s = [1.5, 0.7, 2.0];
    let cov = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&s));
    let x = [0.4];
    let h = |n: u32, v: f64, var: f64| var.powf(-(n as f64) / 2.0) * hermite_1d(n, v / var.sqrt());
    let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
    let v = conditional_hermite_moment(&cov, 1, &[2], &[1, 2], &[1], &[1, 2], &x).unwrap();
    let expect = h(2, x[0], s[0]) * h(1, x[0], s[0]) * fact(1) / s[1] * fact(2) / (s[2] * s[2]);
    assert!((v - expect).abs() < 1e-12, "{v} vs {expect}");
}

#[test]
fn conditional_moment_matches_conditioned_sampling() {
    let mut rng = stream(31, 0, 0);
    let cov = random_spd(3, &mut rng);
    let x = [0.5];
    let (ai, aj, ai2, aj2) = ([1u32], [1u32, 0], [0u32], [1u32, 1]);
    let exact = conditional_hermite_moment(&cov, 1, &ai, &aj, &ai2, &aj2, &x).unwrap();
    let h1 = hermite_multivariate(&cov, &[ai[0], aj[0], aj[1]]).unwrap();
    let h2 = hermite_multivariate(&cov, &[ai2[0], aj2[0], aj2[1]]).unwrap();
    let cond = gfflab_core::gaussian::ConditionalGaussian::new(&cov, &[0]).unwrap();
    let xs: Vec<f64> = (0..1_000_000)
        .map(|_| {
            let v = cond.sample(&x, &mut rng);
            h1.eval(&v) * h2.eval(&v)
        })
        .collect();
    let e = Estimate::from_samples(&xs);
    assert!((e.value - exact).abs() < 4.0 * e.stderr, "{e:?} vs {exact}");
}

#[test]
fn projection_of_linear_and_quadratic_functionals() {
    let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
    let mut rng = stream(3, 0, 0);
    let lin = |x: &[f64]| x[0];
    for m in 1..=3 {
        let q = chaos_project(&cov, ChaosInput::BlackBox(&lin), m, 200_000, &mut rng).unwrap();
        let expect = if m == 1 { 1.0 } else { 0.0 };
        assert!((q.variance - expect).abs() < 0.02, "m {m}: {}", q.variance);
    }
    let h2 = |x: &[f64]| x[0] * x[0] - 1.0;
    let smooth = |a: &[usize]| match a {
        [0, 0] => 2.0,
        _ => 0.0,
    };
    let q = chaos_project(&cov, ChaosInput::Smooth(&smooth), 2, 0, &mut rng).unwrap();
    assert!((q.variance - 2.0).abs() < 1e-12);
    let x = [0.7, -0.2];
    assert!((q.eval(&cov, &x).unwrap() - h2(&x)).abs() < 1e-12);
    assert!(q.condition_number.is_none());
}

/// Expected derivatives of `1{X > a, Y > b}` for unit variances, correlation `r`.
fn quadrant_derivative(a: f64, b: f64, r: f64, idx: &[usize]) -> f64 {
    let s = (1.0 - r * r).sqrt();
    let tail = |u: f64| 1.0 - norm_cdf(u);
    let cov = DMatrix::from_row_slice(2, 2, &[1.0, r, r, 1.0]);
    // E[∂^α 1{X > ν}] = (-1)^{|α|} ∂^α_ν P[X > ν].
    match idx {
        [0] => norm_pdf(a) * tail((b - r * a) / s),
        [1] => norm_pdf(b) * tail((a - r * b) / s),
        [0, 1] => gaussian_density(&cov, &[a, b]).unwrap(),
        [0, 0] => {
            let u = (b - r * a) / s;
            a * norm_pdf(a) * tail(u) - r / s * norm_pdf(a) * norm_pdf(u)
        }
        [1, 1] => {
            let u = (a - r * b) / s;
            b * norm_pdf(b) * tail(u) - r / s * norm_pdf(b) * norm_pdf(u)
        }
        _ => unreachable!(),
    }
}

#[test]
fn quadrant_indicator_smooth_and_regression_paths_agree() {
    let (a, b, r) = (0.3, -0.4, 0.5);
    let cov = DMatrix::from_row_slice(2, 2, &[1.0, r, r, 1.0]);
    let mut rng = stream(12, 0, 0);
    let phi = |x: &[f64]| if x[0] > a && x[1] > b { 1.0 } else { 0.0 };
    let d = |idx: &[usize]| quadrant_derivative(a, b, r, idx);
    for m in 1..=2 {
        let smooth = chaos_project(&cov, ChaosInput::Smooth(&d), m, 0, &mut rng).unwrap();
        let reg = chaos_project(&cov, ChaosInput::BlackBox(&phi), m, 400_000, &mut rng).unwrap();
        for (c1, c2) in smooth.coefficients.iter().zip(&reg.coefficients) {
            assert!((c1 - c2).abs() < 0.01, "m {m}: {:?} vs {:?}", smooth.coefficients, reg.coefficients);
        }
    }
    // Mean of the indicator agrees with the orthant probability.
    let p = bvn_cdf(-a, -b, r);
    let xs: Vec<f64> = (0..100_000)
        .map(|_| {
            let z0: f64 = rng.sample(rand_distr::StandardNormal);
            let z1: f64 = rng.sample(rand_distr::StandardNormal);
            phi(&[z0, r * z0 + (1.0 - r * r).sqrt() * z1])
        })
        .collect();
    let e = Estimate::from_samples(&xs);
    assert!((e.value - p).abs() < 4.0 * e.stderr);
}

proptest! {
    #[test]
    fn square_diagrams_count_factorial(k in 1usize..6) {
        let n = enumerate_diagrams(&[k, k]).len();
        prop_assert_eq!(n, (1..=k).product::<usize>());
    }

    #[test]
    fn wick_products_are_centred(seed in 0u64..1000, m in 1usize..5) {
        let mut rng = stream(seed, 0, 0);
        let cov = random_spd(3, &mut rng);
        let idx: Vec<usize> = (0..m).map(|_| (rng.random::<u32>() % 3) as usize).collect();
        let e = wick_polynomial(&cov, &idx).unwrap().gaussian_expectation(&[0.0; 3], &cov);
        prop_assert!(e.abs() < 1e-10);
    }
}
