use gfflab_core::experiments::arm::depinning_instance;
use gfflab_core::experiments::hermite2::s0;
use gfflab_core::experiments::summary::standardize;
use gfflab_core::experiments::*;
use gfflab_core::rng::{stream, with_workers};
use gfflab_core::stats::ks_normal;
use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::StandardNormal;

fn small(levels: Vec<f64>, radii: Vec<usize>, replicates: usize) -> ExperimentConfig {
    ExperimentConfig { levels, radii, replicates, batches: 5, seed: 17, ..Default::default() }
}

#[test]
fn constant_input_has_zero_variance() {
    let s = summarize(&[2.5; 40], 4).unwrap();
    assert_eq!(s.variance, 0.0);
    assert_eq!(s.mean, 2.5);
    assert!(summarize(&[1.0], 2).is_err());
    assert!(summarize(&[], 2).is_err());
}

#[test]
fn symmetrised_pairs_have_zero_skew() {
    let mut rng = stream(3, 0, 0);
    let xs: Vec<f64> = (0..500)
        .flat_map(|_| {
            let x: f64 = rng.random_range(-3.0..5.0);
            [x, -x]
        })
        .collect();
    assert_eq!(summarize(&xs, 10).unwrap().skewness, 0.0);
}

#[test]
fn normal_sample_has_normal_kurtosis() {
    let mut rng = stream(4, 0, 0);
    let xs: Vec<f64> = (0..1_000_000).map(|_| rng.sample(StandardNormal)).collect();
    let s = summarize(&xs, 50).unwrap();
    assert!((s.excess_kurtosis).abs() < 0.02, "{s:?}");
    assert!(s.ks_normal.p_value > 0.01);
    // Batch-mean errors track the normal-theory values.
    assert!((s.mean_se / 1e-3 - 1.0).abs() < 0.5);
    assert!((s.excess_kurtosis_se / (24.0f64 / 1e6).sqrt() - 1.0).abs() < 0.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn shape_is_affine_invariant(xs in prop::collection::vec(-10.0f64..10.0, 8..60), a in 0.5f64..4.0, b in -5.0f64..5.0) {
        let s = summarize(&xs, 2).unwrap();
        let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        let t = summarize(&ys, 2).unwrap();
        prop_assume!(s.variance > 1e-6);
        prop_assert!((s.skewness - t.skewness).abs() < 1e-8);
        prop_assert!((s.excess_kurtosis - t.excess_kurtosis).abs() < 1e-8);
        prop_assert!((t.variance / s.variance - a * a).abs() < 1e-8 * a * a);
    }

    #[test]
    fn standardised_values_are_centred(xs in prop::collection::vec(-10.0f64..10.0, 3..60)) {
        let z = standardize(&xs);
        let m = z.iter().sum::<f64>() / z.len() as f64;
        prop_assert!(m.abs() < 1e-9);
    }
}

#[test]
fn config_round_trips_and_validates() {
    let cfg = ExperimentConfig::default();
    let text = serde_json::to_string(&cfg).unwrap();
    let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(cfg, back);
    let partial: ExperimentConfig = serde_json::from_str(r#"{"levels": [1.5], "arm": {"window": 10}}"#).unwrap();
    assert_eq!(partial.arm.window, 10);
    assert_eq!(partial.arm.torus_side, 64);
    assert!(serde_json::from_str::<ExperimentConfig>(r#"{"levls": [1.5]}"#).is_err());
    assert!(ExperimentConfig { radii: vec![], ..cfg.clone() }.validate().is_err());
    assert!(ExperimentConfig { replicates: 1, ..cfg.clone() }.validate().is_err());
    assert!(ExperimentConfig { dim: 2, ..cfg }.validate().is_err());
}

#[test]
fn sinc_transfer_function() {
    assert_eq!(s0(&[0.0, 0.0, 0.0]), 1.0);
    let p = std::f64::consts::PI;
    assert!(s0(&[p, 0.3, 0.0]).abs() < 1e-15);
    assert!((s0(&[0.5]) - 0.5f64.sin() / 0.5).abs() < 1e-15);
}

#[test]
fn hermite_reference_rejects_bad_parameters() {
    assert!(HermiteReference::new(2, 3, 1.6, 8, 4.0, 100).is_err());
    assert!(HermiteReference::new(3, 3, 0.5, 8, 4.0, 100).is_err());
    let coarse = HermiteReference::new(2, 3, 1.0, 2, 4.0, 100).unwrap_err();
    assert!(coarse.is_numerical());
    assert!(HermiteReference::new(1, 3, 2.5, 8, 4.0, 100).is_ok());
}

#[test]
fn hermite_reference_is_normalised_and_skewed() {
    let h = HermiteReference::new(2, 3, 1.0, 8, 3.0, 200).unwrap();
    assert!(h.skewness > 0.3, "{h:?}");
    let xs = h.samples(200_000, 5, 1);
    let s = summarize(&xs, 20).unwrap();
    assert!((s.variance - 1.0).abs() < 0.03, "{s:?}");
    assert!(s.mean.abs() < 0.01);
    assert!((s.skewness - h.skewness).abs() < 0.15, "{} vs {}", s.skewness, h.skewness);
    assert!(ks_normal(&xs[..100_000]).1 < 1e-6);
    let m1 = HermiteReference::new(1, 3, 1.0, 8, 3.0, 200).unwrap().samples(50_000, 5, 2);
    assert!(ks_normal(&m1).1 > 0.01);
}

#[test]
fn hermite_samples_do_not_depend_on_workers() {
    let h = HermiteReference::new(2, 3, 1.0, 6, 3.0, 50).unwrap();
    let a = with_workers(1, || h.samples(10_000, 8, 3));
    let b = with_workers(3, || h.samples(10_000, 8, 3));
    assert_eq!(a, b);
}

#[test]
fn grid_table_reports_each_grid() {
    let rows = grid_convergence(2, 3, 1.0, &[(6, 3.0), (8, 3.0)]).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.raw_variance > 0.0 && r.skewness > 0.0));
    assert!((rows[1].spacing - 0.75).abs() < 1e-12);
}

#[test]
fn density_curve_is_consistent() {
    let cfg = small(vec![-1.0, 0.0, 1.0], vec![4], 30);
    let c = run_density_curve(&cfg).unwrap();
    assert_eq!(c.rows.len(), 3);
    for r in &c.rows {
        assert!(r.mu_count > 0.0 && r.mu_count < 1.0);
        assert!(r.gap.abs() < 4.0 * r.gap_se + 1e-12, "{r:?}");
        // Components cut by the window edge are dropped from the window count.
        assert!(r.mu_window < r.mu_count);
        assert_eq!(r.seed, 17);
        assert!(r.sampler.starts_with("torus"));
    }
    assert_eq!(c.symmetry.len(), 1);
    let s = &c.symmetry[0];
    assert!(s.difference.abs() < 4.0 * s.stderr);
}

#[test]
fn exact_sampler_density_runs() {
    let cfg = ExperimentConfig { sampler: SamplerKind::Exact, ..small(vec![0.5], vec![3], 20) };
    let c = run_density_curve(&cfg).unwrap();
    assert_eq!(c.rows[0].sampler, "exact");
    assert!(c.rows[0].mu_count > 0.0);
}

#[test]
fn density_slope_is_negative_at_high_level() {
    let mut cfg = small(vec![2.0], vec![4], 60);
    cfg.density.fd_step = 0.2;
    let s = run_density_slope(&cfg).unwrap();
    assert!(s[0].slope < -3.0 * s[0].stderr, "{s:?}");
}

#[test]
fn variance_scaling_needs_two_radii() {
    assert!(run_variance_scaling(&small(vec![0.0], vec![4], 10)).is_err());
    let v = run_variance_scaling(&small(vec![2.0], vec![3, 5], 60)).unwrap();
    assert_eq!(v.rows.len(), 2);
    assert!(v.fits[0].slope > 2.0, "{:?}", v.fits);
    assert!(v.upper_constant > 0.0);
}

#[test]
fn distribution_test_needs_budget() {
    let err = run_distribution_test(&small(vec![2.0], vec![4], 100)).unwrap_err();
    assert!(!err.is_numerical());
}

#[test]
fn arm_decay_rows_are_monotone() {
    let mut cfg = small(vec![0.0, 2.0], vec![4], 20);
    cfg.arm.radii = vec![1, 2, 4];
    cfg.arm.window = 6;
    cfg.arm.torus_side = 28;
    let a = run_arm_decay(&cfg).unwrap();
    assert!(a.monotone);
    assert_eq!(a.rows.len(), 2 * 2 * 3);
    for r in &a.rows {
        assert_eq!(r.p_hat.is_none(), r.hits == 0);
        assert!(r.value_or_bound() > 0.0 && r.value_or_bound() <= 1.0);
    }
    cfg.arm.radii = vec![6];
    assert!(run_arm_decay(&cfg).is_err());
}

#[test]
fn depinning_instances_are_well_formed() {
    for i in 0..20 {
        let x = depinning_instance(2, i).unwrap();
        assert!(x.lambda_min > 0.0 && x.lambda_min <= 1.0 + 1e-12);
        assert!(x.pinned > 0.0 && x.joint > 0.0 && x.joint <= 1.0);
        assert!(x.ratio.is_finite() && x.ratio > 0.0);
    }
    let c = depinning_check(30, 30, 10.0, 4).unwrap();
    assert_eq!(c.calibration + c.verification, 60);
    assert!(c.fitted > 0.0);
}

#[test]
fn csv_rows_carry_provenance() {
    let c = run_density_curve(&small(vec![0.0], vec![3], 6)).unwrap();
    let text = csv_string(&c.rows).unwrap();
    let header = text.lines().next().unwrap();
    for col in ["seed", "sampler", "window"] {
        assert!(header.split(',').any(|h| h == col), "{header}");
    }
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn outputs_do_not_depend_on_workers() {
    let cfg = small(vec![0.0, 1.0], vec![3, 4], 12);
    let a = with_workers(1, || run_variance_scaling(&cfg).unwrap());
    let b = with_workers(2, || run_variance_scaling(&cfg).unwrap());
    assert_eq!(csv_string(&a.rows).unwrap(), csv_string(&b.rows).unwrap());
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}
