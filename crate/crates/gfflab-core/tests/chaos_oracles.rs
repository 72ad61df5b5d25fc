use gfflab_core::chaos::*;
use gfflab_core::clusters::*;
use gfflab_core::gaussian::{CovarianceModel, ExactSampler};
use gfflab_core::lattice::{Domain, LatticeBox, Site};
use gfflab_core::numeric::bvn_cdf;
use gfflab_core::rng::stream;
use gfflab_core::stats::{variance_estimate, Estimate};
use nalgebra::DMatrix;

fn explicit_box_2d() -> ExactDomain {
    let b = LatticeBox::new(2, 1).unwrap();
    let sites: Vec<Site> = b.sites().collect();
    let n = sites.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        let d: i64 = sites[i].iter().zip(&sites[j]).map(|(a, b)| (a - b).abs()).sum();
        0.8 * (-(d as f64) / 1.5).exp() + if i == j { 0.2 } else { 0.0 }
    });
    let model = CovarianceModel::explicit(sites.clone(), k).unwrap();
    ExactDomain::new(&model, &sites).unwrap()
}

fn slab_2x2() -> ExactDomain {
    let b = LatticeBox::from_bounds(vec![0, 0, 0], vec![1, 1, 0]).unwrap();
    ExactDomain::from_box(&CovarianceModel::gff(3).unwrap(), &b).unwrap()
}

fn direct_variance(ed: &ExactDomain, functional: &dyn LevelSetFunctional, level: f64, n: usize, seed: u64) -> Estimate {
    let s = ExactSampler::from_matrix(ed.cov.clone()).unwrap();
    let mut rng = stream(seed, 99, 0);
    let xs: Vec<f64> = (0..n).map(|_| functional.eval(&ed.domain, &excursion(&s.sample(&mut rng), level))).collect();
    variance_estimate(&xs)
}

#[test]
fn single_site_domain_has_no_pivotal_mass() {
    let ed = ExactDomain::new(&CovarianceModel::gff(3).unwrap(), &[vec![0, 0, 0]]).unwrap();
    let e = pivotal_intensity(&ed, &CountFunctional, &[0.3], &[0], 100, 1).unwrap();
    assert_eq!(e.value, 0.0);
    assert_eq!(e.stderr, 0.0);
}

#[test]
fn intensities_are_permutation_invariant() {
    let ed = explicit_box_2d();
    let lv = vec![0.5; ed.len()];
    let a = pivotal_intensity(&ed, &CountFunctional, &lv, &[4, 1], 2000, 3).unwrap();
    let b = pivotal_intensity(&ed, &CountFunctional, &lv, &[1, 4], 2000, 3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn derivative_identity_up_to_third_order() {
    let ed = explicit_box_2d();
    let level = 0.5;
    let lv = vec![level; ed.len()];
    let sm = SmoothedMean::new(&ed, &CountFunctional, 0.0, 4000, 10, 17).unwrap();
    assert_eq!(sm.relevant().len(), 5);
    let c = ed.site_index(&[0, 0]).unwrap();
    let e = ed.site_index(&[1, 0]).unwrap();
    let n = ed.site_index(&[0, 1]).unwrap();
    for pts in [vec![c], vec![c, e], vec![c, c], vec![c, e, n], vec![c, c, e]] {
        let fd = sm.derivative(&lv, &pts, 0.02);
        let mc = pivotal_intensity(&ed, &CountFunctional, &lv, &pts, 400_000, 23).unwrap();
        let rel = (mc.value - fd).abs() / fd.abs();
        assert!(rel < 0.03, "{pts:?}: {mc:?} vs finite difference {fd} (rel {rel:.4})");
    }
}

#[test]
fn smoothed_mean_on_two_sites() {
    let sites: Vec<Site> = vec![vec![0], vec![1]];
    let r = 0.4;
    let k = DMatrix::from_row_slice(2, 2, &[1.0, r, r, 1.0]);
    let ed = ExactDomain { domain: Domain::from_sites(&sites).unwrap(), cov: k.clone() };
    let level = 0.3;
    let sm = SmoothedMean::new(&ed, &AllComponentsFunctional, 0.0, 4000, 8, 1).unwrap();
    let (m, _) = sm.mean(&[level; 2]);
    let both_below = bvn_cdf(level, level, r);
    let differ = 2.0 * (bvn_cdf(level, f64::INFINITY, r) - both_below);
    let exact = 1.0 + differ;
    assert!((m - exact).abs() < 1e-4, "{m} vs {exact}");
    let s = ExactSampler::from_matrix(k).unwrap();
    let mut rng = stream(4, 0, 0);
    let xs: Vec<f64> = (0..100_000)
        .map(|_| AllComponentsFunctional.eval(&ed.domain, &excursion(&s.sample(&mut rng), level)))
        .collect();
    let e = Estimate::from_samples(&xs);
    assert!((e.value - m).abs() < 3.0 * e.stderr);
    // A single site carries no information for the boundary-avoiding count.
    let one = ExactDomain { domain: Domain::from_sites(&sites[..1]).unwrap(), cov: DMatrix::identity(1, 1) };
    let z = SmoothedMean::new(&one, &CountFunctional, 0.1, 100, 4, 1).unwrap();
    assert_eq!(z.mean(&[0.2]).0, 0.0);
}

#[test]
fn vanishing_smoothing_matches_monte_carlo() {
    let ed = explicit_box_2d();
    let level = 0.5;
    let sm = SmoothedMean::new(&ed, &CountFunctional, 0.01, 4000, 8, 2).unwrap();
    let (m, _) = sm.mean(&vec![level; ed.len()]);
    let s = ExactSampler::from_matrix(ed.cov.clone()).unwrap();
    let mut rng = stream(6, 0, 0);
    let xs: Vec<f64> =
        (0..200_000).map(|_| CountFunctional.eval(&ed.domain, &excursion(&s.sample(&mut rng), level))).collect();
    let e = Estimate::from_samples(&xs);
    assert!((e.value - m).abs() < 3.0 * e.stderr, "{e:?} vs {m}");
}

#[test]
fn inactive_truncation_equals_full_count() {
    let ed = explicit_box_2d();
    let lv = vec![0.5; ed.len()];
    let a = pivotal_intensity(&ed, &CountFunctional, &lv, &[4], 5000, 9).unwrap();
    let b = pivotal_intensity(&ed, &TruncatedCountFunctional { max_diam: 10 }, &lv, &[4], 5000, 9).unwrap();
    assert!(a.z_distance(&b) < 2.0);
}

#[test]
fn joint_intensity_factorises_at_zero_correlation() {
    let ed = slab_2x2();
    let lv = vec![0.5; ed.len()];
    let f = AllComponentsFunctional;
    let px = pivotal_intensity(&ed, &f, &lv, &[0], 40_000, 1).unwrap();
    let py = pivotal_intensity(&ed, &f, &lv, &[3], 40_000, 2).unwrap();
    let j = joint_pivotal_intensity(&ed, &f, &lv, &[0], &[3], 0.0, 40_000, 3).unwrap();
    let prod = px.value * py.value;
    let se = (j.stderr.powi(2) + (px.value * py.stderr).powi(2) + (py.value * px.stderr).powi(2)).sqrt();
    assert!((j.value - prod).abs() < 3.0 * se, "{j:?} vs {prod}");
    assert!(joint_pivotal_intensity(&ed, &f, &lv, &[0], &[3], 1.0, 10, 3).is_err());
}

#[test]
fn joint_intensity_is_continuous_and_bounded_near_one() {
    let ed = slab_2x2();
    let lv = vec![0.5; ed.len()];
    let f = AllComponentsFunctional;
    // Common random numbers: nearby t values must give nearby estimates.
    let at = |t: f64| joint_pivotal_intensity(&ed, &f, &lv, &[0], &[0], t, 20_000, 10).unwrap();
    let base = at(0.4);
    for dt in [1e-2, 1e-3] {
        let moved = at(0.4 + dt);
        assert!((moved.value - base.value).abs() < 50.0 * dt * base.value.abs(), "{dt}: {moved:?} vs {base:?}");
    }
    // |P^t| ≤ c (1 - t)^{-m + 1/2} with m = 1: fit c at t = 0.9 and check closer to 1.
    let near = [0.9, 0.99, 0.999];
    let vals: Vec<Estimate> = near
        .iter()
        .enumerate()
        .map(|(i, &t)| joint_pivotal_intensity(&ed, &f, &lv, &[0], &[0], t, 40_000, 20 + i as u64).unwrap())
        .collect();
    let c = (vals[0].value.abs() + 3.0 * vals[0].stderr) * (1.0 - near[0]).sqrt();
    for (t, v) in near.iter().zip(&vals) {
        assert!(v.value.abs() <= 2.0 * c / (1.0 - t).sqrt(), "t {t}: {v:?}");
    }
}

#[test]
fn chaos_components_are_centred_and_orthogonal() {
    let ed = slab_2x2();
    let level = 0.5;
    let f = AllComponentsFunctional;
    let t1 = intensity_table(&ed, &f, level, 1, None, 20_000, 1).unwrap();
    let t2 = intensity_table(&ed, &f, level, 2, None, 20_000, 2).unwrap();
    let s = ExactSampler::from_matrix(ed.cov.clone()).unwrap();
    let mut rng = stream(7, 0, 0);
    let n = 100_000;
    let (mut q1, mut q2) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let x = s.sample(&mut rng);
        q1.push(chaos_component(&t1, &ed.cov, &x).unwrap());
        q2.push(chaos_component(&t2, &ed.cov, &x).unwrap());
    }
    // Q_1 is the linear statistic Σ f(x) P(x).
    let x = s.sample(&mut rng);
    let lin: f64 = t1.entries.iter().map(|e| e.value * x[e.points[0]]).sum();
    assert!((lin - chaos_component(&t1, &ed.cov, &x).unwrap()).abs() < 1e-12);
    let e1 = Estimate::from_samples(&q1);
    let e2 = Estimate::from_samples(&q2);
    assert!(e1.value.abs() < 3.0 * e1.stderr, "{e1:?}");
    assert!(e2.value.abs() < 3.0 * e2.stderr, "{e2:?}");
    let prod: Vec<f64> = q1.iter().zip(&q2).map(|(a, b)| (a - e1.value) * (b - e2.value)).collect();
    let c = Estimate::from_samples(&prod);
    assert!(c.value.abs() < 3.0 * c.stderr, "{c:?}");
    let v2 = variance_estimate(&q2);
    let exact = chaos_component_variance(&t2, &ed.cov);
    assert!((v2.value - exact).abs() < 4.0 * v2.stderr, "{v2:?} vs {exact}");
}

#[test]
fn component_variance_special_cases() {
    let ed = slab_2x2();
    let p = 0.3;
    let spec = ChaosComponentSpec {
        order: 1,
        level: 0.0,
        sites: 4,
        cutoff: None,
        entries: (0..4).map(|i| TableEntry { points: vec![i], value: p, stderr: 0.0 }).collect(),
    };
    let sum_k: f64 = ed.cov.iter().sum();
    assert!((chaos_component_variance(&spec, &ed.cov) - p * p * sum_k).abs() < 1e-12);
    // Independent sites: only the diagonal survives, each with weight 1/m!.
    let id = DMatrix::identity(4, 4);
    let m = 3;
    let values = [0.2, -0.1, 0.4, 0.05];
    let mut entries: Vec<TableEntry> =
        (0..4).map(|i| TableEntry { points: vec![i; m], value: values[i], stderr: 0.0 }).collect();
    entries.push(TableEntry { points: vec![0, 1, 2], value: 0.7, stderr: 0.0 });
    let spec = ChaosComponentSpec { order: m, level: 0.0, sites: 4, cutoff: None, entries };
    let expect: f64 = values.iter().map(|v| v * v / 6.0).sum::<f64>() + 0.49;
    assert!((chaos_component_variance(&spec, &id) - expect).abs() < 1e-12);
}

#[test]
fn tail_variance_identities() {
    let ed = slab_2x2();
    let level = 0.5;
    let f = AllComponentsFunctional;
    let direct = direct_variance(&ed, &f, level, 100_000, 1);
    let t1 = tail_variance(&ed, &f, level, 1, 12, 6000, 2).unwrap();
    assert!((t1.value - direct.value).abs() < 0.05 * direct.value, "{t1:?} vs {direct:?}");
    let t2 = tail_variance(&ed, &f, level, 2, 12, 3000, 3).unwrap();
    assert!(t2.value <= t1.value + 3.0 * (t1.stderr + t2.stderr));
    let q1 = intensity_table(&ed, &f, level, 1, None, 40_000, 4).unwrap();
    let v1 = chaos_component_variance(&q1, &ed.cov);
    let v1_se = chaos_component_variance_stderr(&q1, &ed.cov);
    let gap = t1.value - v1 - t2.value;
    let se = (t1.stderr.powi(2) + t2.stderr.powi(2) + v1_se.powi(2)).sqrt();
    assert!(gap.abs() < 4.0 * se + 0.02 * direct.value, "gap {gap} se {se}");
}

#[test]
fn stationary_symmetries() {
    let cfg = StationaryConfig::bulk(3, 4, 1.0, 60, 5);
    let f = CountFunctional;
    let o = vec![0, 0, 0];
    let a = stationary_pivotal_intensity(&cfg, &f, std::slice::from_ref(&o)).unwrap();
    let b = stationary_pivotal_intensity(&StationaryConfig { seed: 6, ..cfg.clone() }, &f, &[vec![1, 0, -1]]).unwrap();
    assert!(a.as_estimate().z_distance(&b.as_estimate()) < 2.0, "{a:?} {b:?}");
    let x = vec![1, 1, 0];
    let nx = vec![-1, -1, 0];
    let p = stationary_pivotal_intensity(&StationaryConfig { seed: 7, ..cfg.clone() }, &f, &[o.clone(), x]).unwrap();
    let q = stationary_pivotal_intensity(&StationaryConfig { seed: 8, ..cfg.clone() }, &f, &[o, nx]).unwrap();
    assert!(p.as_estimate().z_distance(&q.as_estimate()) < 2.0, "{p:?} {q:?}");
}

#[test]
fn stationary_two_point_decay_at_high_level() {
    let cfg = StationaryConfig::bulk(3, 5, 2.0, 200, 11);
    let tuples: Vec<Vec<Site>> = (1..=3).map(|k| vec![vec![0, 0, 0], vec![k, 0, 0]]).collect();
    let b = stationary_batch(&cfg, &CountFunctional, &tuples, &[1.0; 3]).unwrap();
    let v: Vec<f64> = b.estimates.iter().map(|e| e.value.abs()).collect();
    assert!(v[0] > v[1] && v[1] > v[2], "{:?}", b.estimates);
}

#[test]
fn halfspace_boundary_effect_and_bulk_limit() {
    let level = 2.0;
    let cfg = StationaryConfig::bulk(3, 5, level, 150, 21);
    let bulk = stationary_pivotal_intensity(&cfg, &CountFunctional, &[vec![0, 0, 0]]).unwrap().as_estimate();
    let h0 = halfspace_pivotal_intensity(&StationaryConfig { seed: 22, ..cfg.clone() }, 0).unwrap().as_estimate();
    let h4 = halfspace_pivotal_intensity(&StationaryConfig { seed: 23, ..cfg.clone() }, 4).unwrap().as_estimate();
    assert!(h0.z_distance(&bulk) > 2.0, "{h0:?} vs {bulk:?}");
    assert!(h4.z_distance(&bulk) < 2.0, "{h4:?} vs {bulk:?}");
    // Relabelling the tangential axes maps the window onto itself.
    let hc = StationaryConfig { shape: WindowShape::HalfSpace, seed: 24, ..cfg.clone() };
    let a = stationary_pivotal_intensity(&hc, &CountFunctional, &[vec![2, 1, 0]]).unwrap().as_estimate();
    let b = stationary_pivotal_intensity(&StationaryConfig { seed: 25, ..hc }, &CountFunctional, &[vec![2, 0, 1]])
        .unwrap()
        .as_estimate();
    assert!(a.z_distance(&b) < 2.0);
}

#[test]
fn window_sensitivity_is_reported() {
    let cfg = StationaryConfig { sensitivity_radius: Some(3), ..StationaryConfig::bulk(3, 4, 2.0, 30, 2) };
    let r = stationary_pivotal_intensity(&cfg, &CountFunctional, &[vec![0, 0, 0]]).unwrap();
    let s = r.window.clone().unwrap().sensitivity.unwrap();
    assert_eq!(s.radius, 3);
    assert!(s.stderr > 0.0);
    let json = serde_json::to_value(&r).unwrap();
    for key in ["target", "points", "level", "estimate", "stderr", "budget", "window", "sampler"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
}
