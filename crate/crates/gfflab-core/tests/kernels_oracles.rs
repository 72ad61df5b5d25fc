use gfflab_core::green::asymptotic_constant;
use gfflab_core::kernels::*;
use gfflab_core::numeric::{integrate_adaptive, integrate_gl};
use gfflab_core::stats::{log_log_slope, Estimate};

fn exact(v: f64) -> Estimate {
    Estimate { value: v, stderr: 1e-6 * v.abs(), n: 1 }
}

/// Log-log slope against the half-width `R + 1/2` of the cube covered by `Λ_R`.
fn slope(radii: &[usize], values: &[f64]) -> f64 {
    let pts: Vec<(f64, Estimate)> = radii.iter().zip(values).map(|(&r, &v)| (r as f64 + 0.5, exact(v))).collect();
    log_log_slope(&pts).0
}

#[test]
fn one_dimensional_constant_in_closed_form() {
    let v = e_constant(1, 0.5).unwrap();
    assert!((v - 16.0 * 2f64.sqrt() / 3.0).abs() < 1e-10, "{v}");
    let s = e_constant_subordinated(1, 0.5).unwrap();
    assert!((s - v).abs() < 1e-8, "{s}");
}

#[test]
fn tent_at_origin_is_cube_volume() {
    for d in 1..=4 {
        assert_eq!(tent(&vec![0.0; d]), 2f64.powi(d as i32));
    }
    assert_eq!(tent(&[2.5, 0.0]), 0.0);
}

#[test]
fn pyramid_and_subordination_agree() {
    for (d, a) in [(3, 1.0), (2, 1.5), (3, 2.5), (4, 2.0), (4, 0.7)] {
        let p = e_constant(d, a).unwrap();
        let s = e_constant_subordinated(d, a).unwrap();
        assert!((p - s).abs() < 1e-4 * p, "d {d} α {a}: {p} vs {s}");
    }
}

#[test]
fn divergent_exponents_rejected() {
    assert!(e_constant(3, 3.0).is_err());
    assert!(e_function(3, 1.5, &[vec![0.0; 3], vec![0.0; 3]]).is_err());
    assert!(e_boundary_constant(3, 2.0).is_err());
}

#[test]
fn shifted_function_reduces_and_decays() {
    let (d, a) = (3, 0.7);
    let zero = vec![0.0; 3];
    let at0 = e_function(d, a, &[zero.clone(), zero.clone()]).unwrap();
    let e = e_constant(d, 2.0 * a).unwrap();
    assert!((at0 - e).abs() < 1e-6 * e, "{at0} vs {e}");
    let t = |x: f64| vec![x, 0.3 * x, 0.0];
    let neg = |v: Vec<f64>| v.iter().map(|c| -c).collect::<Vec<f64>>();
    let plus = e_function(d, a, &[zero.clone(), t(0.8)]).unwrap();
    let minus = e_function(d, a, &[zero.clone(), neg(t(0.8))]).unwrap();
    assert!((plus - minus).abs() < 1e-8 * plus);
    let mut prev = plus;
    for x in [2.0, 8.0, 32.0] {
        let v = e_function(d, a, &[zero.clone(), t(x)]).unwrap();
        assert!(v < prev);
        prev = v;
    }
    assert!(prev < 0.2 * e_constant(d, a).unwrap());
    // Continuity at the coincident configuration.
    let gaps: Vec<f64> =
        [0.1, 0.01, 0.001].iter().map(|&x| (e_function(d, a, &[zero.clone(), t(x)]).unwrap() - at0).abs()).collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2] && gaps[2] < 1e-2 * at0, "{gaps:?}");
}

/// Square boundary as four unit-speed segments, assembled pair by pair.
#[test]
fn square_boundary_matches_segment_assembly() {
    let a = 0.5;
    let same = 16.0 * 2f64.sqrt() / 3.0;
    let opposite = integrate_gl(|p| integrate_gl(|q| (4.0 + (p - q).powi(2)).powf(-a / 2.0), -1.0, 1.0, 40), -1.0, 1.0, 40);
    // ∫_0^2 ∫_0^2 (s² + r²)^{-a/2} in polar coordinates over the two triangles.
    let adjacent = 2.0
        * integrate_adaptive(
            &|th: f64| (2.0 / th.cos()).powf(2.0 - a) / (2.0 - a),
            0.0,
            std::f64::consts::FRAC_PI_4,
            1e-13,
        );
    let oracle = 4.0 * (same + opposite) + 8.0 * adjacent;
    let v = e_boundary_constant(2, a).unwrap();
    assert!((v - oracle).abs() < 1e-8 * oracle, "{v} vs {oracle}");
    assert!(v.is_finite() && v > 0.0);
}

#[test]
fn boundary_constant_converges_under_refinement() {
    for (d, a) in [(2, 0.5), (3, 1.0), (4, 1.5)] {
        let coarse = e_boundary_constant_with(d, a, 12).unwrap();
        let fine = e_boundary_constant_with(d, a, 24).unwrap();
        assert!((coarse - fine).abs() < 1e-4 * fine, "d {d}: {coarse} vs {fine}");
    }
}

#[test]
fn log_constant_matches_lattice_sum() {
    // Σ_{0 < |x|_∞ ≤ R} |x|^{-3} grows like E_{3,3} log R.
    let sum = |r: i64| {
        let mut s = 0.0;
        for x in -r..=r {
            for y in -r..=r {
                for z in -r..=r {
                    if (x, y, z) != (0, 0, 0) {
                        s += ((x * x + y * y + z * z) as f64).powf(-1.5);
                    }
                }
            }
        }
        s
    };
    // Increments over doublings carry an O(1/R) lattice error; cancel it.
    let (s16, s32, s64) = (sum(16), sum(32), sum(64));
    let slope = (2.0 * (s64 - s32) - (s32 - s16)) / 2f64.ln();
    let e = e_log_constant(3);
    assert!((e - 4.0 * std::f64::consts::PI).abs() < 1e-12);
    assert!((slope - e).abs() < 0.01 * e, "{slope} vs {e}");
}

#[test]
fn beta_linear_agrees_with_continuum() {
    let r = beta_constant(3, 1, &[8, 12, 16, 24, 32], None).unwrap();
    assert_eq!((r.exponent, r.log_factor), (5, false));
    let c = beta_continuum(3, 1).unwrap().unwrap();
    let expected = asymptotic_constant(3).unwrap() * e_constant(3, 1.0).unwrap();
    assert!((c - expected).abs() < 1e-12);
    assert!((r.extrapolated - c).abs() < 0.05 * c, "{r:?} vs {c}");
}

#[test]
fn beta_quadratic_uses_the_power_of_the_constant() {
    let r = beta_constant(3, 2, &[8, 12, 16, 24, 32], None).unwrap();
    assert_eq!(r.exponent, 4);
    let c = asymptotic_constant(3).unwrap();
    let e = e_constant(3, 2.0).unwrap();
    let powered = c * c * e;
    let linear = c * e;
    assert!((r.extrapolated - powered).abs() < 0.05 * powered, "{} vs {powered}", r.extrapolated);
    assert!((r.extrapolated - linear).abs() > 0.5 * linear);
}

#[test]
fn beta_log_regime_in_three_dimensions() {
    let radii = [8, 16, 24, 32, 40, 48];
    let r = beta_constant(3, 3, &radii, None).unwrap();
    assert_eq!((r.exponent, r.log_factor), (3, true));
    // raw / R^3 is linear in log R up to 1/R corrections: the fit residual is small against the spread.
    let y: Vec<f64> = r.raw.iter().zip(&radii).map(|(s, &k)| s / (k as f64).powi(3)).collect();
    let spread = y.last().unwrap() - y[0];
    assert!(r.residual < 0.01 * spread, "residual {} spread {spread}", r.residual);
    let c = beta_continuum(3, 3).unwrap().unwrap();
    assert!((r.extrapolated - c).abs() < 0.1 * c, "slope {} vs {c}", r.extrapolated);
}

#[test]
fn beta_log_regime_in_four_dimensions() {
    let r = beta_constant(4, 2, &[8, 12, 16, 20, 24], None).unwrap();
    assert_eq!((r.exponent, r.log_factor), (4, true));
    assert!(r.extrapolated > 0.0);
    let c = beta_continuum(4, 2).unwrap().unwrap();
    assert!((r.extrapolated - c).abs() < 0.1 * c, "slope {} vs {c}", r.extrapolated);
}

#[test]
fn normalisation_exponents_match_measured_slopes() {
    for (d, k, radii) in [(3, 1, vec![16, 24, 32]), (3, 2, vec![16, 24, 32]), (4, 1, vec![8, 12, 16])] {
        let r = beta_constant(d, k, &radii, None).unwrap();
        let s = slope(&radii, &r.raw);
        assert!((s - r.exponent as f64).abs() < 0.15, "({d},{k}): slope {s} vs {}", r.exponent);
    }
}

#[test]
fn asymptotic_switch_is_close_to_exact_table() {
    let exact = beta_constant(3, 1, &[16], None).unwrap().raw[0];
    let switched = beta_constant(3, 1, &[16], Some(8)).unwrap().raw[0];
    assert!((exact - switched).abs() < 0.01 * exact);
    assert!(beta_constant(3, 1, &[], None).is_err());
}

#[test]
fn diagonal_table_reduces_to_power_sum() {
    let g = GreenKernel::new(3, 40, None).unwrap();
    let k = |x: &[i64]| g.value(x);
    for m in 1..=3 {
        let w = weighted_kernel_sum(&k, &StationaryTable::diagonal(3, m, 1.0), 6, None).unwrap();
        let s = green_power_sum(&g, 6, m as u32);
        assert!((w - s).abs() < 1e-10 * s, "m {m}: {w} vs {s}");
    }
}

#[test]
fn linear_weights_scale_with_the_volume() {
    let g = GreenKernel::new(3, 64, None).unwrap();
    let k = |x: &[i64]| g.value(x);
    let table = StationaryTable::diagonal(3, 1, 0.7);
    let a = weighted_kernel_sum(&k, &table, 16, None).unwrap();
    let b = weighted_kernel_sum(&k, &table, 32, None).unwrap();
    let ratio = b / a;
    assert!((ratio - 32.0).abs() < 0.1 * 32.0, "{ratio}");
    // A shift moves every pair apart and lowers the sum.
    let shifted = weighted_kernel_sum(&k, &table, 16, Some(&[vec![1.0, 0.0, 0.0]])).unwrap();
    assert!(shifted < a);
}

#[test]
fn cancelling_table_falls_to_volume_order() {
    let g = GreenKernel::new(3, 64, None).unwrap();
    let k = |x: &[i64]| g.value(x);
    let table = StationaryTable {
        dim: 3,
        order: 2,
        entries: vec![(vec![vec![0, 0, 0]], 1.0), (vec![vec![1, 0, 0]], -0.5), (vec![vec![-1, 0, 0]], -0.5)],
    };
    assert_eq!(table.total(), 0.0);
    let radii = [4, 8, 12, 16];
    let v: Vec<f64> = radii.iter().map(|&r| weighted_kernel_sum(&k, &table, r, None).unwrap()).collect();
    let by_r4: Vec<f64> = v.iter().zip(&radii).map(|(s, &r)| s / (r as f64).powi(4)).collect();
    assert!(by_r4.windows(2).all(|w| w[1] < w[0]), "{by_r4:?}");
    let s = slope(&radii, &v);
    assert!((s - 3.0).abs() < 0.3, "slope {s}");
}

#[test]
fn boundary_weights_follow_face_dimension() {
    let g = GreenKernel::new(3, 64, None).unwrap();
    let k = |x: &[i64]| g.value(x);
    let radii = [4, 8, 12, 16];
    // Faces: order R^{2i-α} = R^3, approached from below as edge deficits fade.
    let faces: Vec<f64> = [8, 16, 32].iter().map(|&r| boundary_weight_sum(&k, 3, r, 2, 1.0).unwrap()).collect();
    let s = slope(&[16, 32], &faces[1..]);
    assert!((s - 3.0).abs() < 0.3, "faces slope {s}");
    let scaled: Vec<f64> = faces.iter().zip([8.5f64, 16.5, 32.5]).map(|(v, r)| v / r.powi(3)).collect();
    assert!(scaled[1] - scaled[0] > scaled[2] - scaled[1], "{scaled:?}");
    let corners: Vec<f64> = radii.iter().map(|&r| boundary_weight_sum(&k, 3, r, 0, 1.0).unwrap()).collect();
    // Corners: bounded, with cross-corner terms fading like 1/R.
    let s = slope(&radii, &corners);
    assert!(s < 0.1 && corners.iter().all(|&c| c > 0.5 * corners[0]), "corner slope {s}: {corners:?}");
    // Uniform weights recover the plain pair sum.
    let all = boundary_weight_sum(&k, 3, 5, 2, 0.0).unwrap();
    let direct = green_power_sum(&g, 5, 1);
    assert!((all - direct).abs() < 1e-9 * direct);
}
