//! Quadrature rules and Gaussian probability helpers shared by the other modules.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::Fft;
use rand::Rng as _;
use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pnm1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(a: f64, b: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let h = 0.5 * (b - a);
    (x.iter().map(|t| a + h * (t + 1.0)).collect(), w.iter().map(|v| v * h).collect())
}

/// Fixed-order Gauss–Legendre integral of `f` on `[a, b]`.
pub fn integrate_gl(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let (x, w) = gauss_legendre_on(a, b, n);
    x.iter().zip(&w).map(|(t, v)| v * f(*t)).sum()
}

/// Adaptive bisection with a 20-point rule until halves agree to `tol` (absolute).
pub fn integrate_adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &impl Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let left = integrate_gl(f, a, m, 20);
        let right = integrate_gl(f, m, b, 20);
        if depth == 0 || (left + right - whole).abs() <= tol {
            return left + right;
        }
        rec(f, a, m, left, 0.5 * tol, depth - 1) + rec(f, m, b, right, 0.5 * tol, depth - 1)
    }
    let whole = integrate_gl(f, a, b, 20);
    rec(f, a, b, whole, tol, 40)
}

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Inverse of the standard normal distribution function.
pub fn norm_ppf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let mut x = -SQRT_2 * erfc_inv(2.0 * p);
    // Newton polish against the accurate distribution function.
    for _ in 0..2 {
        let pdf = norm_pdf(x);
        if pdf <= 0.0 {
            break;
        }
        x -= (norm_cdf(x) - p) / pdf;
    }
    x
}

/// Bivariate normal `P[X < h, Y < k]` for unit variances and correlation `r`.
pub fn bvn_cdf(h: f64, k: f64, r: f64) -> f64 {
    if r >= 1.0 {
        return norm_cdf(h.min(k));
    }
    if r <= -1.0 {
        return (norm_cdf(h) - norm_cdf(-k)).max(0.0);
    }
    if h == f64::NEG_INFINITY || k == f64::NEG_INFINITY {
        return 0.0;
    }
    if h == f64::INFINITY {
        return norm_cdf(k);
    }
    if k == f64::INFINITY {
        return norm_cdf(h);
    }
    // Sheppard-type angular integral for the upper orthant at (-h, -k).
    let (a, b) = (-h, -k);
    let f = |theta: f64| {
        let (s, c) = theta.sin_cos();
        (-(a * a + b * b - 2.0 * a * b * s) / (2.0 * c * c)).exp()
    };
    let integral = integrate_adaptive(&f, 0.0, r.asin(), 1e-15);
    norm_cdf(-a) * norm_cdf(-b) + integral / (2.0 * PI)
}

/// Precomputed randomized lattice rule for Gaussian box probabilities
/// `P[a < X < b]`, `X ~ N(0, Σ)`, by sequential conditioning.
///
/// Shifts are drawn once, so repeated calls with different bounds reuse the
/// same points and produce smooth differences in the bounds.
#[derive(Debug, Clone)]
pub struct MvnIntegrator {
    chol: DMatrix<f64>,
    gen: Vec<f64>,
    shifts: Vec<Vec<f64>>,
    points: usize,
}

impl MvnIntegrator {
    pub fn new(cov: &DMatrix<f64>, points: usize, n_shifts: usize, rng: &mut Rng) -> Result<Self> {
        let n = cov.nrows();
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite(format!("{n}x{n} box-probability covariance")))?
            .l();
        let gen = (0..n).map(|i| (nth_prime(i) as f64).sqrt().fract()).collect();
        let shifts = (0..n_shifts.max(2)).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
        Ok(Self { chol, gen, shifts, points: points.max(1) })
    }

    pub fn dim(&self) -> usize {
        self.chol.nrows()
    }

    /// Estimate and standard error over the random shifts.
    pub fn prob(&self, lower: &[f64], upper: &[f64]) -> (f64, f64) {
        let n = self.dim();
        let mut y = vec![0.0; n];
        let mut w = vec![0.0; n];
        let per_shift: Vec<f64> = self
            .shifts
            .iter()
            .map(|shift| {
                let mut acc = 0.0;
                for j in 1..=self.points {
                    for i in 0..n {
                        let u = (j as f64 * self.gen[i] + shift[i]).fract();
                        w[i] = (2.0 * u - 1.0).abs();
                    }
                    let mut f = 1.0;
                    for i in 0..n {
                        let s: f64 = (0..i).map(|k| self.chol[(i, k)] * y[k]).sum();
                        let lii = self.chol[(i, i)];
                        let d = norm_cdf((lower[i] - s) / lii);
                        let e = norm_cdf((upper[i] - s) / lii);
                        let width = e - d;
                        if width <= 0.0 {
                            f = 0.0;
                            break;
                        }
                        f *= width;
                        if i + 1 < n {
                            let p = (d + w[i] * width).clamp(1e-300, 1.0 - 1e-16);
                            y[i] = norm_ppf(p);
                        }
                    }
                    acc += f;
                }
                acc / self.points as f64
            })
            .collect();
        let k = per_shift.len() as f64;
        let mean = per_shift.iter().sum::<f64>() / k;
        let var = per_shift.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
        (mean, (var / k).sqrt())
    }
}

fn nth_prime(i: usize) -> u64 {
    let mut count = 0;
    let mut c = 2u64;
    loop {
        if (2..c).take_while(|p| p * p <= c).all(|p| !c.is_multiple_of(p)) {
            if count == i {
                return c;
            }
            count += 1;
        }
        c += 1;
    }
}

/// Log-density of `N(0, Σ)` at `x`, with `Σ` given by its Cholesky factor.
pub fn gaussian_log_density(chol_l: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut z = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| chol_l[(i, k)] * z[k]).sum();
        z[i] = (x[i] - s) / chol_l[(i, i)];
    }
    let logdet: f64 = (0..n).map(|i| chol_l[(i, i)].ln()).sum();
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() - logdet - 0.5 * n as f64 * (2.0 * PI).ln()
}

/// Density of `N(0, Σ)` at `x`.
pub fn gaussian_density(cov: &DMatrix<f64>, x: &[f64]) -> Result<f64> {
    let l = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("density covariance".into()))?
        .l();
    Ok(gaussian_log_density(&l, x).exp())
}

/// In-place `d`-dimensional transform of a row-major cube of side `side`,
/// applying the one-dimensional plan along every axis.
pub fn fft_nd(fft: &dyn Fft<f64>, buf: &mut [Complex64], dim: usize, side: usize) {
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    // Last axis is contiguous.
    fft.process_with_scratch(buf, &mut scratch);
    let total = buf.len();
    let mut line = vec![Complex64::new(0.0, 0.0); side];
    for axis in 0..dim - 1 {
        let stride = side.pow((dim - 1 - axis) as u32);
        let block = stride * side;
        for base in (0..total).step_by(block) {
            for off in 0..stride {
                let start = base + off;
                for (k, v) in line.iter_mut().enumerate() {
                    *v = buf[start + k * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (k, v) in line.iter().enumerate() {
                    buf[start + k * stride] = *v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    #[test]
    fn gl_integrates_polynomials_exactly() {
        let v = integrate_gl(|x| x.powi(9) + 3.0 * x.powi(4), -1.0, 2.0, 5);
        let exact = (2f64.powi(10) - 1.0) / 10.0 + 3.0 * (32.0 + 1.0) / 5.0;
        assert_abs_diff_eq!(v, exact, epsilon = 1e-11);
        let (_, w) = gauss_legendre(33);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-13);
    }

    #[test]
    fn normal_functions() {
        assert_abs_diff_eq!(norm_cdf(1.959963984540054), 0.975, epsilon = 1e-14);
        assert_abs_diff_eq!(norm_ppf(0.975), 1.959963984540054, epsilon = 1e-12);
        assert_abs_diff_eq!(norm_ppf(1e-10), -6.361340902404056, epsilon = 1e-9);
    }

    #[test]
    fn bivariate_normal_known_values() {
        // P[X<0, Y<0] = 1/4 + asin(r)/(2π)
        for r in [-0.95, -0.5, 0.0, 0.3, 0.9, 0.999] {
            assert_abs_diff_eq!(bvn_cdf(0.0, 0.0, r), 0.25 + r.asin() / (2.0 * PI), epsilon = 1e-13);
        }
        assert_abs_diff_eq!(bvn_cdf(0.7, -0.4, 0.0), norm_cdf(0.7) * norm_cdf(-0.4), epsilon = 1e-14);
        // symmetry P[X<h,Y<k] = P[X<k,Y<h]
        assert_abs_diff_eq!(bvn_cdf(0.3, 1.1, 0.6), bvn_cdf(1.1, 0.3, 0.6), epsilon = 1e-14);
    }

    #[test]
    fn lattice_rule_matches_bivariate() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]);
        let mut rng = Rng::seed_from_u64(3);
        let mvn = MvnIntegrator::new(&cov, 4000, 8, &mut rng).unwrap();
        let (p, se) = mvn.prob(&[f64::NEG_INFINITY; 2], &[0.5, -0.2]);
        assert_abs_diff_eq!(p, bvn_cdf(0.5, -0.2, 0.4), epsilon = 1e-5);
        assert!(se < 1e-5);
    }
}
