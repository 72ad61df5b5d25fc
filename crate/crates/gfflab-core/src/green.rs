//! Green's function of simple random walk on `Z^d`, `d ≥ 3`.
//!
//! Values come from the heat-kernel representation
//! `G(x) = d ∫_0^∞ Π_i e^{-s} I_{|x_i|}(s) ds`, where the continuous-time walk
//! moves each coordinate independently. The integral is split into dyadic
//! Gauss–Legendre panels up to `S ≈ 10^8`, and the remainder uses the
//! large-argument expansion of `e^{-s} I_n(s)` to second order. The scaled
//! Bessel values come from Miller's backward recurrence normalised by
//! `e^{-s}(I_0 + 2 Σ I_n) = 1`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::numeric::gauss_legendre_on;

const PANEL_NODES: usize = 40;

/// Tabulated Green's function on `{x : |x_i| ≤ max_coord}`.
#[derive(Debug, Clone)]
pub struct Green {
    dim: usize,
    max_coord: usize,
    table: Vec<f64>,
}

impl Green {
    pub fn new(dim: usize, max_coord: usize) -> Result<Self> {
        if dim < 3 {
            return Err(Error::InvalidDimension(dim));
        }
        let q = Quadrature::new(dim, max_coord);
        let side = max_coord + 1;
        let mut table = vec![0.0; side.pow(dim as u32)];
        // Evaluate each sorted coordinate tuple once and copy to its permutations.
        let mut x = vec![0usize; dim];
        loop {
            let v = q.value(&x);
            for_each_permutation(&x, |p| {
                table[flat(p, side)] = v;
            });
            if !next_sorted(&mut x, max_coord) {
                break;
            }
        }
        Ok(Self { dim, max_coord, table })
    }

    /// Shared table covering at least `max_coord`, built once per dimension and size.
    pub fn shared(dim: usize, max_coord: usize) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Green>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(g) = cache.lock().unwrap().get(&dim) {
            if g.max_coord >= max_coord {
                return Ok(g.clone());
            }
        }
        let g = Arc::new(Self::new(dim, max_coord.max(8))?);
        let mut lock = cache.lock().unwrap();
        let keep = match lock.get(&dim) {
            Some(old) if old.max_coord >= g.max_coord => old.clone(),
            _ => {
                lock.insert(dim, g.clone());
                g
            }
        };
        Ok(keep)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_coord(&self) -> usize {
        self.max_coord
    }

    /// `G(x)`, or `None` if some `|x_i|` exceeds the table.
    pub fn get(&self, x: &[i64]) -> Option<f64> {
        let side = self.max_coord + 1;
        let mut idx = 0usize;
        for &v in x {
            let a = v.unsigned_abs() as usize;
            if a > self.max_coord {
                return None;
            }
            idx = idx * side + a;
        }
        Some(self.table[idx])
    }

    /// `G(x)`; panics when outside the table.
    pub fn at(&self, x: &[i64]) -> f64 {
        self.get(x).unwrap_or_else(|| panic!("{x:?} outside Green table of size {}", self.max_coord))
    }

    /// `G(x - y)`.
    pub fn cov(&self, x: &[i64], y: &[i64]) -> f64 {
        let diff: Vec<i64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        self.at(&diff)
    }
}

/// One-off evaluation of `G(x)`.
pub fn green_function(dim: usize, x: &[i64]) -> Result<f64> {
    if dim < 3 {
        return Err(Error::InvalidDimension(dim));
    }
    if x.len() != dim {
        return Err(Error::arg(format!("site {x:?} is not in Z^{dim}")));
    }
    let n: Vec<usize> = x.iter().map(|v| v.unsigned_abs() as usize).collect();
    let q = Quadrature::new(dim, n.iter().copied().max().unwrap_or(0));
    Ok(q.value(&n))
}

/// The constant `c_d` in `G(x) ~ c_d |x|^{2-d}`: `(d/2) Γ(d/2 - 1) π^{-d/2}`.
pub fn asymptotic_constant(dim: usize) -> Result<f64> {
    if dim < 3 {
        return Err(Error::InvalidDimension(dim));
    }
    let h = dim as f64 / 2.0;
    Ok(h * statrs::function::gamma::gamma(h - 1.0) * PI.powf(-h))
}

/// `c_d` fitted from `G(r e_1) r^{d-2} = c + a r^{-2}` on `r ∈ [r_min, r_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymptoticFit {
    pub closed_form: f64,
    pub fitted: f64,
    pub remainder: f64,
    pub residual: f64,
}

pub fn fit_asymptotic_constant(dim: usize, r_min: usize, r_max: usize) -> Result<AsymptoticFit> {
    if r_min < 2 || r_max <= r_min + 2 {
        return Err(Error::arg("fit range needs r_min ≥ 2 and at least four radii"));
    }
    asymptotic_constant(dim)?;
    let q = Quadrature::new(dim, r_max);
    let pts: Vec<(f64, f64)> = (r_min..=r_max)
        .map(|r| {
            let mut x = vec![0usize; dim];
            x[0] = r;
            (1.0 / (r * r) as f64, q.value(&x) * (r as f64).powi(dim as i32 - 2))
        })
        .collect();
    let (slope, intercept, residual) = linear_fit(&pts);
    Ok(AsymptoticFit { closed_form: asymptotic_constant(dim)?, fitted: intercept, remainder: slope, residual })
}

/// Least-squares `y = a x + b`; returns `(a, b, rms residual)`.
pub(crate) fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let a = sxy / sxx;
    let b = my - a * mx;
    let rss: f64 = pts.iter().map(|p| (p.1 - a * p.0 - b).powi(2)).sum();
    (a, b, (rss / n).sqrt())
}

/// Largest `|G(x) - δ_{x,0} - (2d)^{-1} Σ_{y~x} G(y)|` over `|x|_∞ ≤ radius`.
pub fn harmonicity_residual(g: &Green, radius: usize) -> f64 {
    let d = g.dim();
    let r = radius as i64;
    let mut worst: f64 = 0.0;
    let mut x = vec![-r; d];
    loop {
        let mut avg = 0.0;
        let mut y = x.clone();
        for k in 0..d {
            for step in [-1, 1] {
                y[k] += step;
                avg += g.at(&y);
                y[k] -= step;
            }
        }
        avg /= (2 * d) as f64;
        let delta = if x.iter().all(|&v| v == 0) { 1.0 } else { 0.0 };
        worst = worst.max((g.at(&x) - delta - avg).abs());
        let mut k = 0;
        while k < d {
            x[k] += 1;
            if x[k] <= r {
                break;
            }
            x[k] = -r;
            k += 1;
        }
        if k == d {
            return worst;
        }
    }
}

struct Quadrature {
    dim: usize,
    weights: Vec<f64>,
    // e^{-s_k} I_n(s_k) for n = 0..=max, row-major by node.
    bessel: Vec<f64>,
    width: usize,
    cutoff: f64,
}

impl Quadrature {
    fn new(dim: usize, max: usize) -> Self {
        let target = (1e4 * ((max + 1) as f64).powi(2)).max(1e7);
        let top = target.log2().ceil() as i32;
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut push = |a: f64, b: f64| {
            let (x, w) = gauss_legendre_on(a, b, PANEL_NODES);
            nodes.extend(x);
            weights.extend(w);
        };
        push(0.0, 0.0625);
        for j in -4..top {
            push(2f64.powi(j), 2f64.powi(j + 1));
        }
        let width = max + 1;
        let mut bessel = Vec::with_capacity(nodes.len() * width);
        for &s in &nodes {
            bessel.extend(scaled_bessel_i(s, max));
        }
        Self { dim, weights, bessel, width, cutoff: 2f64.powi(top) }
    }

    fn value(&self, n: &[usize]) -> f64 {
        let mut sum = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            let row = &self.bessel[k * self.width..(k + 1) * self.width];
            let mut p = *w;
            for &ni in n {
                p *= row[ni];
            }
            sum += p;
        }
        let d = self.dim as f64;
        let h = d / 2.0;
        let a: Vec<f64> = n.iter().map(|&m| (4.0 * (m * m) as f64 - 1.0) / 8.0).collect();
        let b: Vec<f64> = n
            .iter()
            .map(|&m| {
                let q = 4.0 * (m * m) as f64;
                (q - 1.0) * (q - 9.0) / 128.0
            })
            .collect();
        let big_a: f64 = a.iter().sum();
        let mut big_b: f64 = b.iter().sum();
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                big_b += a[i] * a[j];
            }
        }
        let s = self.cutoff;
        let tail = (2.0 * PI).powf(-h)
            * (s.powf(1.0 - h) / (h - 1.0) - big_a * s.powf(-h) / h + big_b * s.powf(-h - 1.0) / (h + 1.0));
        d * (sum + tail)
    }
}

/// `e^{-s} I_n(s)` for `n = 0..=max`.
pub(crate) fn scaled_bessel_i(s: f64, max: usize) -> Vec<f64> {
    let mut out = vec![0.0; max + 1];
    if s == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let start = max + 30 + (9.0 * s.sqrt()) as usize;
    let (mut hi, mut cur) = (0.0f64, 1e-280f64);
    let mut sum = 0.0;
    for n in (1..=start).rev() {
        // cur = b_n, hi = b_{n+1}
        if n <= max {
            out[n] = cur;
        }
        sum += 2.0 * cur;
        let lo = hi + (2.0 * n as f64 / s) * cur;
        hi = cur;
        cur = lo;
        if cur > 1e250 {
            let scale = 1e-250;
            cur *= scale;
            hi *= scale;
            sum *= scale;
            for v in out.iter_mut().skip(n.min(max + 1)) {
                *v *= scale;
            }
        }
    }
    out[0] = cur;
    sum += cur;
    for v in &mut out {
        *v /= sum;
    }
    out
}

fn flat(x: &[usize], side: usize) -> usize {
    x.iter().fold(0, |acc, &v| acc * side + v)
}

fn next_sorted(x: &mut [usize], max: usize) -> bool {
    // Non-decreasing tuples in lexicographic order.
    let d = x.len();
    let mut k = d;
    while k > 0 {
        k -= 1;
        if x[k] < max {
            let v = x[k] + 1;
            for item in x.iter_mut().skip(k) {
                *item = v;
            }
            return true;
        }
    }
    false
}

fn for_each_permutation(x: &[usize], mut f: impl FnMut(&[usize])) {
    let mut p = x.to_vec();
    p.sort_unstable();
    loop {
        f(&p);
        // next lexicographic permutation
        let n = p.len();
        let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| p[i] < p[i + 1]) else {
            return;
        };
        let j = (i + 1..n).rev().find(|&j| p[j] > p[i]).unwrap();
        p.swap(i, j);
        p[i + 1..].reverse();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn scaled_bessel_small_argument() {
        let b = scaled_bessel_i(0.5, 3);
        // I_0(0.5) = 1.0634833707413236, I_1(0.5) = 0.2578943053908963
        assert_abs_diff_eq!(b[0], 1.0634833707413236 * (-0.5f64).exp(), epsilon = 1e-14);
        assert_abs_diff_eq!(b[1], 0.2578943053908963 * (-0.5f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn scaled_bessel_large_argument() {
        let s = 1e6;
        let b = scaled_bessel_i(s, 5);
        let asym = |n: usize| {
            let mu = 4.0 * (n * n) as f64;
            (1.0 - (mu - 1.0) / (8.0 * s) + (mu - 1.0) * (mu - 9.0) / (128.0 * s * s)) / (2.0 * PI * s).sqrt()
        };
        for n in 0..=5 {
            assert_abs_diff_eq!(b[n], asym(n), epsilon = 1e-15);
        }
    }

    #[test]
    fn closed_form_constants() {
        assert_abs_diff_eq!(asymptotic_constant(3).unwrap(), 3.0 / (2.0 * PI), epsilon = 1e-14);
        assert_abs_diff_eq!(asymptotic_constant(4).unwrap(), 2.0 / (PI * PI), epsilon = 1e-14);
        assert_eq!(asymptotic_constant(2), Err(Error::InvalidDimension(2)));
    }

    #[test]
    fn neighbour_relation() {
        let g = Green::new(3, 4).unwrap();
        assert_abs_diff_eq!(g.at(&[1, 0, 0]), g.at(&[0, 0, 0]) - 1.0, epsilon = 1e-10);
        assert_eq!(g.at(&[1, -2, 3]), g.at(&[3, 2, -1]));
        assert!(g.get(&[5, 0, 0]).is_none());
    }

    #[test]
    fn permutations_cover_all() {
        let mut seen = Vec::new();
        for_each_permutation(&[1, 0, 1], |p| seen.push(p.to_vec()));
        assert_eq!(seen, vec![vec![0, 1, 1], vec![1, 0, 1], vec![1, 1, 0]]);
    }
}
