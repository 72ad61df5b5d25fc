//! Chaos expansion of level-set functionals.
//!
//! The `m`-th chaos of `Ξ(f - ν)` is `(1/m!) Σ :f(x_1)⋯f(x_m): P(ν; x)` over
//! ordered tuples. Tables here are indexed by sorted multisets instead, so
//! every entry carries the weight `1/α!` of its multi-index.

mod pivotal;

pub use pivotal::*;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::clusters::LevelSetFunctional;
use crate::error::{Error, Result};
use crate::lattice::{dist_inf, Site};
use crate::numeric::gauss_legendre_on;
use crate::stats::Estimate;

/// Sorted multisets of size `m` drawn from `0..n`.
pub fn multisets(n: usize, m: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, m: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(n, m, i, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, m, 0, &mut Vec::with_capacity(m), &mut out);
    out
}

/// `Π_i α_i!` of the multi-index of a sorted multiset.
fn multiplicity_factorial(points: &[usize]) -> f64 {
    let (_, mult) = support_with_multiplicity(points);
    mult.iter().map(|&a| (1..=a).map(f64::from).product::<f64>()).product()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    /// Sorted site indices.
    pub points: Vec<usize>,
    pub value: f64,
    pub stderr: f64,
}

/// Order-`m` intensity table of a functional on a finite domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosComponentSpec {
    pub order: usize,
    pub level: f64,
    pub sites: usize,
    /// Entries beyond this `ℓ^∞` diameter were not estimated.
    pub cutoff: Option<i64>,
    pub entries: Vec<TableEntry>,
}

/// Estimate every order-`m` intensity on the domain, skipping multisets whose
/// support is wider than `cutoff`.
pub fn intensity_table(
    ed: &ExactDomain,
    functional: &dyn LevelSetFunctional,
    level: f64,
    m: usize,
    cutoff: Option<i64>,
    samples: usize,
    seed: u64,
) -> Result<ChaosComponentSpec> {
    if m == 0 {
        return Err(Error::arg("chaos order must be at least 1"));
    }
    let levels = vec![level; ed.len()];
    let mut entries = Vec::new();
    for (i, pts) in multisets(ed.len(), m).into_iter().enumerate() {
        if let Some(r) = cutoff {
            let coords: Vec<Site> = pts.iter().map(|&p| ed.domain.coords(p).to_vec()).collect();
            if crate::lattice::diam_inf(&coords) > r {
                continue;
            }
        }
        let e = pivotal_intensity(ed, functional, &levels, &pts, samples, seed.wrapping_add(i as u64 * 7919))?;
        entries.push(TableEntry { points: pts, value: e.value, stderr: e.stderr });
    }
    Ok(ChaosComponentSpec { order: m, level, sites: ed.len(), cutoff, entries })
}

/// `:x_{p_1}⋯x_{p_m}:` under covariance `cov`, by the recursion
/// `:X_S X_j: = X_j :X_S: - Σ_{i∈S} K_{ij} :X_{S∖i}:` over subsets.
pub fn wick_eval(cov: &DMatrix<f64>, points: &[usize], x: &[f64]) -> f64 {
    let m = points.len();
    assert!(m <= 20, "Wick product of order {m} is too large");
    let mut w = vec![0.0; 1 << m];
    w[0] = 1.0;
    for s in 1usize..1 << m {
        let j = usize::BITS as usize - 1 - s.leading_zeros() as usize;
        let rest = s & !(1 << j);
        let pj = points[j];
        let mut v = x[pj] * w[rest];
        let mut r = rest;
        while r != 0 {
            let i = r.trailing_zeros() as usize;
            v -= cov[(points[i], pj)] * w[rest & !(1 << i)];
            r &= r - 1;
        }
        w[s] = v;
    }
    w[(1 << m) - 1]
}

/// Value of `Q_m` on one field realisation.
pub fn chaos_component(spec: &ChaosComponentSpec, cov: &DMatrix<f64>, sample: &[f64]) -> Result<f64> {
    if sample.len() != spec.sites || cov.nrows() != spec.sites {
        return Err(Error::arg("table, covariance and sample sizes differ"));
    }
    Ok(spec
        .entries
        .iter()
        .map(|e| e.value / multiplicity_factorial(&e.points) * wick_eval(cov, &e.points, sample))
        .sum())
}

/// Permanent by Ryser's formula.
pub fn permanent(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 1.0;
    }
    let mut total = 0.0;
    for s in 1usize..1 << n {
        let mut prod = 1.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                if s >> j & 1 == 1 {
                    row += a[(i, j)];
                }
            }
            prod *= row;
        }
        let sign = if (n - s.count_ones() as usize).is_multiple_of(2) { 1.0 } else { -1.0 };
        total += sign * prod;
    }
    total
}

/// `E[:f(A): :f(B):] / (α! β!)`, the pair weight of two table entries.
fn pair_weight(cov: &DMatrix<f64>, a: &[usize], b: &[usize]) -> f64 {
    let k = DMatrix::from_fn(a.len(), b.len(), |i, j| cov[(a[i], b[j])]);
    permanent(&k) / (multiplicity_factorial(a) * multiplicity_factorial(b))
}

fn pair_matrix(spec: &ChaosComponentSpec, cov: &DMatrix<f64>) -> DMatrix<f64> {
    let n = spec.entries.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let w = pair_weight(cov, &spec.entries[i].points, &spec.entries[j].points);
            m[(i, j)] = w;
            m[(j, i)] = w;
        }
    }
    m
}

/// `Var[Q_m] = (1/m!) Σ_{x,y} Π_i K(x_i, y_i) P(x) P(y)` over ordered tuples.
pub fn chaos_component_variance(spec: &ChaosComponentSpec, cov: &DMatrix<f64>) -> f64 {
    let m = pair_matrix(spec, cov);
    let p = nalgebra::DVector::from_iterator(spec.entries.len(), spec.entries.iter().map(|e| e.value));
    p.dot(&(&m * &p))
}

/// Delta-method standard error of [`chaos_component_variance`] from the table errors.
pub fn chaos_component_variance_stderr(spec: &ChaosComponentSpec, cov: &DMatrix<f64>) -> f64 {
    let m = pair_matrix(spec, cov);
    let p = nalgebra::DVector::from_iterator(spec.entries.len(), spec.entries.iter().map(|e| e.value));
    let grad = (&m * &p) * 2.0;
    grad.iter().zip(&spec.entries).map(|(g, e)| (g * e.stderr).powi(2)).sum::<f64>().sqrt()
}

/// Tail variance `Var[Σ_{m' ≥ m} Q_{m'}]` by the interpolation formula.
///
/// The nested integral over `1 > t_1 > … > t_m > 0` collapses to
/// `∫_0^1 P^s(x;y) (1-s)^{m-1}/(m-1)! ds`; with `s = 1 - u²` the
/// `(1-s)^{-m+1/2}` growth of `P^s` becomes a bounded integrand in `u`.
pub fn tail_variance(
    ed: &ExactDomain,
    functional: &dyn LevelSetFunctional,
    level: f64,
    m: usize,
    nodes: usize,
    samples: usize,
    seed: u64,
) -> Result<Estimate> {
    if m == 0 || nodes == 0 {
        return Err(Error::arg("order and node count must be positive"));
    }
    let (us, ws) = gauss_legendre_on(0.0, 1.0, nodes);
    let grid: Vec<(f64, f64)> = us
        .iter()
        .zip(&ws)
        .map(|(&u, &w)| (1.0 - u * u, w * 2.0 * u.powi(2 * m as i32 - 1) / factorial(m - 1)))
        .collect();
    if grid.iter().any(|(s, _)| *s >= 1.0) {
        return Err(Error::arg("quadrature node at t = 1"));
    }
    let levels = vec![level; ed.len()];
    let sets = multisets(ed.len(), m);
    let (mut total, mut var) = (0.0, 0.0);
    let mut job = 0u64;
    for (i, a) in sets.iter().enumerate() {
        for b in &sets[i..] {
            let sym = if a == b { 1.0 } else { 2.0 };
            let c = sym * pair_weight(&ed.cov, a, b) * factorial(m);
            if c == 0.0 {
                continue;
            }
            for &(s, w) in &grid {
                job += 1;
                let e = joint_pivotal_intensity(ed, functional, &levels, a, b, s, samples, seed.wrapping_add(job * 104_729))?;
                total += c * w * e.value;
                var += (c * w * e.stderr).powi(2);
            }
        }
    }
    Ok(Estimate { value: total, stderr: var.sqrt(), n: samples })
}

/// Estimate of `μ^{(m)}(ℓ)` from stationary intensities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MuDerivative {
    pub order: usize,
    pub level: f64,
    pub value: f64,
    pub stderr: f64,
    /// Offsets range over `Λ_r`.
    pub truncation: i64,
    /// Contribution of tuples whose farthest offset lies on `∂Λ_r`; a proxy for the neglected tail.
    pub outer_shell: f64,
    pub tuples: usize,
}

/// `μ^{(m)}(ℓ) = (-1)^m Σ P_∞(0, x_2, …, x_m)`, offsets truncated to `Λ_r`.
pub fn mu_derivative(cfg: &StationaryConfig, m: usize, r: i64) -> Result<MuDerivative> {
    if !(1..=3).contains(&m) {
        return Err(Error::arg("μ derivatives are implemented for orders 1 to 3"));
    }
    if cfg.shape != WindowShape::Bulk || cfg.radius < r + 2 {
        return Err(Error::arg("needs a bulk window of radius at least r + 2"));
    }
    let d = cfg.dim;
    let offsets: Vec<Site> = crate::lattice::LatticeBox::new(d, r)?.sites().collect();
    let origin = vec![0i64; d];
    let mut tuples: Vec<Vec<Site>> = vec![vec![origin.clone()]];
    for _ in 1..m {
        tuples = tuples
            .into_iter()
            .flat_map(|t| {
                offsets.iter().map(move |x| {
                    let mut t = t.clone();
                    t.push(x.clone());
                    t
                })
            })
            .collect();
    }
    let sign = if m.is_multiple_of(2) { 1.0 } else { -1.0 };
    let weights = vec![sign; tuples.len()];
    let batch = stationary_batch(cfg, &crate::clusters::CountFunctional, &tuples, &weights)?;
    let outer: f64 = tuples
        .iter()
        .zip(&batch.estimates)
        .filter(|(t, _)| t.iter().map(|x| dist_inf(x, &origin)).max() == Some(r) && r > 0)
        .map(|(_, e)| sign * e.value)
        .sum();
    Ok(MuDerivative {
        order: m,
        level: cfg.level,
        value: batch.total.value,
        stderr: batch.total.stderr,
        truncation: r,
        outer_shell: outer,
        tuples: tuples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::wick_polynomial;

    #[test]
    fn multiset_counts() {
        assert_eq!(multisets(4, 2).len(), 10);
        assert_eq!(multisets(4, 6).len(), 84);
        assert_eq!(multisets(3, 0), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn wick_recursion_matches_polynomial() {
        let cov = DMatrix::from_row_slice(3, 3, &[1.5, 0.4, 0.2, 0.4, 1.0, -0.3, 0.2, -0.3, 2.0]);
        let x = [0.7, -1.1, 0.4];
        for pts in [vec![0, 1, 2], vec![0, 0, 1], vec![2, 2, 2, 1], vec![1]] {
            let poly = wick_polynomial(&cov, &pts).unwrap();
            assert!((poly.eval(&x) - wick_eval(&cov, &pts, &x)).abs() < 1e-12);
        }
    }

    #[test]
    fn permanent_small() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert!((permanent(&a) - 10.0).abs() < 1e-12);
        let ones = DMatrix::from_element(4, 4, 1.0);
        assert!((permanent(&ones) - 24.0).abs() < 1e-12);
    }
}
