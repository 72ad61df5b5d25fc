//! Hermite polynomials, Wick products and the diagram formula.
//!
//! Polynomials are stored as sparse maps from exponent vectors to `f64`
//! coefficients; with integer or dyadic covariance entries every coefficient
//! produced here is exact.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Multivariate polynomial in `nvars` variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    nvars: usize,
    terms: BTreeMap<Vec<u32>, f64>,
}

impl Poly {
    pub fn zero(nvars: usize) -> Self {
        Self { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(vec![0; nvars], c);
        p
    }

    /// The monomial `x^β`.
    pub fn monomial(beta: &[u32]) -> Self {
        let mut p = Self::zero(beta.len());
        p.add_term(beta.to_vec(), 1.0);
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32], f64)> {
        self.terms.iter().map(|(k, v)| (k.as_slice(), *v))
    }

    pub fn coeff(&self, beta: &[u32]) -> f64 {
        self.terms.get(beta).copied().unwrap_or(0.0)
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|k| k.iter().sum()).max().unwrap_or(0)
    }

    pub fn add_term(&mut self, beta: Vec<u32>, c: f64) {
        if c == 0.0 {
            return;
        }
        let e = self.terms.entry(beta.clone()).or_insert(0.0);
        *e += c;
        if *e == 0.0 {
            self.terms.remove(&beta);
        }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (k, v) in &other.terms {
            out.add_term(k.clone(), *v);
        }
        out
    }

    pub fn scale(&self, c: f64) -> Poly {
        let mut out = Poly::zero(self.nvars);
        for (k, v) in &self.terms {
            out.add_term(k.clone(), v * c);
        }
        out
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero(self.nvars);
        for (a, ca) in &self.terms {
            for (b, cb) in &other.terms {
                let k: Vec<u32> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                out.add_term(k, ca * cb);
            }
        }
        out
    }

    /// `x_i · p`
    pub fn mul_var(&self, i: usize) -> Poly {
        let mut out = Poly::zero(self.nvars);
        for (k, v) in &self.terms {
            let mut k = k.clone();
            k[i] += 1;
            out.add_term(k, *v);
        }
        out
    }

    /// `∂p / ∂x_i`
    pub fn derivative(&self, i: usize) -> Poly {
        let mut out = Poly::zero(self.nvars);
        for (k, v) in &self.terms {
            if k[i] > 0 {
                let mut k2 = k.clone();
                k2[i] -= 1;
                out.add_term(k2, v * k[i] as f64);
            }
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(k, v)| v * k.iter().zip(x).map(|(&e, &xi)| xi.powi(e as i32)).product::<f64>())
            .sum()
    }

    /// `p(x + shift)` as a polynomial in `x`.
    pub fn shift(&self, shift: &[f64]) -> Poly {
        let mut out = Poly::zero(self.nvars);
        for (k, v) in &self.terms {
            // Expand Π (x_i + s_i)^{k_i} by iterating over sub-exponents.
            let mut sub = vec![0u32; self.nvars];
            loop {
                let mut c = *v;
                for i in 0..self.nvars {
                    c *= binomial(k[i], sub[i]) * shift[i].powi((k[i] - sub[i]) as i32);
                }
                out.add_term(sub.clone(), c);
                let mut i = 0;
                while i < self.nvars {
                    if sub[i] < k[i] {
                        sub[i] += 1;
                        break;
                    }
                    sub[i] = 0;
                    i += 1;
                }
                if i == self.nvars {
                    break;
                }
            }
        }
        out
    }

    /// `E[p(X)]` for `X ~ N(mean, cov)`.
    pub fn gaussian_expectation(&self, mean: &[f64], cov: &DMatrix<f64>) -> f64 {
        let centred = self.shift(mean);
        let mut memo = BTreeMap::new();
        centred.terms.iter().map(|(k, v)| v * centred_moment(k, cov, &mut memo)).sum()
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

fn multi_factorial(a: &[u32]) -> f64 {
    a.iter().map(|&k| factorial(k)).product()
}

/// `E[Z^β]` for centred `Z ~ N(0, cov)` by Isserlis' recursion on the first index.
fn centred_moment(beta: &[u32], cov: &DMatrix<f64>, memo: &mut BTreeMap<Vec<u32>, f64>) -> f64 {
    let total: u32 = beta.iter().sum();
    if total == 0 {
        return 1.0;
    }
    if total % 2 == 1 {
        return 0.0;
    }
    if let Some(v) = memo.get(beta) {
        return *v;
    }
    let i = beta.iter().position(|&b| b > 0).unwrap();
    let mut rest = beta.to_vec();
    rest[i] -= 1;
    let mut acc = 0.0;
    for j in 0..beta.len() {
        if rest[j] == 0 || cov[(i, j)] == 0.0 {
            continue;
        }
        let mult = rest[j] as f64;
        rest[j] -= 1;
        acc += mult * cov[(i, j)] * centred_moment(&rest, cov, memo);
        rest[j] += 1;
    }
    memo.insert(beta.to_vec(), acc);
    acc
}

/// Probabilists' Hermite polynomial `H_n(x)`.
pub fn hermite_1d(n: u32, x: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, x);
    if n == 0 {
        return h0;
    }
    for k in 1..n {
        let h2 = x * h1 - k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// `H^α_X = (-1)^{|α|} ∂^α φ_X / φ_X` for `X ~ N(0, cov)`.
pub fn hermite_multivariate(cov: &DMatrix<f64>, alpha: &[u32]) -> Result<Poly> {
    let n = cov.nrows();
    if alpha.len() != n {
        return Err(Error::arg("multi-index length differs from the dimension"));
    }
    let prec = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Hermite covariance".into()))?
        .inverse();
    // (Ax)_i as polynomials.
    let lin: Vec<Poly> = (0..n)
        .map(|i| {
            let mut p = Poly::zero(n);
            for j in 0..n {
                let mut e = vec![0; n];
                e[j] = 1;
                p.add_term(e, prec[(i, j)]);
            }
            p
        })
        .collect();
    let mut p = Poly::constant(n, 1.0);
    for (i, &a) in alpha.iter().enumerate() {
        for _ in 0..a {
            p = lin[i].mul(&p).add(&p.derivative(i).scale(-1.0));
        }
    }
    Ok(p)
}

/// Explicit constant version of the pointwise bound
/// `|H^α_X(x)| ≤ k^{p/2} λ^{-p/2} sqrt(p!) exp(sqrt(p k / λ) (|x|_2 + 1))`,
/// with `k = dim X`, `p = |α|`, `λ = min(1, λ_min(X))`.
pub fn hermite_bound(k: usize, p: u32, lambda_min: f64, norm_x: f64) -> f64 {
    let lam = lambda_min.min(1.0);
    let pf = p as f64;
    (k as f64).powf(pf / 2.0) * lam.powf(-pf / 2.0) * factorial(p).sqrt()
        * ((pf * k as f64 / lam).sqrt() * (norm_x + 1.0)).exp()
}

/// Univariate bound `sqrt(n!) e^{sqrt(n) |y|}`.
pub fn hermite_1d_bound(n: u32, y: f64) -> f64 {
    factorial(n).sqrt() * ((n as f64).sqrt() * y.abs()).exp()
}

/// Wick product `:X_{i_1} ⋯ X_{i_m}:` as a polynomial in the components of `X ~ N(0, cov)`.
/// Repeated indices are allowed.
pub fn wick_polynomial(cov: &DMatrix<f64>, idx: &[usize]) -> Result<Poly> {
    let n = cov.nrows();
    if idx.iter().any(|&i| i >= n) {
        return Err(Error::arg("Wick index out of range"));
    }
    let mut out = Poly::zero(n);
    let mut used = vec![false; idx.len()];
    let mut beta = vec![0u32; n];
    partial_matchings(idx, cov, &mut used, &mut beta, 1.0, &mut out);
    Ok(out)
}

// Each position is either a free variable or paired (with factor -K) with a later free position.
fn partial_matchings(idx: &[usize], cov: &DMatrix<f64>, used: &mut [bool], beta: &mut [u32], coef: f64, out: &mut Poly) {
    let Some(first) = used.iter().position(|u| !u) else {
        out.add_term(beta.to_vec(), coef);
        return;
    };
    used[first] = true;
    beta[idx[first]] += 1;
    partial_matchings(idx, cov, used, beta, coef, out);
    beta[idx[first]] -= 1;
    for j in first + 1..idx.len() {
        let k = cov[(idx[first], idx[j])];
        if used[j] || k == 0.0 {
            continue;
        }
        used[j] = true;
        partial_matchings(idx, cov, used, beta, -coef * k, out);
        used[j] = false;
    }
    used[first] = false;
}

/// All perfect matchings of the vertices of rows with the given sizes that
/// never join two vertices of the same row. Vertices are numbered row by row.
pub fn enumerate_diagrams(row_sizes: &[usize]) -> Vec<Vec<(usize, usize)>> {
    let row: Vec<usize> = row_sizes.iter().enumerate().flat_map(|(r, &s)| std::iter::repeat_n(r, s)).collect();
    let mut out = Vec::new();
    let mut used = vec![false; row.len()];
    let mut cur = Vec::new();
    fn rec(row: &[usize], used: &mut [bool], cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        let Some(a) = used.iter().position(|u| !u) else {
            out.push(cur.clone());
            return;
        };
        used[a] = true;
        for b in a + 1..row.len() {
            if !used[b] && row[b] != row[a] {
                used[b] = true;
                cur.push((a, b));
                rec(row, used, cur, out);
                cur.pop();
                used[b] = false;
            }
        }
        used[a] = false;
    }
    rec(&row, &mut used, &mut cur, &mut out);
    out
}

/// `E[Π_r :Π_{i ∈ rows[r]} X_i:]` by the diagram formula.
pub fn wick_moment(cov: &DMatrix<f64>, rows: &[Vec<usize>]) -> f64 {
    let vertices: Vec<(usize, usize)> =
        rows.iter().enumerate().flat_map(|(r, v)| v.iter().map(move |&i| (r, i))).collect();
    if vertices.len() % 2 == 1 {
        return 0.0;
    }
    fn rec(v: &[(usize, usize)], used: &mut [bool], cov: &DMatrix<f64>) -> f64 {
        let Some(a) = used.iter().position(|u| !u) else {
            return 1.0;
        };
        used[a] = true;
        let mut acc = 0.0;
        for b in a + 1..v.len() {
            if !used[b] && v[b].0 != v[a].0 {
                let k = cov[(v[a].1, v[b].1)];
                if k != 0.0 {
                    used[b] = true;
                    acc += k * rec(v, used, cov);
                    used[b] = false;
                }
            }
        }
        used[a] = false;
        acc
    }
    let mut used = vec![false; vertices.len()];
    rec(&vertices, &mut used, cov)
}

/// Conditional moment of a product of two Hermite polynomials of the vector
/// `(X_I, Y_J)` given `X_I = x`. The first `n_i` coordinates of `cov` form `X_I`.
#[allow(clippy::too_many_arguments)]
pub fn conditional_hermite_moment(
    cov: &DMatrix<f64>,
    n_i: usize,
    alpha_i: &[u32],
    alpha_j: &[u32],
    alpha_i2: &[u32],
    alpha_j2: &[u32],
    x: &[f64],
) -> Result<f64> {
    let n = cov.nrows();
    let n_j = n - n_i;
    if alpha_i.len() != n_i || alpha_i2.len() != n_i || alpha_j.len() != n_j || alpha_j2.len() != n_j || x.len() != n_i
    {
        return Err(Error::arg("multi-index lengths do not match the block sizes"));
    }
    let prec = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("joint covariance".into()))?
        .inverse();
    let cov_i = cov.view((0, 0), (n_i, n_i)).into_owned();
    let sum_j: u32 = alpha_j.iter().sum();
    let sum_j2: u32 = alpha_j2.iter().sum();
    let base = multi_factorial(alpha_i) * multi_factorial(alpha_j) * multi_factorial(alpha_i2) * multi_factorial(alpha_j2);
    let mut total = 0.0;
    for hat in sub_indices(alpha_i) {
        for hat2 in sub_indices(alpha_i2) {
            let lhs: u32 = hat.iter().sum::<u32>() + sum_j;
            let rhs: u32 = hat2.iter().sum::<u32>() + sum_j2;
            if lhs != rhs {
                continue;
            }
            let rest: Vec<u32> = alpha_i.iter().zip(&hat).map(|(a, h)| a - h).collect();
            let rest2: Vec<u32> = alpha_i2.iter().zip(&hat2).map(|(a, h)| a - h).collect();
            let coef = base / (multi_factorial(&rest) * multi_factorial(&rest2));
            let rows: Vec<u32> = hat.iter().chain(alpha_j).copied().collect();
            let cols: Vec<u32> = hat2.iter().chain(alpha_j2).copied().collect();
            let tables = contingency_sum(&rows, &cols, &prec);
            if tables == 0.0 {
                continue;
            }
            let bar: Vec<u32> = rest.iter().zip(&rest2).map(|(a, b)| a + b).collect();
            let h = hermite_multivariate(&cov_i, &bar)?.eval(x);
            total += coef * tables * h;
        }
    }
    Ok(total)
}

/// All multi-indices `β ≤ α`.
fn sub_indices(alpha: &[u32]) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new()];
    for &a in alpha {
        out = out.into_iter().flat_map(|p| (0..=a).map(move |b| [p.clone(), vec![b]].concat())).collect();
    }
    out
}

/// `Σ_θ A^θ / θ!` over non-negative integer matrices with the given row and column sums.
fn contingency_sum(rows: &[u32], cols: &[u32], a: &DMatrix<f64>) -> f64 {
    let n = rows.len();
    fn rec(r: usize, c: usize, rows: &mut [u32], cols: &mut [u32], a: &DMatrix<f64>, n: usize) -> f64 {
        if r == n {
            return if cols.iter().all(|&v| v == 0) { 1.0 } else { 0.0 };
        }
        if c == n - 1 {
            // Last column takes the remaining row sum.
            let v = rows[r];
            if v > cols[c] {
                return 0.0;
            }
            cols[c] -= v;
            let saved = rows[r];
            rows[r] = 0;
            let sub = rec(r + 1, 0, rows, cols, a, n);
            rows[r] = saved;
            cols[c] += v;
            return sub * a[(r, c)].powi(v as i32) / factorial(v);
        }
        let mut acc = 0.0;
        let max = rows[r].min(cols[c]);
        for v in 0..=max {
            rows[r] -= v;
            cols[c] -= v;
            acc += a[(r, c)].powi(v as i32) / factorial(v) * rec(r, c + 1, rows, cols, a, n);
            rows[r] += v;
            cols[c] += v;
        }
        acc
    }
    let mut rows = rows.to_vec();
    let mut cols = cols.to_vec();
    if rows.iter().sum::<u32>() != cols.iter().sum::<u32>() {
        return 0.0;
    }
    rec(0, 0, &mut rows, &mut cols, a, n)
}

/// How a functional of `X ~ N(0, cov)` is presented to [`chaos_project`].
pub enum ChaosInput<'a> {
    /// Only evaluations `Φ(x)` are available; coefficients are regressed on samples.
    BlackBox(&'a (dyn Fn(&[f64]) -> f64 + Sync)),
    /// `E[∂^A Φ(X)]` for each sorted multiset `A` of coordinates.
    Smooth(&'a dyn Fn(&[usize]) -> f64),
}

/// `Q_m[Φ] = Σ_A c_A :X_A:` over sorted multisets `A` of size `m`.
#[derive(Debug, Clone)]
pub struct ChaosProjection {
    pub order: usize,
    pub monomials: Vec<Vec<usize>>,
    pub coefficients: Vec<f64>,
    pub variance: f64,
    /// Condition number of the Wick Gram matrix, for the black-box path.
    pub condition_number: Option<f64>,
}

impl ChaosProjection {
    pub fn eval(&self, cov: &DMatrix<f64>, x: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for (a, c) in self.monomials.iter().zip(&self.coefficients) {
            acc += c * wick_polynomial(cov, a)?.eval(x);
        }
        Ok(acc)
    }
}

/// Dimension and order cap of the regression path.
pub const MAX_REGRESSION_SIZE: usize = 8;

/// Projection of a functional onto the `m`-th chaos of `N(0, cov)`.
pub fn chaos_project(
    cov: &DMatrix<f64>,
    input: ChaosInput<'_>,
    m: usize,
    samples: usize,
    rng: &mut crate::rng::Rng,
) -> Result<ChaosProjection> {
    let n = cov.nrows();
    let monomials = crate::chaos::multisets(n, m);
    let k = monomials.len();
    let gram = DMatrix::from_fn(k, k, |i, j| wick_moment(cov, &[monomials[i].clone(), monomials[j].clone()]));
    let (coefficients, condition_number) = match input {
        ChaosInput::Smooth(deriv) => {
            let c = monomials.iter().map(|a| deriv(a) / multiset_factorial(a)).collect::<Vec<_>>();
            (c, None)
        }
        ChaosInput::BlackBox(phi) => {
            if n > MAX_REGRESSION_SIZE || m > MAX_REGRESSION_SIZE {
                return Err(Error::Capacity { sites: n.max(m) as u128, limit: MAX_REGRESSION_SIZE as u128 });
            }
            if samples < 2 {
                return Err(Error::arg("regression needs samples"));
            }
            let eig = gram.clone().symmetric_eigenvalues();
            let cond = eig.max() / eig.min();
            if !(cond.is_finite() && cond < 1e12) {
                return Err(Error::Numerical(format!("Wick Gram matrix condition number {cond:.3e}")));
            }
            let sampler = crate::gaussian::ExactSampler::from_matrix(cov.clone())?;
            let polys: Vec<Poly> = monomials.iter().map(|a| wick_polynomial(cov, a)).collect::<Result<_>>()?;
            let mut b = nalgebra::DVector::zeros(k);
            for _ in 0..samples {
                let x = sampler.sample(rng);
                let y = phi(&x);
                for (bi, p) in b.iter_mut().zip(&polys) {
                    *bi += y * p.eval(&x);
                }
            }
            b /= samples as f64;
            let c = gram
                .clone()
                .cholesky()
                .ok_or_else(|| Error::NotPositiveDefinite("Wick Gram matrix".into()))?
                .solve(&b);
            (c.iter().copied().collect(), Some(cond))
        }
    };
    let c = nalgebra::DVector::from_column_slice(&coefficients);
    let variance = c.dot(&(&gram * &c));
    Ok(ChaosProjection { order: m, monomials, coefficients, variance, condition_number })
}

fn multiset_factorial(a: &[usize]) -> f64 {
    let mut f = 1.0;
    let mut run = 1.0;
    for i in 1..a.len() {
        if a[i] == a[i - 1] {
            run += 1.0;
            f *= run;
        } else {
            run = 1.0;
        }
    }
    f
}
