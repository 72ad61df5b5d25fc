//! Reference samples of the Hermite distributions of order 1 and 2 for the
//! spectral density `|λ|^{α-d}` and the box transfer function
//! `S_0(λ) = Π sin(λ_i)/λ_i`.
//!
//! The Wiener–Itô integral is discretised on the cell-centred grid
//! `λ = (k + 1/2)Δ - cutoff`, `k = 0..N`, which is symmetric under `λ ↦ -λ`
//! and avoids the origin. Writing the complex white noise through real
//! normals on the half grid `λ_1 > 0`, the double integral with the diagonal
//! removed becomes `gᵀAg + g'ᵀBg' - tr A - tr B`, where
//! `A = H(λ_j + λ_k) + H(λ_j - λ_k)`, `B = H(λ_j - λ_k) - H(λ_j + λ_k)` and
//! `H(s) = S_0(s) w_j w_k`. Diagonalising `A` and `B` once gives
//! `Z = Σ μ_i (χ_i² - 1)`, so a sample costs one normal per retained mode.
//! Small modes beyond `modes` are replaced by one Gaussian of the same
//! variance. The result is scaled to unit variance.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{par_replicates, Rng};

/// Samples per random stream in [`HermiteReference::samples`].
const CHUNK: usize = 4096;

/// `Π sin(λ_i) / λ_i`.
pub fn s0(lambda: &[f64]) -> f64 {
    lambda.iter().map(|&x| if x.abs() < 1e-8 { 1.0 - x * x / 6.0 } else { x.sin() / x }).product()
}

/// A prepared reference sampler.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HermiteReference {
    pub order: usize,
    pub dim: usize,
    pub alpha: f64,
    pub grid: usize,
    pub cutoff: f64,
    /// Variance of the discretised integral before scaling.
    pub raw_variance: f64,
    /// Exact skewness and excess kurtosis of the discretised law.
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Fraction of the variance carried by the Gaussian tail replacement.
    pub tail_fraction: f64,
    coefficients: Vec<f64>,
    tail_sd: f64,
}

impl HermiteReference {
    pub fn new(order: usize, dim: usize, alpha: f64, grid: usize, cutoff: f64, modes: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension(dim));
        }
        if !(1..=2).contains(&order) {
            return Err(Error::arg(format!("Hermite order {order} not in 1..=2")));
        }
        if !(alpha > 0.0 && (order as f64) * alpha < dim as f64) {
            return Err(Error::arg(format!("need 0 < {order}α < d, got α = {alpha}, d = {dim}")));
        }
        if grid < 4 || grid % 2 == 1 || !(cutoff > 0.0 && cutoff.is_finite()) {
            return Err(Error::Numerical(format!("grid N = {grid}, cutoff {cutoff} too coarse")));
        }
        let total = grid.checked_pow(dim as u32).filter(|&t| t <= 1 << 14).ok_or_else(|| {
            Error::arg(format!("grid {grid}^{dim} too large for dense diagonalisation"))
        })?;
        let step = 2.0 * cutoff / grid as f64;
        let half: Vec<Vec<f64>> = (0..total)
            .map(|mut i| {
                let mut p = vec![0.0; dim];
                for a in (0..dim).rev() {
                    p[a] = ((i % grid) as f64 + 0.5) * step - cutoff;
                    i /= grid;
                }
                p
            })
            .filter(|p| p[0] > 0.0)
            .collect();
        let cell = step.powi(dim as i32);
        let weight: Vec<f64> = half
            .iter()
            .map(|p| p.iter().map(|x| x * x).sum::<f64>().powf((alpha - dim as f64) / 4.0) * cell.sqrt())
            .collect();
        let mut spectrum: Vec<f64>;
        if order == 1 {
            spectrum = half.iter().zip(&weight).map(|(p, w)| std::f64::consts::SQRT_2 * s0(p) * w).collect();
        } else {
            let n = half.len();
            let mut a = DMatrix::zeros(n, n);
            let mut b = DMatrix::zeros(n, n);
            let mut s = vec![0.0; dim];
            let mut t = vec![0.0; dim];
            for j in 0..n {
                for k in 0..=j {
                    for x in 0..dim {
                        s[x] = half[j][x] + half[k][x];
                        t[x] = half[j][x] - half[k][x];
                    }
                    let ww = weight[j] * weight[k];
                    let (hp, hm) = (s0(&s) * ww, s0(&t) * ww);
                    a[(j, k)] = hp + hm;
                    a[(k, j)] = hp + hm;
                    b[(j, k)] = hm - hp;
                    b[(k, j)] = hm - hp;
                }
            }
            spectrum = a.symmetric_eigenvalues().iter().chain(b.symmetric_eigenvalues().iter()).copied().collect();
        }
        // Cumulants: order 1 is Gaussian; order 2 has κ_r = 2^{r-1}(r-1)! Σ μ^r.
        let (raw_variance, skewness, excess_kurtosis) = if order == 1 {
            (spectrum.iter().map(|c| c * c).sum::<f64>(), 0.0, 0.0)
        } else {
            let p = |r: i32| spectrum.iter().map(|m| m.powi(r)).sum::<f64>();
            let k2 = 2.0 * p(2);
            (k2, 8.0 * p(3) / k2.powf(1.5), 48.0 * p(4) / (k2 * k2))
        };
        if !(raw_variance.is_finite() && raw_variance > 1e-300) {
            return Err(Error::Numerical("variance normalisation unstable; refine the grid".into()));
        }
        let scale = raw_variance.sqrt();
        spectrum.iter_mut().for_each(|m| *m /= scale);
        let (coefficients, tail_var) = if order == 1 {
            (spectrum, 0.0)
        } else {
            spectrum.sort_by(|x, y| y.abs().total_cmp(&x.abs()));
            let keep = modes.min(spectrum.len());
            let tail = 2.0 * spectrum[keep..].iter().map(|m| m * m).sum::<f64>();
            spectrum.truncate(keep);
            (spectrum, tail)
        };
        Ok(Self {
            order,
            dim,
            alpha,
            grid,
            cutoff,
            raw_variance,
            skewness,
            excess_kurtosis,
            tail_fraction: tail_var,
            coefficients,
            tail_sd: tail_var.sqrt(),
        })
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        let mut z = 0.0;
        if self.order == 1 {
            for c in &self.coefficients {
                let g: f64 = rng.sample(StandardNormal);
                z += c * g;
            }
            return z;
        }
        for m in &self.coefficients {
            let g: f64 = rng.sample(StandardNormal);
            z += m * (g * g - 1.0);
        }
        if self.tail_sd > 0.0 {
            let g: f64 = rng.sample(StandardNormal);
            z += self.tail_sd * g;
        }
        z
    }

    /// `n` samples from chunked streams; identical for any worker count.
    pub fn samples(&self, n: usize, seed: u64, tag: u32) -> Vec<f64> {
        let chunks = n.div_ceil(CHUNK);
        par_replicates(chunks, seed, tag, |c, rng| {
            let len = CHUNK.min(n - c * CHUNK);
            (0..len).map(|_| self.sample(rng)).collect::<Vec<f64>>()
        })
        .concat()
    }
}

/// `n` unit-variance Hermite-2 samples drawn sequentially from `rng`.
pub fn sample_hermite2(dim: usize, alpha: f64, grid: usize, cutoff: f64, n: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    let h = HermiteReference::new(2, dim, alpha, grid, cutoff, usize::MAX)?;
    Ok((0..n).map(|_| h.sample(rng)).collect())
}

/// One row of the grid-convergence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub order: usize,
    pub grid: usize,
    pub cutoff: f64,
    pub spacing: f64,
    pub raw_variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

/// Exact moments of the discretised law on several grids.
pub fn grid_convergence(order: usize, dim: usize, alpha: f64, grids: &[(usize, f64)]) -> Result<Vec<GridRow>> {
    grids
        .iter()
        .map(|&(grid, cutoff)| {
            let h = HermiteReference::new(order, dim, alpha, grid, cutoff, 0)?;
            Ok(GridRow {
                order,
                grid,
                cutoff,
                spacing: 2.0 * cutoff / grid as f64,
                raw_variance: h.raw_variance,
                skewness: h.skewness,
                excess_kurtosis: h.excess_kurtosis,
            })
        })
        .collect()
}
