//! Centred Gaussian fields on finite sets of sites.
//!
//! Exact sampling uses a Cholesky factor of the restricted covariance;
//! [`TorusSampler`] is the spectral sampler for large windows. Conditioning
//! on pinned values is exposed both as an explicit conditional law
//! ([`ConditionalGaussian`]) and as a linear correction applied to an
//! unconditioned sample ([`PinUpdate`]).

mod torus;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::green::Green;
use crate::lattice::{LatticeBox, Site};
use crate::rng::Rng;

pub use torus::{TorusSampler, MIN_MARGIN};

/// Largest restriction the exact sampler will factor.
pub const MAX_EXACT_SITES: usize = 20_000;

/// A stationary or explicit covariance on `Z^d`.
#[derive(Debug, Clone)]
pub enum CovarianceModel {
    /// Discrete Gaussian free field, `K(x, y) = G(x - y)`.
    Gff { dim: usize },
    /// Independent standard normals.
    Iid { dim: usize },
    /// An explicit positive-definite matrix over a listed set of sites.
    Explicit { sites: Vec<Site>, matrix: DMatrix<f64> },
}

impl CovarianceModel {
    pub fn gff(dim: usize) -> Result<Self> {
        if dim < 3 {
            return Err(Error::InvalidDimension(dim));
        }
        Ok(Self::Gff { dim })
    }

    pub fn explicit(sites: Vec<Site>, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != sites.len() || matrix.ncols() != sites.len() {
            return Err(Error::arg("explicit covariance must be square over the listed sites"));
        }
        if matrix.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("explicit covariance".into()));
        }
        Ok(Self::Explicit { sites, matrix })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gff { dim } | Self::Iid { dim } => *dim,
            Self::Explicit { sites, .. } => sites.first().map_or(0, |s| s.len()),
        }
    }

    /// Lower bound `κ²` on the spectrum of every restriction.
    ///
    /// For the free field the spectral density times `(2π)^d` is `1/(1 - φ(θ)) ≥ 1/2`.
    pub fn kappa_sq(&self) -> f64 {
        match self {
            Self::Gff { .. } => 0.5,
            Self::Iid { .. } => 1.0,
            Self::Explicit { matrix, .. } => matrix.clone().symmetric_eigenvalues().min(),
        }
    }

    /// Covariance matrix of `f` restricted to `sites`.
    pub fn matrix(&self, sites: &[Site]) -> Result<DMatrix<f64>> {
        let n = sites.len();
        match self {
            Self::Gff { dim } => {
                let mut r = 0i64;
                for a in sites {
                    for b in sites {
                        for (u, v) in a.iter().zip(b) {
                            r = r.max((u - v).abs());
                        }
                    }
                }
                let g = Green::shared(*dim, r as usize)?;
                Ok(DMatrix::from_fn(n, n, |i, j| g.cov(&sites[i], &sites[j])))
            }
            Self::Iid { .. } => Ok(DMatrix::from_fn(n, n, |i, j| if sites[i] == sites[j] { 1.0 } else { 0.0 })),
            Self::Explicit { sites: own, matrix } => {
                let idx: Vec<usize> = sites
                    .iter()
                    .map(|s| own.iter().position(|o| o == s).ok_or_else(|| Error::OutOfDomain(s.clone())))
                    .collect::<Result<_>>()?;
                Ok(DMatrix::from_fn(n, n, |i, j| matrix[(idx[i], idx[j])]))
            }
        }
    }
}

/// Exact sampler for a fixed list of sites.
#[derive(Debug, Clone)]
pub struct ExactSampler {
    chol: Option<Arc<DMatrix<f64>>>,
    n: usize,
}

impl ExactSampler {
    pub fn new(model: &CovarianceModel, sites: &[Site]) -> Result<Self> {
        if sites.len() > MAX_EXACT_SITES {
            return Err(Error::Capacity { sites: sites.len() as u128, limit: MAX_EXACT_SITES as u128 });
        }
        if let CovarianceModel::Iid { .. } = model {
            return Ok(Self { chol: None, n: sites.len() });
        }
        Self::from_matrix(model.matrix(sites)?)
    }

    pub fn from_matrix(cov: DMatrix<f64>) -> Result<Self> {
        let n = cov.nrows();
        let l = cov
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite(format!("{n}-site restriction")))?
            .l();
        Ok(Self { chol: Some(Arc::new(l)), n })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let z: Vec<f64> = (0..self.n).map(|_| rng.sample(StandardNormal)).collect();
        match &self.chol {
            None => z,
            Some(l) => lower_mul(l, &z),
        }
    }
}

/// Exact sample of `f` on a box, in the box's site order.
pub fn sample_exact(model: &CovarianceModel, b: &LatticeBox, rng: &mut Rng) -> Result<Vec<f64>> {
    let sites: Vec<Site> = b.sites().collect();
    Ok(ExactSampler::new(model, &sites)?.sample(rng))
}

pub(crate) fn lower_mul(l: &DMatrix<f64>, z: &[f64]) -> Vec<f64> {
    let n = z.len();
    let mut out = vec![0.0; n];
    for j in 0..n {
        let zj = z[j];
        if zj == 0.0 {
            continue;
        }
        let col = l.column(j);
        for i in j..n {
            out[i] += col[i] * zj;
        }
    }
    out
}

/// Conditional law of a Gaussian vector given some coordinates.
///
/// Besides sampling the free coordinates, it exposes the reverse regression
/// of the pinned block on the free block, which is what the Hermite factor of
/// repeated-point intensities needs.
#[derive(Debug, Clone)]
pub struct ConditionalGaussian {
    pinned: Vec<usize>,
    free: Vec<usize>,
    n: usize,
    /// `Σ_{fp} Σ_{pp}^{-1}`
    regress: DMatrix<f64>,
    chol_free: DMatrix<f64>,
    cov_pinned: DMatrix<f64>,
    /// `Σ_{pf} Σ_{ff}^{-1}`
    reverse: DMatrix<f64>,
    /// `Σ_{pp} - Σ_{pf} Σ_{ff}^{-1} Σ_{fp}`
    cov_pinned_given_free: DMatrix<f64>,
}

impl ConditionalGaussian {
    pub fn new(cov: &DMatrix<f64>, pinned: &[usize]) -> Result<Self> {
        let n = cov.nrows();
        let mut is_pinned = vec![false; n];
        for &p in pinned {
            if p >= n || is_pinned[p] {
                return Err(Error::arg(format!("pinned index {p} invalid or repeated")));
            }
            is_pinned[p] = true;
        }
        let free: Vec<usize> = (0..n).filter(|&i| !is_pinned[i]).collect();
        let sub = |r: &[usize], c: &[usize]| DMatrix::from_fn(r.len(), c.len(), |i, j| cov[(r[i], c[j])]);
        let s_pp = sub(pinned, pinned);
        let s_fp = sub(&free, pinned);
        let s_ff = sub(&free, &free);
        let pp_chol = s_pp
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("pinned block".into()))?;
        let regress = pp_chol.solve(&s_fp.transpose()).transpose();
        let schur = &s_ff - &regress * s_fp.transpose();
        let chol_free = if free.is_empty() {
            DMatrix::zeros(0, 0)
        } else {
            symmetrize(schur)
                .cholesky()
                .ok_or_else(|| Error::NotPositiveDefinite("conditional covariance".into()))?
                .l()
        };
        let (reverse, cov_pinned_given_free) = if free.is_empty() {
            (DMatrix::zeros(pinned.len(), 0), s_pp.clone())
        } else {
            let ff = s_ff
                .clone()
                .cholesky()
                .ok_or_else(|| Error::NotPositiveDefinite("free block".into()))?;
            let rev = ff.solve(&s_fp).transpose();
            let c = &s_pp - &rev * &s_fp;
            (rev, symmetrize(c))
        };
        Ok(Self {
            pinned: pinned.to_vec(),
            free,
            n,
            regress,
            chol_free,
            cov_pinned: s_pp,
            reverse,
            cov_pinned_given_free,
        })
    }

    pub fn pinned(&self) -> &[usize] {
        &self.pinned
    }

    pub fn free(&self) -> &[usize] {
        &self.free
    }

    /// Conditional mean of the free block.
    pub fn mean(&self, values: &[f64]) -> DVector<f64> {
        &self.regress * DVector::from_column_slice(values)
    }

    pub fn cov(&self) -> DMatrix<f64> {
        &self.chol_free * self.chol_free.transpose()
    }

    /// Marginal covariance of the pinned block.
    pub fn cov_pinned(&self) -> &DMatrix<f64> {
        &self.cov_pinned
    }

    /// Covariance of the pinned block given the free block.
    pub fn cov_pinned_given_free(&self) -> &DMatrix<f64> {
        &self.cov_pinned_given_free
    }

    /// `E[pinned | free]` evaluated at a full vector.
    pub fn pinned_regression(&self, full: &[f64]) -> Vec<f64> {
        let xf = DVector::from_iterator(self.free.len(), self.free.iter().map(|&i| full[i]));
        (&self.reverse * xf).iter().copied().collect()
    }

    /// Full vector with pinned entries set to `values` and the rest drawn conditionally.
    pub fn sample(&self, values: &[f64], rng: &mut Rng) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.sample_into(values, rng, &mut out);
        out
    }

    pub fn sample_into(&self, values: &[f64], rng: &mut Rng, out: &mut [f64]) {
        let mean = self.mean(values);
        let z: Vec<f64> = (0..self.free.len()).map(|_| rng.sample(StandardNormal)).collect();
        let dev = lower_mul(&self.chol_free, &z);
        for (k, &i) in self.free.iter().enumerate() {
            out[i] = mean[k] + dev[k];
        }
        for (k, &i) in self.pinned.iter().enumerate() {
            out[i] = values[k];
        }
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Conditional law of `f` on `sites` given `f = ν` at `pins` (pins must be among the sites).
pub fn condition(model: &CovarianceModel, sites: &[Site], pins: &[Site]) -> Result<ConditionalGaussian> {
    let idx: Vec<usize> = pins
        .iter()
        .map(|p| sites.iter().position(|s| s == p).ok_or_else(|| Error::OutOfDomain(p.clone())))
        .collect::<Result<_>>()?;
    ConditionalGaussian::new(&model.matrix(sites)?, &idx)
}

/// Correction turning an unconditioned sample into a conditioned one:
/// `f ↦ f + Σ_{·p} Σ_{pp}^{-1} (ν - f_p)`.
#[derive(Debug, Clone)]
pub struct PinUpdate {
    pins: Vec<usize>,
    /// Row-major `n x k`.
    weights: Vec<f64>,
    k: usize,
}

impl PinUpdate {
    /// `columns[j][i]` is `Cov(f_i, f_{pins[j]})`; `pin_cov` is the pinned block.
    pub fn new(columns: &[Vec<f64>], pins: &[usize], pin_cov: &DMatrix<f64>) -> Result<Self> {
        let k = pins.len();
        let n = columns.first().map_or(0, |c| c.len());
        let chol = pin_cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("pinned block".into()))?;
        let cross = DMatrix::from_fn(n, k, |i, j| columns[j][i]);
        let w = chol.solve(&cross.transpose()).transpose();
        let mut weights = Vec::with_capacity(n * k);
        for i in 0..n {
            for j in 0..k {
                weights.push(w[(i, j)]);
            }
        }
        Ok(Self { pins: pins.to_vec(), weights, k })
    }

    pub fn apply(&self, field: &mut [f64], values: &[f64]) {
        let resid: Vec<f64> = self.pins.iter().zip(values).map(|(&p, v)| v - field[p]).collect();
        for (i, f) in field.iter_mut().enumerate() {
            let row = &self.weights[i * self.k..(i + 1) * self.k];
            *f += row.iter().zip(&resid).map(|(w, r)| w * r).sum::<f64>();
        }
        for (&p, &v) in self.pins.iter().zip(values) {
            field[p] = v;
        }
    }
}

/// `f^t = t f + sqrt(1 - t²) f̃`.
pub fn interpolate(f: &[f64], f_tilde: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::arg(format!("interpolation parameter {t} outside [0, 1]")));
    }
    if f.len() != f_tilde.len() {
        return Err(Error::arg("fields of different length"));
    }
    let s = (1.0 - t * t).sqrt();
    Ok(f.iter().zip(f_tilde).map(|(a, b)| t * a + s * b).collect())
}

/// Covariance of `(f(I), f^t(J))` given the covariance `k` of `f` on `D`.
pub fn coupled_covariance(k: &DMatrix<f64>, i_idx: &[usize], j_idx: &[usize], t: f64) -> DMatrix<f64> {
    let a = i_idx.len();
    let idx: Vec<usize> = i_idx.iter().chain(j_idx).copied().collect();
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| {
        let v = k[(idx[r], idx[c])];
        if (r < a) == (c < a) {
            v
        } else {
            t * v
        }
    })
}
