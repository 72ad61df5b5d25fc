//! Continuum constants `E_{d,α}` and lattice sums of Green's-function powers.
//!
//! Box integrals against `|x|^{-α}` are split into pyramids with apex at the
//! singularity. Along each pyramid axis the integrand is a polynomial times a
//! power of the radius, which integrates exactly, so Gauss–Legendre only sees
//! the smooth angular part. An independent scheme uses the subordination
//! identity `|x|^{-β} = Γ(β/2)^{-1} ∫_0^∞ s^{β/2-1} e^{-s|x|²} ds`, after which
//! the box integral factorises over coordinates into closed-form error
//! functions; the outer integral runs over `log s` with the trapezoid rule.
//!
//! Lattice pair sums over `Λ_R` use `Σ_{x,y} h(x-y) = Σ_u N_R(u) h(u)` with
//! `N_R(u) = Π_i (2R + 1 - |u_i|)`.

use std::f64::consts::PI;
use std::sync::Arc;

use libm::{erf, expm1};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::green::{asymptotic_constant, Green};
use crate::lattice::Site;
use crate::numeric::{fft_nd, gauss_legendre_on};

/// Gauss–Legendre nodes per angular axis.
pub const ANGULAR_NODES: usize = 24;
/// Step in `log s` for the subordinated integrals.
const LOG_STEP: f64 = 0.2;
const TAIL: f64 = 1e-15;

fn check_alpha(dim: usize, alpha: f64, bound: f64) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidDimension(dim));
    }
    if !(alpha > 0.0 && alpha < bound) {
        return Err(Error::arg(format!("exponent {alpha} must lie in (0, {bound}) for convergence")));
    }
    Ok(())
}

/// Calls `f` on every integer tuple in the box `[lo, hi]`.
fn for_each_tuple(lo: &[i64], hi: &[i64], mut f: impl FnMut(&[i64])) {
    if lo.iter().zip(hi).any(|(a, b)| a > b) {
        return;
    }
    let mut x = lo.to_vec();
    loop {
        f(&x);
        let mut k = 0;
        while k < x.len() {
            x[k] += 1;
            if x[k] <= hi[k] {
                break;
            }
            x[k] = lo[k];
            k += 1;
        }
        if k == x.len() {
            return;
        }
    }
}

/// `∫_{[0,2]^n} Π_i (a_i + b_i v_i) |v|^{-α} dv` for `α < n`.
fn pyramid_integral(factors: &[(f64, f64)], alpha: f64, nodes: usize) -> f64 {
    let n = factors.len();
    let (gx, gw) = gauss_legendre_on(0.0, 1.0, nodes);
    let lo = vec![0i64; n - 1];
    let hi = vec![nodes as i64 - 1; n - 1];
    let radial: Vec<f64> = (0..=n).map(|k| 2f64.powf(n as f64 - alpha + k as f64) / (n as f64 - alpha + k as f64)).collect();
    let mut total = 0.0;
    let mut coeffs = Vec::with_capacity(n + 1);
    for apex in 0..n {
        for_each_tuple(&lo, &hi, |idx| {
            let mut weight = 1.0;
            let mut norm2 = 1.0;
            coeffs.clear();
            coeffs.push(1.0);
            let mut it = idx.iter();
            for (i, &(a, b)) in factors.iter().enumerate() {
                let w = if i == apex {
                    1.0
                } else {
                    let j = *it.next().unwrap() as usize;
                    weight *= gw[j];
                    norm2 += gx[j] * gx[j];
                    gx[j]
                };
                // Multiply the polynomial in r by (a + b w r).
                coeffs.push(0.0);
                for k in (0..coeffs.len()).rev() {
                    let lower = if k > 0 { coeffs[k - 1] } else { 0.0 };
                    coeffs[k] = a * coeffs[k] + b * w * lower;
                }
            }
            let r: f64 = coeffs.iter().zip(&radial).map(|(c, m)| c * m).sum();
            total += weight * norm2.powf(-alpha / 2.0) * r;
        });
    }
    total
}

/// `E_{d,α} = ∫_{[-1,1]^d × [-1,1]^d} |x - y|^{-α} dx dy` by the pyramid scheme.
pub fn e_constant(dim: usize, alpha: f64) -> Result<f64> {
    e_constant_with(dim, alpha, ANGULAR_NODES)
}

pub fn e_constant_with(dim: usize, alpha: f64, nodes: usize) -> Result<f64> {
    check_alpha(dim, alpha, dim as f64)?;
    Ok(2f64.powi(dim as i32) * pyramid_integral(&vec![(2.0, -1.0); dim], alpha, nodes))
}

/// `E_{d,α}` by subordination; shares no code path with [`e_constant`].
pub fn e_constant_subordinated(dim: usize, alpha: f64) -> Result<f64> {
    check_alpha(dim, alpha, dim as f64)?;
    Ok(subordinated(dim, &[(vec![0.0; dim], alpha)]))
}

/// `S_d(x) = (1_{[-1,1]^d} ⋆ 1_{[-1,1]^d})(x) = Π_i (2 - |x_i|)_+`.
pub fn tent(x: &[f64]) -> f64 {
    x.iter().map(|v| (2.0 - v.abs()).max(0.0)).product()
}

/// `∫_{-2}^{2} (2 - |u|) e^{-S(u+b)²} du`.
fn tent_gaussian(s: f64, b: f64) -> f64 {
    let piece = |p: f64, q: f64, c0: f64, c1: f64| {
        let (v1, v2) = (p + b, q + b);
        let rs = s.sqrt();
        let a = c0 - c1 * b;
        let gauss = a * 0.5 * (PI / s).sqrt() * (erf(rs * v2) - erf(rs * v1));
        let linear = c1 * (expm1(-s * v1 * v1) - expm1(-s * v2 * v2)) / (2.0 * s);
        gauss + linear
    };
    piece(-2.0, 0.0, 2.0, 1.0) + piece(0.0, 2.0, 2.0, -1.0)
}

/// `∫ S_d(x) Π_j |x + a_j|^{-β_j} dx` for one or two groups `(a_j, β_j)`.
fn subordinated(dim: usize, groups: &[(Vec<f64>, f64)]) -> f64 {
    let d = dim as f64;
    let grid = |beta: f64| {
        let lo = 2.0 * TAIL.ln() / beta;
        let hi = -2.0 * TAIL.ln() / (d - beta);
        let n = ((hi - lo) / LOG_STEP).ceil() as usize;
        (0..=n).map(|i| lo + i as f64 * LOG_STEP).collect::<Vec<f64>>()
    };
    let norm: f64 = groups.iter().map(|(_, b)| gamma(b / 2.0)).product();
    match groups {
        [(a, beta)] => {
            let g = grid(*beta);
            let s: f64 = g
                .iter()
                .map(|&sig| {
                    let sv = sig.exp();
                    let body: f64 = a.iter().map(|&ak| tent_gaussian(sv, ak)).product();
                    (sig * beta / 2.0).exp() * body
                })
                .sum();
            s * LOG_STEP / norm
        }
        [(a1, b1), (a2, b2)] => {
            let (g1, g2) = (grid(*b1), grid(*b2));
            let rows: Vec<f64> = g1
                .par_iter()
                .map(|&sig1| {
                    let s1 = sig1.exp();
                    let mut acc = 0.0;
                    for &sig2 in &g2 {
                        let s2 = sig2.exp();
                        let st = s1 + s2;
                        let mut body = 1.0;
                        for k in 0..dim {
                            let c = s1 * s2 * (a1[k] - a2[k]).powi(2) / st;
                            let b = (s1 * a1[k] + s2 * a2[k]) / st;
                            body *= (-c).exp() * tent_gaussian(st, b);
                        }
                        acc += (sig1 * b1 / 2.0 + sig2 * b2 / 2.0).exp() * body;
                    }
                    acc
                })
                .collect();
            rows.iter().sum::<f64>() * LOG_STEP * LOG_STEP / norm
        }
        _ => unreachable!("at most two shift groups"),
    }
}

/// `E^m_{d,α}(t) = ∫ S_d(x) Π_i |x + t_i|^{-α} dx` with `m = shifts.len()`.
/// Equal shifts are merged; at most two distinct shifts are supported.
pub fn e_function(dim: usize, alpha: f64, shifts: &[Vec<f64>]) -> Result<f64> {
    let m = shifts.len();
    if m == 0 {
        return Err(Error::arg("need at least one shift"));
    }
    check_alpha(dim, alpha * m as f64, dim as f64)?;
    if shifts.iter().any(|t| t.len() != dim) {
        return Err(Error::arg(format!("shifts must lie in R^{dim}")));
    }
    let mut groups: Vec<(Vec<f64>, f64)> = Vec::new();
    for t in shifts {
        match groups.iter_mut().find(|(a, _)| a == t) {
            Some(g) => g.1 += alpha,
            None => groups.push((t.clone(), alpha)),
        }
    }
    if groups.len() > 2 {
        return Err(Error::arg("e_function supports at most two distinct shifts"));
    }
    Ok(subordinated(dim, &groups))
}

/// `Ē_{d,α}`: the same double integral over the boundary of `[-1,1]^d`.
pub fn e_boundary_constant(dim: usize, alpha: f64) -> Result<f64> {
    e_boundary_constant_with(dim, alpha, ANGULAR_NODES)
}

pub fn e_boundary_constant_with(dim: usize, alpha: f64, nodes: usize) -> Result<f64> {
    if dim < 2 {
        return Err(Error::InvalidDimension(dim));
    }
    check_alpha(dim, alpha, dim as f64 - 1.0)?;
    let n = dim - 1;
    let same = e_constant_with(n, alpha, nodes)?;
    // Opposite faces: a smooth integral of S_{d-1}(z) (4 + |z|²)^{-α/2}.
    let (gx, gw) = gauss_legendre_on(0.0, 2.0, nodes);
    let mut opposite = 0.0;
    for_each_tuple(&vec![0; n], &vec![nodes as i64 - 1; n], |idx| {
        let mut w = 1.0;
        let mut r2 = 4.0;
        for &j in idx {
            let z = gx[j as usize];
            w *= gw[j as usize] * (2.0 - z);
            r2 += z * z;
        }
        opposite += w * r2.powf(-alpha / 2.0);
    });
    opposite *= 2f64.powi(n as i32);
    // Faces meeting along an edge: two free offsets plus a tent in the rest.
    let mut factors = vec![(1.0, 0.0), (1.0, 0.0)];
    factors.extend(std::iter::repeat_n((2.0, -1.0), dim - 2));
    let adjacent = 2f64.powi(dim as i32 - 2) * pyramid_integral(&factors, alpha, nodes);
    let faces = 2.0 * dim as f64;
    Ok(faces * (same + opposite) + faces * (faces - 2.0) * adjacent)
}

/// `E_{d,d} = lim Σ_{x ∈ Λ_R} |x|^{-d} / log R`, the area of the unit sphere.
pub fn e_log_constant(dim: usize) -> f64 {
    let h = dim as f64 / 2.0;
    2.0 * PI.powf(h) / gamma(h)
}

/// Green's function with the exact table for `|x|_∞ ≤ switch` and
/// `c_d |x|^{2-d}` beyond.
#[derive(Debug, Clone)]
pub struct GreenKernel {
    green: Arc<Green>,
    switch: usize,
    c: f64,
}

impl GreenKernel {
    pub fn new(dim: usize, reach: usize, switch: Option<usize>) -> Result<Self> {
        let switch = switch.unwrap_or(reach).min(reach);
        Ok(Self { green: Green::shared(dim, switch)?, switch, c: asymptotic_constant(dim)? })
    }

    pub fn dim(&self) -> usize {
        self.green.dim()
    }

    pub fn value(&self, x: &[i64]) -> f64 {
        if x.iter().all(|v| v.unsigned_abs() as usize <= self.switch) {
            return self.green.at(x);
        }
        let r2: f64 = x.iter().map(|&v| (v * v) as f64).sum();
        self.c * r2.powf(1.0 - self.dim() as f64 / 2.0)
    }
}

/// Lattice sums `Σ_{x,y ∈ Λ_R} G(x-y)^k` and their extrapolated normalisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSumResult {
    pub dim: usize,
    pub power: u32,
    pub radii: Vec<usize>,
    pub raw: Vec<f64>,
    /// `raw / (R^exponent (log R)^{log_factor})`.
    pub normalized: Vec<f64>,
    pub exponent: usize,
    pub log_factor: bool,
    /// Richardson limit in `1/R`; in the logarithmic regime, the coefficient
    /// of `log R` in a fit of `raw / R^d` with `1/R` corrections.
    pub extrapolated: f64,
    /// RMS residual of the extrapolation fit, in normalised units.
    pub residual: f64,
}

/// `Σ_{x,y ∈ Λ_R} G(x-y)^k`.
pub fn green_power_sum(kernel: &GreenKernel, radius: usize, power: u32) -> f64 {
    let d = kernel.dim();
    let r = radius as i64;
    let mut total = 0.0;
    for_each_tuple(&vec![0; d], &vec![2 * r; d], |u| {
        let mut count = 1.0;
        for &v in u {
            count *= (2 * r + 1 - v) as f64 * if v != 0 { 2.0 } else { 1.0 };
        }
        total += count * kernel.value(u).powi(power as i32);
    });
    total
}

/// Exponent and log flag of the normalisation `R^{max(2d - k(d-2), d)} (log R)^{1[k(d-2) = d]}`.
pub fn beta_normalization(dim: usize, power: u32) -> (usize, bool) {
    let decay = power as usize * (dim - 2);
    ((2 * dim).saturating_sub(decay).max(dim), decay == dim)
}

pub fn beta_constant(dim: usize, power: u32, radii: &[usize], switch: Option<usize>) -> Result<KernelSumResult> {
    if radii.is_empty() {
        return Err(Error::arg("empty radius list"));
    }
    if power == 0 || radii.contains(&0) {
        return Err(Error::arg("power and radii must be positive"));
    }
    let reach = 2 * radii.iter().max().unwrap();
    let kernel = GreenKernel::new(dim, reach, switch)?;
    let raw: Vec<f64> = radii.par_iter().map(|&r| green_power_sum(&kernel, r, power)).collect();
    let (exponent, log_factor) = beta_normalization(dim, power);
    let rf: Vec<f64> = radii.iter().map(|&r| r as f64).collect();
    let normalized: Vec<f64> = raw
        .iter()
        .zip(&rf)
        .map(|(s, r)| s / r.powi(exponent as i32) / if log_factor { r.ln() } else { 1.0 })
        .collect();
    let (extrapolated, residual) = if log_factor {
        let y: Vec<f64> = raw.iter().zip(&rf).map(|(s, r)| s / r.powi(dim as i32)).collect();
        // Boundary layers contribute (a log R + b) / R on top of the leading terms.
        let basis = [|r: f64| r.ln(), |_: f64| 1.0, |r: f64| 1.0 / r, |r: f64| r.ln() / r];
        let terms = rf.len().min(4);
        let x: Vec<Vec<f64>> = rf.iter().map(|&r| basis[..terms].iter().map(|f| f(r)).collect()).collect();
        let (c, res) = least_squares(&x, &y)?;
        (c[0], res)
    } else {
        richardson(&rf, &normalized)?
    };
    Ok(KernelSumResult { dim, power, radii: radii.to_vec(), raw, normalized, exponent, log_factor, extrapolated, residual })
}

/// Continuum value of `β_{d,k}`: `c_d^k E_{d,k(d-2)}` below the log regime,
/// `2^d c_d^k E_{d,d}` at it, `None` in the `R^d` regime.
pub fn beta_continuum(dim: usize, power: u32) -> Result<Option<f64>> {
    let c = asymptotic_constant(dim)?.powi(power as i32);
    let decay = (power as usize * (dim - 2)) as f64;
    let d = dim as f64;
    Ok(if decay < d {
        Some(c * e_constant(dim, decay)?)
    } else if decay == d {
        Some(2f64.powi(dim as i32) * c * e_log_constant(dim))
    } else {
        None
    })
}

/// Fit `y = a + b/R + c/R²` (as many terms as the data allow, up to three).
fn richardson(r: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let terms = r.len().min(3);
    let x: Vec<Vec<f64>> = r.iter().map(|&v| (0..terms).map(|p| v.powi(-(p as i32))).collect()).collect();
    let (c, res) = least_squares(&x, y)?;
    Ok((c[0], res))
}

fn least_squares(x: &[Vec<f64>], y: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = y.len();
    let p = x[0].len();
    if n < p {
        return Err(Error::arg(format!("{n} points cannot fit {p} parameters")));
    }
    let a = DMatrix::from_fn(n, p, |i, j| x[i][j]);
    let b = DVector::from_column_slice(y);
    let c = a.clone().svd(true, true).solve(&b, 1e-14).map_err(|e| Error::Numerical(e.to_string()))?;
    let res = (&a * &c - &b).norm() / (n as f64).sqrt();
    Ok((c.iter().copied().collect(), res))
}

/// A stationary kernel `P(x_1, …, x_m) = p(x_2 - x_1, …, x_m - x_1)` given by
/// its finite support: each entry lists the `m - 1` offsets and the value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryTable {
    pub dim: usize,
    pub order: usize,
    pub entries: Vec<(Vec<Site>, f64)>,
}

impl StationaryTable {
    /// `P(x) = value · 1[x_1 = … = x_m]`.
    pub fn diagonal(dim: usize, order: usize, value: f64) -> Self {
        Self { dim, order, entries: vec![(vec![vec![0; dim]; order - 1], value)] }
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::arg("order must be positive"));
        }
        for (w, _) in &self.entries {
            if w.len() + 1 != self.order || w.iter().any(|s| s.len() != self.dim) {
                return Err(Error::arg(format!("table entry {w:?} does not match order {} in Z^{}", self.order, self.dim)));
            }
        }
        Ok(())
    }
}

/// `Σ_{x,y ∈ (Λ_R)^m} Π_i K(x_i - y_i + [t_i R]) P(x) P(y)`.
pub fn weighted_kernel_sum(
    kernel: &(dyn Fn(&[i64]) -> f64 + Sync),
    table: &StationaryTable,
    radius: usize,
    shift: Option<&[Vec<f64>]>,
) -> Result<f64> {
    table.validate()?;
    let (d, m) = (table.dim, table.order);
    let r = radius as i64;
    let s: Vec<Vec<i64>> = match shift {
        Some(t) => {
            if t.len() != m || t.iter().any(|v| v.len() != d) {
                return Err(Error::arg("shift must hold one vector per point"));
            }
            t.iter().map(|v| v.iter().map(|c| (c * radius as f64).floor() as i64).collect()).collect()
        }
        None => vec![vec![0; d]; m],
    };
    let full: Vec<Vec<Site>> = table
        .entries
        .iter()
        .map(|(w, _)| std::iter::once(vec![0; d]).chain(w.iter().cloned()).collect())
        .collect();
    // Range of the anchor x_1 keeping every point of the tuple inside Λ_R.
    let anchor = |pts: &[Site], k: usize| {
        let lo = pts.iter().map(|p| p[k]).min().unwrap();
        let hi = pts.iter().map(|p| p[k]).max().unwrap();
        (-r - lo, r - hi)
    };
    let pairs: Vec<(usize, usize)> = (0..full.len()).flat_map(|a| (0..full.len()).map(move |b| (a, b))).collect();
    let terms: Vec<f64> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (wa, za) = (&full[a], &full[b]);
            let bx: Vec<(i64, i64)> = (0..d).map(|k| anchor(wa, k)).collect();
            let by: Vec<(i64, i64)> = (0..d).map(|k| anchor(za, k)).collect();
            let lo: Vec<i64> = (0..d).map(|k| bx[k].0 - by[k].1).collect();
            let hi: Vec<i64> = (0..d).map(|k| bx[k].1 - by[k].0).collect();
            let mut arg = vec![0i64; d];
            let mut acc = 0.0;
            for_each_tuple(&lo, &hi, |u| {
                let mut count = 1.0;
                for k in 0..d {
                    let c = bx[k].1.min(by[k].1 + u[k]) - bx[k].0.max(by[k].0 + u[k]) + 1;
                    if c <= 0 {
                        return;
                    }
                    count *= c as f64;
                }
                let mut prod = 1.0;
                for i in 0..m {
                    for k in 0..d {
                        arg[k] = u[k] + wa[i][k] - za[i][k] + s[i][k];
                    }
                    prod *= kernel(&arg);
                }
                acc += count * prod;
            });
            acc * table.entries[a].1 * table.entries[b].1
        })
        .collect();
    Ok(terms.iter().sum())
}

/// `Σ_{x,y ∈ Λ_R} K(x-y) Γ(x) Γ(y)` with `Γ(x) = e^{-decay · d_∞(x, F^i_R)}`,
/// where `F^i_R` is the union of the `i`-dimensional faces of `Λ_R`.
pub fn boundary_weight_sum(
    kernel: &(dyn Fn(&[i64]) -> f64 + Sync),
    dim: usize,
    radius: usize,
    face_dim: usize,
    decay: f64,
) -> Result<f64> {
    if face_dim >= dim {
        return Err(Error::arg(format!("face dimension {face_dim} must be below {dim}")));
    }
    let r = radius as i64;
    let n = 4 * radius + 1;
    let total = n.pow(dim as u32);
    let mut weight = vec![Complex64::new(0.0, 0.0); total];
    let mut kern = vec![Complex64::new(0.0, 0.0); total];
    let flat = |x: &[i64]| x.iter().fold(0usize, |acc, &v| acc * n + v.rem_euclid(n as i64) as usize);
    let mut gaps = vec![0i64; dim];
    for_each_tuple(&vec![-r; dim], &vec![r; dim], |x| {
        for (g, &v) in gaps.iter_mut().zip(x) {
            *g = r - v.abs();
        }
        gaps.sort_unstable();
        weight[flat(x)] = Complex64::new((-decay * gaps[dim - face_dim - 1] as f64).exp(), 0.0);
    });
    for_each_tuple(&vec![-2 * r; dim], &vec![2 * r; dim], |u| kern[flat(u)] = Complex64::new(kernel(u), 0.0));
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let original: Vec<f64> = weight.iter().map(|c| c.re).collect();
    fft_nd(fwd.as_ref(), &mut weight, dim, n);
    fft_nd(fwd.as_ref(), &mut kern, dim, n);
    for (a, b) in weight.iter_mut().zip(&kern) {
        *a *= b;
    }
    fft_nd(inv.as_ref(), &mut weight, dim, n);
    Ok(original.iter().zip(&weight).map(|(g, c)| g * c.re).sum::<f64>() / total as f64)
}
