use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::fields::WindowSource;
use super::summary::summarize;
use crate::clusters::{count_clusters, excursion, label};
use crate::error::{Error, Result};
use crate::green::green_function;
use crate::kernels::beta_continuum;
use crate::rng::par_replicates;
use crate::stats::{log_log_slope, Estimate};

const TAG: u32 = 0x7A;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub level: f64,
    pub radius: usize,
    pub replicates: usize,
    pub mean: f64,
    pub variance: f64,
    /// Batch-mean standard error.
    pub variance_se: f64,
    pub var_over_rd: f64,
    pub var_over_rd2: f64,
    pub seed: u64,
    pub sampler: String,
    pub window: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub level: f64,
    pub slope: f64,
    pub slope_se: f64,
    /// `log Var ≈ intercept + slope log R`.
    pub intercept: f64,
}

/// `[ĉ_1 R^d, ĉ_2 R^{d+2}]` fitted at the smallest radius over all levels.
/// A variance counts as inside when it is within 3 standard errors of the band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub c1: f64,
    pub c2: f64,
    pub inside: bool,
    pub violations: Vec<(f64, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceScaling {
    pub rows: Vec<VarianceRow>,
    pub fits: Vec<ScalingFit>,
    pub envelope: Envelope,
    /// `d² β_{d,1} / G(0)`, the asymptotic upper constant for `Var / R^{d+2}`.
    pub upper_constant: f64,
    /// `β_{d,1}`, for comparison of `Var / R^{d+2}` with `β_{d,1} μ'(ℓ)²` when `μ'` is known.
    pub beta: f64,
}

/// `N_R(ℓ)` replicates at every configured level, sharing the field samples across levels.
pub fn cluster_count_samples(cfg: &ExperimentConfig, radius: usize, tag: u32) -> Result<(Vec<Vec<f64>>, String, String)> {
    let src = WindowSource::new(cfg.dim, radius, cfg.sampler, cfg.margin, cfg.compensate_zero_mode)?;
    let out: Vec<Result<Vec<f64>>> = par_replicates(cfg.replicates, cfg.seed, tag, |_, rng| {
        let f = src.sample(rng)?;
        Ok(cfg
            .levels
            .iter()
            .map(|&l| count_clusters(&label(src.domain(), &excursion(&f, l)), None).total() as f64)
            .collect())
    });
    let per_rep: Vec<Vec<f64>> = out.into_iter().collect::<Result<_>>()?;
    let per_level = (0..cfg.levels.len()).map(|i| per_rep.iter().map(|r| r[i]).collect()).collect();
    Ok((per_level, src.describe().to_string(), src.window_label()))
}

pub fn run_variance_scaling(cfg: &ExperimentConfig) -> Result<VarianceScaling> {
    cfg.validate()?;
    let mut radii = cfg.radii.clone();
    radii.sort_unstable();
    radii.dedup();
    if radii.len() < 2 {
        return Err(Error::arg("variance scaling needs at least two distinct radii"));
    }
    let d = cfg.dim as i32;
    let mut rows = Vec::new();
    for &r in &radii {
        let (samples, sampler, window) = cluster_count_samples(cfg, r, TAG + r as u32)?;
        for (&level, xs) in cfg.levels.iter().zip(&samples) {
            let s = summarize(xs, cfg.batches)?;
            let rf = r as f64;
            rows.push(VarianceRow {
                level,
                radius: r,
                replicates: xs.len(),
                mean: s.mean,
                variance: s.variance,
                variance_se: s.variance_se,
                var_over_rd: s.variance / rf.powi(d),
                var_over_rd2: s.variance / rf.powi(d + 2),
                seed: cfg.seed,
                sampler: sampler.clone(),
                window: window.clone(),
            });
        }
    }
    let mut fits = Vec::new();
    for &level in &cfg.levels {
        let pts: Vec<(f64, Estimate)> = rows
            .iter()
            .filter(|r| r.level == level && r.variance > 0.0)
            .map(|r| (r.radius as f64, Estimate { value: r.variance, stderr: r.variance_se, n: r.replicates }))
            .collect();
        if pts.len() < 2 {
            return Err(Error::Numerical(format!("fewer than two usable radii at level {level}")));
        }
        let (slope, slope_se) = log_log_slope(&pts);
        let w: Vec<f64> = pts.iter().map(|(_, e)| (e.value / e.stderr.max(1e-300)).powi(2)).collect();
        let sw: f64 = w.iter().sum();
        let mx = pts.iter().zip(&w).map(|((x, _), w)| w * x.ln()).sum::<f64>() / sw;
        let my = pts.iter().zip(&w).map(|((_, e), w)| w * e.value.ln()).sum::<f64>() / sw;
        fits.push(ScalingFit { level, slope, slope_se, intercept: my - slope * mx });
    }
    let envelope = envelope(&rows, radii[0], d);
    let beta = beta_continuum(cfg.dim, 1)?.ok_or_else(|| Error::Numerical("β_{d,1} unavailable".into()))?;
    let g0 = green_function(cfg.dim, &vec![0; cfg.dim])?;
    Ok(VarianceScaling { rows, fits, envelope, upper_constant: (d * d) as f64 * beta / g0, beta })
}

fn envelope(rows: &[VarianceRow], r0: usize, d: i32) -> Envelope {
    let base: Vec<&VarianceRow> = rows.iter().filter(|r| r.radius == r0).collect();
    let c1 = base.iter().map(|r| r.var_over_rd).fold(f64::INFINITY, f64::min);
    let c2 = base.iter().map(|r| r.var_over_rd2).fold(0.0, f64::max);
    let violations: Vec<(f64, usize)> = rows
        .iter()
        .filter(|r| {
            let rf = r.radius as f64;
            let lo = c1 * rf.powi(d);
            let hi = c2 * rf.powi(d + 2);
            r.variance + 3.0 * r.variance_se < lo || r.variance - 3.0 * r.variance_se > hi
        })
        .map(|r| (r.level, r.radius))
        .collect();
    Envelope { c1, c2, inside: violations.is_empty(), violations }
}
