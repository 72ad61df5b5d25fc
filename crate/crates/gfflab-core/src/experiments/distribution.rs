use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::hermite2::HermiteReference;
use super::summary::{standardize, summarize, StatSummary};
use super::variance::cluster_count_samples;
use crate::error::{Error, Result};

const TAG: u32 = 0xD1;
const REFERENCE_TAG: u32 = 0xD2;
pub const MIN_REPLICATES: usize = 2000;

/// Outcome of the Gaussian-shape criteria at one level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Gaussian,
    NotGaussian,
    /// At `ℓ = 0` the limit law is an open question; only statistics are reported.
    NoVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionResult {
    pub level: f64,
    pub radius: usize,
    pub summary: StatSummary,
    pub verdict: Verdict,
    pub sampler: String,
    pub window: String,
    pub seed: u64,
}

/// Standardised `N_R(ℓ)` for the first radius at every level, compared with
/// the normal law and an order-2 Hermite reference sample.
///
/// The Gaussian verdict needs `|skew| < 0.15 (1 + 3 SE)`,
/// `|excess kurtosis| < 0.3 (1 + 3 SE)` and a normal KS p-value above 0.01.
pub fn run_distribution_test(cfg: &ExperimentConfig) -> Result<Vec<DistributionResult>> {
    cfg.validate()?;
    if cfg.replicates < MIN_REPLICATES {
        return Err(Error::arg(format!("distribution test needs at least {MIN_REPLICATES} replicates")));
    }
    let radius = cfg.radii[0];
    let (samples, sampler, window) = cluster_count_samples(cfg, radius, TAG)?;
    let h = &cfg.hermite;
    let reference = HermiteReference::new(2, h.dim, h.alpha, h.grid, h.cutoff, h.modes)?
        .samples(cfg.distribution.reference_samples, cfg.seed, REFERENCE_TAG);
    cfg.levels
        .iter()
        .zip(&samples)
        .map(|(&level, xs)| {
            let s = summarize(&standardize(xs), cfg.batches)?;
            if !(s.variance > 0.0) || summarize(xs, 2)?.variance <= 0.0 {
                return Err(Error::Numerical(format!("degenerate variance at level {level}")));
            }
            let s = s.with_reference(xs, &reference);
            let verdict = if level == 0.0 {
                Verdict::NoVerdict
            } else if s.skewness.abs() < 0.15 * (1.0 + 3.0 * s.skewness_se)
                && s.excess_kurtosis.abs() < 0.3 * (1.0 + 3.0 * s.excess_kurtosis_se)
                && s.ks_normal.p_value > 0.01
            {
                Verdict::Gaussian
            } else {
                Verdict::NotGaussian
            };
            Ok(DistributionResult { level, radius, summary: s, verdict, sampler: sampler.clone(), window: window.clone(), seed: cfg.seed })
        })
        .collect()
}
