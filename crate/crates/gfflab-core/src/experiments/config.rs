use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How window samples are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    /// Periodic spectral sample of side `margin * R`, read on `Λ_R`.
    Torus,
    /// Cholesky factor of the exact free-field covariance on `Λ_R`. Only practical for small `R`.
    Exact,
}

/// Settings shared by every experiment runner. Sections that a runner does
/// not use are ignored; everything has a default so partial files load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub levels: Vec<f64>,
    pub radii: Vec<usize>,
    pub replicates: usize,
    pub sampler: SamplerKind,
    /// Torus side over window radius.
    pub margin: f64,
    /// Add the zero-mode shift to torus samples.
    pub compensate_zero_mode: bool,
    pub seed: u64,
    /// 0 lets rayon decide. Results do not depend on it, so it is not echoed in reports.
    #[serde(skip_serializing)]
    pub workers: usize,
    /// Batches for batch-mean standard errors.
    pub batches: usize,
    pub output: OutputPaths,
    /// Reference note on the critical level. It is never estimated; the levels
    /// used here are assumed to be off-critical.
    pub critical_level_note: String,
    pub density: DensityParams,
    pub arm: ArmParams,
    pub distribution: DistributionParams,
    pub hermite: HermiteParams,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityParams {
    /// Half-width of the common-random-number difference quotient for `μ'`.
    pub fd_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmParams {
    pub radii: Vec<i64>,
    /// Observation window `Λ_W` around each origin.
    pub window: i64,
    pub torus_side: usize,
    /// Disjoint windows read from one torus sample (capped by what fits).
    pub windows_per_sample: usize,
    pub pinned: bool,
    /// Second torus side for the sensitivity rows.
    pub sensitivity_side: Option<usize>,
    pub sensitivity_replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistributionParams {
    /// Size of the order-2 Hermite reference sample.
    pub reference_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HermiteParams {
    /// Chaos order, 1 or 2.
    pub order: usize,
    pub dim: usize,
    /// Spectral exponent: density `|λ|^{α - d}`.
    pub alpha: f64,
    pub grid: usize,
    /// Largest frequency coordinate of the grid.
    pub cutoff: f64,
    pub samples: usize,
    /// Eigen-directions kept exactly; the rest is replaced by a Gaussian of equal variance.
    pub modes: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dim: 3,
            levels: vec![0.0],
            radii: vec![10],
            replicates: 500,
            sampler: SamplerKind::Torus,
            margin: 8.0,
            compensate_zero_mode: true,
            seed: 1,
            workers: 0,
            batches: 20,
            output: OutputPaths::default(),
            critical_level_note: "critical level of {f > l} in d = 3 is positive and not estimated here; \
                                  levels 0, 1.5 and 2 are assumed off-critical"
                .into(),
            density: DensityParams::default(),
            arm: ArmParams::default(),
            distribution: DistributionParams::default(),
            hermite: HermiteParams::default(),
        }
    }
}

impl Default for DensityParams {
    fn default() -> Self {
        Self { fd_step: 0.1 }
    }
}

impl Default for ArmParams {
    fn default() -> Self {
        Self {
            radii: (1..=8).collect(),
            window: 12,
            torus_side: 64,
            windows_per_sample: 8,
            pinned: true,
            sensitivity_side: None,
            sensitivity_replicates: 100,
        }
    }
}

impl Default for DistributionParams {
    fn default() -> Self {
        Self { reference_samples: 100_000 }
    }
}

impl Default for HermiteParams {
    fn default() -> Self {
        Self {
            order: 2,
            dim: 3,
            alpha: 1.0,
            grid: 12,
            cutoff: 1.5 * std::f64::consts::PI,
            samples: 100_000,
            modes: 400,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 3 {
            return Err(Error::InvalidDimension(self.dim));
        }
        if self.levels.is_empty() || self.levels.iter().any(|l| !l.is_finite()) {
            return Err(Error::arg("levels must be a non-empty list of finite numbers"));
        }
        if self.radii.is_empty() || self.radii.contains(&0) {
            return Err(Error::arg("radii must be a non-empty list of positive integers"));
        }
        if self.replicates < 2 {
            return Err(Error::arg("at least two replicates are needed"));
        }
        if self.batches < 2 || self.batches > self.replicates {
            return Err(Error::arg(format!("batches must lie in 2..={}", self.replicates)));
        }
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return Err(Error::arg("margin must be positive"));
        }
        Ok(())
    }
}
