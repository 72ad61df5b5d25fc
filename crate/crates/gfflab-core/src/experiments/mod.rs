//! Monte Carlo experiments and their reports.
//!
//! Every runner takes an [`ExperimentConfig`], draws replicate `i` from the
//! stream `(seed, tag, i)` and reduces in replicate order, so outputs are
//! identical for any worker count. Data rows carry the seed, sampler and
//! window they came from.

pub mod arm;
pub mod config;
pub mod density;
pub mod distribution;
pub mod fields;
pub mod hermite2;
pub mod summary;
pub mod variance;

use std::io::Write;
use std::path::Path;

use serde::Serialize;

pub use arm::{depinning_check, run_arm_decay, ArmDecay, ArmRow, DepinningCheck};
pub use config::{ExperimentConfig, SamplerKind};
pub use density::{run_density_curve, run_density_slope, DensityCurve, DensityRow, DensitySlope};
pub use distribution::{run_distribution_test, DistributionResult, Verdict};
pub use fields::WindowSource;
pub use hermite2::{grid_convergence, sample_hermite2, HermiteReference};
pub use summary::{summarize, StatSummary};
pub use variance::{run_variance_scaling, VarianceRow, VarianceScaling};

/// JSON summary wrapper echoing the configuration that produced it.
#[derive(Debug, Clone, Serialize)]
pub struct Report<'a, T: Serialize> {
    pub experiment: &'a str,
    pub config: &'a ExperimentConfig,
    pub result: &'a T,
}

/// Rows as CSV with a header line.
pub fn csv_string<T: Serialize>(rows: &[T]) -> std::io::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(std::io::Error::other)?;
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    String::from_utf8(bytes).map_err(std::io::Error::other)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> std::io::Result<()> {
    std::fs::write(path, csv_string(rows)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(std::io::Error::other)?;
    f.write_all(b"\n")
}
