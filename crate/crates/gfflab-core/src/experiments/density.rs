use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SamplerKind};
use super::fields::WindowSource;
use crate::clusters::{count_clusters, density_estimator, excursion, label, DensityMode};
use crate::error::{Error, Result};
use crate::lattice::Domain;
use crate::rng::par_replicates;
use crate::stats::{mean_var, Estimate};

const TAG: u32 = 0xD0;

/// One row of the density curve. Both estimators target the same quantity:
/// on the torus `mu_count` is the number of components over `L^d` and
/// `mu_invsize` is the mean of `1/|C_x|` over `x ∈ Λ_R`; with the exact
/// sampler they are the boundary-avoiding versions on `Λ_R`.
/// `mu_window = N_R / |Λ_R|` is always the window count and carries an
/// `O(1/R)` boundary deficit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub level: f64,
    pub radius: usize,
    pub replicates: usize,
    pub mu_count: f64,
    pub mu_count_se: f64,
    pub mu_invsize: f64,
    pub mu_invsize_se: f64,
    /// `mu_count - mu_invsize` with its paired standard error.
    pub gap: f64,
    pub gap_se: f64,
    pub mu_window: f64,
    pub mu_window_se: f64,
    pub seed: u64,
    pub sampler: String,
    pub window: String,
}

/// `μ̂(ℓ) - μ̂(-ℓ)` from common samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryCheck {
    pub level: f64,
    pub radius: usize,
    pub difference: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub rows: Vec<DensityRow>,
    pub symmetry: Vec<SymmetryCheck>,
}

/// Per-replicate `[count, invsize, window]` at each level.
struct Draws {
    values: Vec<Vec<[f64; 3]>>,
    sampler: String,
    window: String,
}

fn draws(cfg: &ExperimentConfig, radius: usize, levels: &[f64], tag: u32) -> Result<Draws> {
    let src = WindowSource::new(cfg.dim, radius, cfg.sampler, cfg.margin, cfg.compensate_zero_mode)?;
    let window = src.window().clone();
    let wdomain = src.domain();
    let torus = match cfg.sampler {
        SamplerKind::Torus => {
            let t = src.torus().expect("torus backend");
            let l = t.side() as i64;
            let mut x = vec![0i64; cfg.dim];
            let core: Vec<usize> = (0..window.len())
                .map(|i| {
                    window.coords_into(i, &mut x);
                    x.iter().fold(0usize, |acc, &v| acc * t.side() + v.rem_euclid(l) as usize)
                })
                .collect();
            Some((t, Domain::torus(cfg.dim, t.side())?, core))
        }
        SamplerKind::Exact => None,
    };
    let inner: Vec<usize> = (0..window.len()).filter(|&i| window.dist_to_boundary(i) >= (radius as i64) / 2).collect();
    let out: Vec<Result<Vec<[f64; 3]>>> = par_replicates(cfg.replicates, cfg.seed, tag, |_, rng| {
        let (full, local) = match &torus {
            Some((t, _, _)) => {
                let full = t.sample_torus(rng);
                let local = t.restrict(&full, &window);
                (Some(full), local)
            }
            None => (None, src.sample(rng)?),
        };
        Ok(levels
            .iter()
            .map(|&lv| {
                let wl = label(wdomain, &excursion(&local, lv));
                let mu_w = count_clusters(&wl, None).total() as f64 / window.len() as f64;
                match (&torus, &full) {
                    (Some((_, td, core)), Some(f)) => {
                        let tl = label(td, &excursion(f, lv));
                        [
                            density_estimator(&tl, DensityMode::Count, None),
                            density_estimator(&tl, DensityMode::InverseSize, Some(core)),
                            mu_w,
                        ]
                    }
                    _ => [mu_w, density_estimator(&wl, DensityMode::InverseSize, Some(&inner)), mu_w],
                }
            })
            .collect())
    });
    Ok(Draws { values: out.into_iter().collect::<Result<_>>()?, sampler: src.describe().to_string(), window: src.window_label() })
}

fn column(d: &Draws, level: usize, k: usize) -> Vec<f64> {
    d.values.iter().map(|v| v[level][k]).collect()
}

/// `μ̂` at each configured level with both estimators, from common samples.
pub fn run_density_curve(cfg: &ExperimentConfig) -> Result<DensityCurve> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut symmetry = Vec::new();
    for &radius in &cfg.radii {
        let d = draws(cfg, radius, &cfg.levels, TAG + radius as u32)?;
        for (li, &level) in cfg.levels.iter().enumerate() {
            let c = Estimate::from_samples(&column(&d, li, 0));
            let s = Estimate::from_samples(&column(&d, li, 1));
            let w = Estimate::from_samples(&column(&d, li, 2));
            let gaps: Vec<f64> = d.values.iter().map(|v| v[li][0] - v[li][1]).collect();
            let g = Estimate::from_samples(&gaps);
            rows.push(DensityRow {
                level,
                radius,
                replicates: cfg.replicates,
                mu_count: c.value,
                mu_count_se: c.stderr,
                mu_invsize: s.value,
                mu_invsize_se: s.stderr,
                gap: g.value,
                gap_se: g.stderr,
                mu_window: w.value,
                mu_window_se: w.stderr,
                seed: cfg.seed,
                sampler: d.sampler.clone(),
                window: d.window.clone(),
            });
            if level > 0.0 {
                if let Some(mj) = cfg.levels.iter().position(|&m| m == -level) {
                    let diffs: Vec<f64> = d.values.iter().map(|v| v[li][0] - v[mj][0]).collect();
                    let e = Estimate::from_samples(&diffs);
                    symmetry.push(SymmetryCheck { level, radius, difference: e.value, stderr: e.stderr });
                }
            }
        }
    }
    Ok(DensityCurve { rows, symmetry })
}

/// Central difference `(μ̂(ℓ+δ) - μ̂(ℓ-δ)) / 2δ` at each configured level,
/// with common random numbers, for the first radius. Uses the count estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySlope {
    pub level: f64,
    pub step: f64,
    pub radius: usize,
    pub slope: f64,
    pub stderr: f64,
    pub replicates: usize,
    pub sampler: String,
}

pub fn run_density_slope(cfg: &ExperimentConfig) -> Result<Vec<DensitySlope>> {
    cfg.validate()?;
    let h = cfg.density.fd_step;
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::arg("finite-difference step must be positive"));
    }
    let radius = cfg.radii[0];
    let levels: Vec<f64> = cfg.levels.iter().flat_map(|&l| [l + h, l - h]).collect();
    let d = draws(cfg, radius, &levels, TAG ^ 0x51)?;
    Ok(cfg
        .levels
        .iter()
        .enumerate()
        .map(|(i, &level)| {
            let q: Vec<f64> = d.values.iter().map(|v| (v[2 * i][0] - v[2 * i + 1][0]) / (2.0 * h)).collect();
            let (m, var) = mean_var(&q);
            DensitySlope {
                level,
                step: h,
                radius,
                slope: m,
                stderr: (var / q.len() as f64).sqrt(),
                replicates: q.len(),
                sampler: d.sampler.clone(),
            }
        })
        .collect())
}
