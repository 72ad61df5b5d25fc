use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::clusters::{arm_reach, excursion};
use crate::error::{Error, Result};
use crate::gaussian::{PinUpdate, TorusSampler};
use crate::lattice::LatticeBox;
use crate::numeric::{bvn_cdf, gaussian_density, norm_cdf, norm_pdf, MvnIntegrator};
use crate::rng::{par_replicates, stream};
use crate::stats::Estimate;

const TAG: u32 = 0xA4;
const DEPIN_TAG: u32 = 0xA5;

/// Arm-event frequency at one `(ℓ, r)`. With no hits the point estimate is
/// left empty and `upper_bound` holds the one-sided 95% bound `1 - 0.05^{1/n}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRow {
    pub level: f64,
    pub r: i64,
    pub pinned: bool,
    pub p_hat: Option<f64>,
    pub stderr: Option<f64>,
    pub upper_bound: Option<f64>,
    pub hits: usize,
    pub trials: usize,
    pub torus_side: usize,
    pub seed: u64,
    pub sampler: String,
    pub window: String,
}

/// Pinned estimate measured against the de-pinning form
/// `p̃ φ_{f(0)}(ℓ) / (p max{1, (log 1/p)^{1/2}})` with `p` the unpinned estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepinningRatio {
    pub level: f64,
    pub r: i64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmDecay {
    pub rows: Vec<ArmRow>,
    /// Every series is non-increasing in `r` (exact: the events are nested per sample).
    pub monotone: bool,
    pub depinning: Vec<DepinningRatio>,
}

impl ArmRow {
    /// Point estimate, or the one-sided bound when there were no hits.
    pub fn value_or_bound(&self) -> f64 {
        self.p_hat.or(self.upper_bound).unwrap_or(f64::NAN)
    }
}

/// Disjoint window origins on the torus.
fn origins(side: usize, width: usize, dim: usize, cap: usize) -> Vec<Vec<i64>> {
    let per = (side / width).max(1);
    let total = per.pow(dim as u32).min(cap.max(1));
    (0..total)
        .map(|mut i| {
            let mut o = vec![0i64; dim];
            for a in (0..dim).rev() {
                o[a] = ((i % per) * width) as i64;
                i /= per;
            }
            o
        })
        .collect()
}

fn measure(cfg: &ExperimentConfig, side: usize, replicates: usize, tag: u32) -> Result<Vec<ArmRow>> {
    let a = &cfg.arm;
    let d = cfg.dim;
    if a.radii.is_empty() || a.radii.iter().any(|&r| r < 1 || r >= a.window) {
        return Err(Error::arg(format!("arm radii must lie in 1..{}", a.window)));
    }
    let mut torus = TorusSampler::new(d, side)?;
    if cfg.compensate_zero_mode {
        torus = torus.compensated()?;
    }
    let base = LatticeBox::new(d, a.window)?;
    if (side as f64) < crate::gaussian::MIN_MARGIN * (a.window + 1) as f64 {
        return Err(Error::arg(format!("torus side {side} too small for window radius {}", a.window)));
    }
    let domain = base.domain();
    let origin = vec![0i64; d];
    let center = base.index_of(&origin).expect("origin in window");
    let var = torus.variance();
    let update = PinUpdate::new(
        &torus.covariance_columns(&base, &[origin]),
        &[center],
        &DMatrix::from_element(1, 1, var),
    )?;
    let starts = origins(side, base.side(0), d, a.windows_per_sample);
    let shifted: Vec<LatticeBox> = starts
        .iter()
        .map(|o| {
            let lo: Vec<i64> = o.iter().map(|v| v - a.window).collect();
            let hi: Vec<i64> = o.iter().map(|v| v + a.window).collect();
            LatticeBox::from_bounds(lo, hi)
        })
        .collect::<Result<_>>()?;
    let levels = &cfg.levels;
    // reach[level][pinned][window]
    let reaches: Vec<Vec<[i64; 2]>> = par_replicates(replicates, cfg.seed, tag, |_, rng| {
        let full = torus.sample_torus(rng);
        let mut out = Vec::with_capacity(levels.len() * shifted.len());
        for w in &shifted {
            let local = torus.restrict(&full, w);
            for &l in levels {
                let free = arm_reach(&domain, &excursion(&local, l), center, &[]);
                let pinned = if a.pinned {
                    let mut f = local.clone();
                    update.apply(&mut f, &[l]);
                    arm_reach(&domain, &excursion(&f, l), center, &[center])
                } else {
                    -1
                };
                out.push([free, pinned]);
            }
        }
        out
    });
    let sampler = format!("torus L={side}{}", if cfg.compensate_zero_mode { " +zero-mode" } else { "" });
    let window = format!("box W={} x{}", a.window, shifted.len());
    let mut rows = Vec::new();
    let nl = levels.len();
    for (li, &level) in levels.iter().enumerate() {
        for pinned in [false, true] {
            if pinned && !a.pinned {
                continue;
            }
            for &r in &a.radii {
                let counts: Vec<usize> = reaches
                    .iter()
                    .map(|rep| (0..shifted.len()).filter(|&w| rep[w * nl + li][pinned as usize] >= r).count())
                    .collect();
                let per_rep: Vec<f64> = counts.iter().map(|&c| c as f64 / shifted.len() as f64).collect();
                let trials = replicates * shifted.len();
                let hits: usize = counts.iter().sum();
                let (p_hat, stderr, upper_bound) = if hits == 0 {
                    (None, None, Some(1.0 - 0.05f64.powf(1.0 / trials as f64)))
                } else {
                    let e = Estimate::from_samples(&per_rep);
                    (Some(e.value), Some(e.stderr), None)
                };
                rows.push(ArmRow {
                    level,
                    r,
                    pinned,
                    p_hat,
                    stderr,
                    upper_bound,
                    hits,
                    trials,
                    torus_side: side,
                    seed: cfg.seed,
                    sampler: sampler.clone(),
                    window: window.clone(),
                });
            }
        }
    }
    Ok(rows)
}

/// Bounded-arm frequencies of `{f > ℓ}` for `r` in the configured list,
/// unpinned and pinned at the origin, with optional rows on a second torus.
pub fn run_arm_decay(cfg: &ExperimentConfig) -> Result<ArmDecay> {
    cfg.validate()?;
    let a = &cfg.arm;
    let mut rows = measure(cfg, a.torus_side, cfg.replicates, TAG)?;
    let series = |rows: &[ArmRow]| {
        let mut ok = true;
        for w in rows.windows(2) {
            if w[0].level == w[1].level && w[0].pinned == w[1].pinned && w[1].r > w[0].r {
                ok &= w[1].hits <= w[0].hits;
            }
        }
        ok
    };
    let monotone = series(&rows);
    let g0 = crate::green::green_function(cfg.dim, &vec![0; cfg.dim])?;
    let mut depinning = Vec::new();
    for p in rows.iter().filter(|r| r.pinned) {
        let free = rows.iter().find(|q| !q.pinned && q.level == p.level && q.r == p.r);
        if let (Some(pp), Some(fp)) = (p.p_hat, free.and_then(|q| q.p_hat)) {
            let phi = norm_pdf(p.level / g0.sqrt()) / g0.sqrt();
            let ratio = pp * phi / (fp * (1f64).max((1.0 / fp).ln().sqrt()));
            depinning.push(DepinningRatio { level: p.level, r: p.r, ratio });
        }
    }
    if let Some(side) = a.sensitivity_side {
        rows.extend(measure(cfg, side, a.sensitivity_replicates, TAG + 1)?);
    }
    Ok(ArmDecay { rows, monotone, depinning })
}

/// One random instance of the de-pinning inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepinningInstance {
    pub n: usize,
    pub m: usize,
    pub level: f64,
    pub lambda_min: f64,
    /// `P[A | Y = ℓ] φ_Y(ℓ)`.
    pub pinned: f64,
    /// `P[A, Y ≤ ℓ]`.
    pub joint: f64,
    /// `pinned / (λ_min^{-m} P max{1, (log 1/P)^{m/2}})`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepinningCheck {
    pub calibration: usize,
    pub verification: usize,
    /// Largest calibration ratio.
    pub fitted: f64,
    /// Safety factor applied to the fitted constant.
    pub slack: f64,
    pub largest_verified: f64,
    pub violations: usize,
}

impl DepinningCheck {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

/// A unit-variance `(X, Y)` with `n, m ∈ {1, 2}`, a level in `[-1, 1]` and an
/// orthant event on `X`.
pub fn depinning_instance(seed: u64, index: u64) -> Result<DepinningInstance> {
    let mut rng = stream(seed, DEPIN_TAG, index);
    let n = rng.random_range(1..=2usize);
    let m = rng.random_range(1..=2usize);
    let k = n + m;
    let g = DMatrix::from_fn(k, k + 1, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut s = &g * g.transpose() / (k + 1) as f64 + DMatrix::identity(k, k) * 0.05;
    let diag: Vec<f64> = (0..k).map(|i| s[(i, i)].sqrt()).collect();
    for i in 0..k {
        for j in 0..k {
            s[(i, j)] /= diag[i] * diag[j];
        }
    }
    let level: f64 = rng.random_range(-1.0..=1.0);
    let thresholds: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..=2.0)).collect();
    let upper: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    let lambda_min = s.clone().symmetric_eigenvalues().min();

    let sxx = s.view((0, 0), (n, n)).into_owned();
    let sxy = s.view((0, n), (n, m)).into_owned();
    let syy = s.view((n, n), (m, m)).into_owned();
    let chol = syy.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite("Y block".into()))?;
    let y = nalgebra::DVector::from_element(m, level);
    let mean = &sxy * chol.solve(&y);
    let cond = &sxx - &sxy * chol.solve(&sxy.transpose());
    // Upper orthant in standardised coordinates: P[s_i Z_i > s_i h_i].
    let sd: Vec<f64> = (0..n).map(|i| cond[(i, i)].max(0.0).sqrt()).collect();
    let h: Vec<f64> = (0..n).map(|i| (thresholds[i] - mean[i]) / sd[i]).collect();
    let sign: Vec<f64> = upper.iter().map(|&u| if u { 1.0 } else { -1.0 }).collect();
    let cond_p = if n == 1 {
        norm_cdf(-sign[0] * h[0])
    } else {
        let rho = cond[(0, 1)] / (sd[0] * sd[1]);
        bvn_cdf(-sign[0] * h[0], -sign[1] * h[1], sign[0] * sign[1] * rho)
    };
    let pinned = cond_p * gaussian_density(&syy, y.as_slice())?;

    let mut lower = vec![f64::NEG_INFINITY; k];
    let mut upper_b = vec![f64::INFINITY; k];
    for i in 0..n {
        if upper[i] {
            lower[i] = thresholds[i];
        } else {
            upper_b[i] = thresholds[i];
        }
    }
    for b in upper_b.iter_mut().skip(n) {
        *b = level;
    }
    let (joint, _) = MvnIntegrator::new(&s, 2048, 8, &mut rng)?.prob(&lower, &upper_b);
    if !(joint > 0.0) {
        return Err(Error::Numerical("orthant probability underflow".into()));
    }
    let log_factor = 1f64.max((1.0 / joint).ln().powf(m as f64 / 2.0));
    let ratio = pinned / (lambda_min.powi(-(m as i32)) * joint * log_factor);
    Ok(DepinningInstance { n, m, level, lambda_min, pinned, joint, ratio })
}

/// Fit the constant as the largest ratio over `calibration` instances and
/// check `verification` fresh instances against `slack` times it.
pub fn depinning_check(calibration: usize, verification: usize, slack: f64, seed: u64) -> Result<DepinningCheck> {
    let all: Vec<Result<DepinningInstance>> =
        par_replicates(calibration + verification, seed, DEPIN_TAG ^ 1, |i, _| depinning_instance(seed, i as u64));
    let all: Vec<DepinningInstance> = all.into_iter().collect::<Result<_>>()?;
    let fitted = all[..calibration].iter().map(|x| x.ratio).fold(0.0, f64::max);
    let largest = all[calibration..].iter().map(|x| x.ratio).fold(0.0, f64::max);
    let violations = all[calibration..].iter().filter(|x| x.ratio > slack * fitted).count();
    Ok(DepinningCheck { calibration, verification, fitted, slack, largest_verified: largest, violations })
}
