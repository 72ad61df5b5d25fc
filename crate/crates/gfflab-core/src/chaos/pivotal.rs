//! Pivotal intensities `P(y_1, …, y_k)`.
//!
//! For distinct points the intensity is the pinned expectation
//! `E[d_y Ξ(f - ν) | f(y) = ν(y)] φ_{f(y)}(ν(y))`. Repeated points are reduced
//! to their distinct support `S` with multiplicities `α`, and the pinned
//! expectation picks up the Hermite factor `H^{α-1}` of the law of `f(S)`
//! given the other sites, evaluated at `ν(S) - E[f(S) | rest]`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::clusters::{
    discrete_derivative, excursion_at, label, CountFunctional, LevelSetFunctional, TruncatedCountFunctional,
};
use crate::error::{Error, Result};
use crate::gaussian::{coupled_covariance, ConditionalGaussian, CovarianceModel, PinUpdate, TorusSampler};
use crate::hermite::{hermite_multivariate, Poly};
use crate::lattice::{diam_inf, Domain, LatticeBox, Site};
use crate::numeric::{gaussian_density, MvnIntegrator};
use crate::rng::{par_replicates, stream, Rng};
use crate::stats::Estimate;

const TAG_EXACT: u32 = 0x5049_0001;
const TAG_JOINT: u32 = 0x5049_0002;
const TAG_TORUS: u32 = 0x5049_0003;
const TAG_SMOOTH: u32 = 0x5049_0004;

/// Sorted distinct entries and their multiplicities.
pub fn support_with_multiplicity<T: Ord + Clone>(points: &[T]) -> (Vec<T>, Vec<u32>) {
    let mut sorted = points.to_vec();
    sorted.sort();
    let mut sup: Vec<T> = Vec::new();
    let mut mult: Vec<u32> = Vec::new();
    for p in sorted {
        if sup.last() == Some(&p) {
            *mult.last_mut().unwrap() += 1;
        } else {
            sup.push(p);
            mult.push(1);
        }
    }
    (sup, mult)
}

/// A finite domain with its covariance, for exact conditional sampling.
#[derive(Debug, Clone)]
pub struct ExactDomain {
    pub domain: Domain,
    pub cov: DMatrix<f64>,
}

impl ExactDomain {
    pub fn new(model: &CovarianceModel, sites: &[Site]) -> Result<Self> {
        Ok(Self { domain: Domain::from_sites(sites)?, cov: model.matrix(sites)? })
    }

    pub fn from_box(model: &CovarianceModel, b: &LatticeBox) -> Result<Self> {
        let sites: Vec<Site> = b.sites().collect();
        Self::new(model, &sites)
    }

    pub fn len(&self) -> usize {
        self.domain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domain.is_empty()
    }

    pub fn site_index(&self, x: &[i64]) -> Result<usize> {
        self.domain.index_of(x).ok_or_else(|| Error::OutOfDomain(x.to_vec()))
    }
}

/// Law of a Gaussian vector pinned at some coordinates, with the density of
/// the pinned block and the Hermite factor for repeated points.
struct PinnedLaw {
    cond: ConditionalGaussian,
    values: Vec<f64>,
    density: f64,
    hermite: Option<Poly>,
}

impl PinnedLaw {
    fn new(cov: &DMatrix<f64>, pins: &[usize], mult: &[u32], values: &[f64]) -> Result<Self> {
        let cond = ConditionalGaussian::new(cov, pins)?;
        let density = gaussian_density(cond.cov_pinned(), values)?;
        let reduced: Vec<u32> = mult.iter().map(|m| m - 1).collect();
        let hermite = if reduced.iter().any(|&a| a > 0) {
            Some(hermite_multivariate(cond.cov_pinned_given_free(), &reduced)?)
        } else {
            None
        };
        Ok(Self { cond, values: values.to_vec(), density, hermite })
    }

    fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        self.cond.sample(&self.values, rng)
    }

    fn factor(&self, x: &[f64]) -> f64 {
        match &self.hermite {
            None => 1.0,
            Some(h) => {
                let reg = self.cond.pinned_regression(x);
                let arg: Vec<f64> = self.values.iter().zip(&reg).map(|(v, r)| v - r).collect();
                h.eval(&arg)
            }
        }
    }
}

/// `P_D(points)` for the level function `levels` on an exact domain.
/// Points are site indices and may repeat.
pub fn pivotal_intensity(
    ed: &ExactDomain,
    functional: &dyn LevelSetFunctional,
    levels: &[f64],
    points: &[usize],
    samples: usize,
    seed: u64,
) -> Result<Estimate> {
    if levels.len() != ed.len() {
        return Err(Error::arg("one level per site is required"));
    }
    if samples < 2 {
        return Err(Error::arg("at least two samples are required"));
    }
    let (sup, mult) = support_with_multiplicity(points);
    let vals: Vec<f64> = sup.iter().map(|&i| levels[i]).collect();
    let law = PinnedLaw::new(&ed.cov, &sup, &mult, &vals)?;
    let draws: Vec<Result<f64>> = par_replicates(samples, seed, TAG_EXACT, |_, rng| {
        let f = law.sample(rng);
        let mask = excursion_at(&f, levels);
        let d = discrete_derivative(functional, &ed.domain, &mask, &sup)?;
        Ok(if d == 0.0 { 0.0 } else { d * law.factor(&f) })
    });
    let xs: Vec<f64> = draws.into_iter().collect::<Result<_>>()?;
    Ok(Estimate::from_samples(&xs).scaled(law.density))
}

/// Interpolated intensity `P^t(x; y)`: pinned expectation of
/// `d_x Ξ(f - ν) d_y Ξ(f^t - ν)` for the pair `(f, f^t)` with
/// `Cov(f, f^t) = t K`, `0 ≤ t < 1`.
#[allow(clippy::too_many_arguments)]
pub fn joint_pivotal_intensity(
    ed: &ExactDomain,
    functional: &dyn LevelSetFunctional,
    levels: &[f64],
    x: &[usize],
    y: &[usize],
    t: f64,
    samples: usize,
    seed: u64,
) -> Result<Estimate> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::arg(format!("interpolation parameter {t} outside [0, 1)")));
    }
    let n = ed.len();
    let all: Vec<usize> = (0..n).collect();
    let cov = coupled_covariance(&ed.cov, &all, &all, t);
    let (sx, mx) = support_with_multiplicity(x);
    let (sy, my) = support_with_multiplicity(y);
    let pins: Vec<usize> = sx.iter().copied().chain(sy.iter().map(|i| i + n)).collect();
    let mult: Vec<u32> = mx.iter().chain(&my).copied().collect();
    let vals: Vec<f64> = pins.iter().map(|&i| levels[i % n]).collect();
    let law = PinnedLaw::new(&cov, &pins, &mult, &vals)?;
    let draws: Vec<Result<f64>> = par_replicates(samples, seed, TAG_JOINT, |_, rng| {
        let g = law.sample(rng);
        let m1 = excursion_at(&g[..n], levels);
        let d1 = discrete_derivative(functional, &ed.domain, &m1, &sx)?;
        if d1 == 0.0 {
            return Ok(0.0);
        }
        let m2 = excursion_at(&g[n..], levels);
        let d2 = discrete_derivative(functional, &ed.domain, &m2, &sy)?;
        Ok(if d2 == 0.0 { 0.0 } else { d1 * d2 * law.factor(&g) })
    });
    let xs: Vec<f64> = draws.into_iter().collect::<Result<_>>()?;
    Ok(Estimate::from_samples(&xs).scaled(law.density))
}

/// `E[Ξ(f + εZ - ν)]` computed as a sum of Gaussian orthant probabilities.
///
/// Only sites on which the functional actually depends enter the
/// probabilities. The lattice-rule shifts are fixed at construction, so
/// finite differences in `ν` use common random numbers.
#[derive(Debug, Clone)]
pub struct SmoothedMean {
    relevant: Vec<usize>,
    patterns: Vec<(u32, f64)>,
    mvn: MvnIntegrator,
}

/// Largest domain whose colourings are enumerated.
pub const MAX_ENUMERATED_SITES: usize = 16;

impl SmoothedMean {
    pub fn new(
        ed: &ExactDomain,
        functional: &dyn LevelSetFunctional,
        eps: f64,
        points: usize,
        shifts: usize,
        seed: u64,
    ) -> Result<Self> {
        let n = ed.len();
        if n > MAX_ENUMERATED_SITES {
            return Err(Error::Capacity { sites: n as u128, limit: MAX_ENUMERATED_SITES as u128 });
        }
        let eval = |bits: u32| {
            let mask: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
            functional.eval(&ed.domain, &mask)
        };
        let table: Vec<f64> = (0u32..1 << n).map(eval).collect();
        let relevant: Vec<usize> =
            (0..n).filter(|&s| (0usize..1 << n).any(|b| table[b] != table[b ^ (1 << s)])).collect();
        let patterns: Vec<(u32, f64)> = (0u32..1 << relevant.len())
            .filter_map(|p| {
                let full = relevant.iter().enumerate().fold(0usize, |acc, (k, &s)| acc | ((p as usize >> k & 1) << s));
                let v = table[full];
                (v != 0.0).then_some((p, v))
            })
            .collect();
        let k = relevant.len();
        let cov = DMatrix::from_fn(k, k, |i, j| {
            ed.cov[(relevant[i], relevant[j])] + if i == j { eps * eps } else { 0.0 }
        });
        let mut rng = stream(seed, TAG_SMOOTH, 0);
        let mvn = if k == 0 {
            MvnIntegrator::new(&DMatrix::identity(1, 1), 1, 2, &mut rng)?
        } else {
            MvnIntegrator::new(&cov, points, shifts, &mut rng)?
        };
        Ok(Self { relevant, patterns, mvn })
    }

    /// Sites the functional depends on.
    pub fn relevant(&self) -> &[usize] {
        &self.relevant
    }

    /// Mean and lattice-rule standard error at the level function `levels`.
    pub fn mean(&self, levels: &[f64]) -> (f64, f64) {
        let k = self.relevant.len();
        if k == 0 {
            return (self.patterns.first().map_or(0.0, |p| p.1), 0.0);
        }
        let mut lo = vec![0.0; k];
        let mut hi = vec![0.0; k];
        let (mut m, mut v) = (0.0, 0.0);
        for &(p, val) in &self.patterns {
            for (j, &s) in self.relevant.iter().enumerate() {
                if p >> j & 1 == 1 {
                    lo[j] = levels[s];
                    hi[j] = f64::INFINITY;
                } else {
                    lo[j] = f64::NEG_INFINITY;
                    hi[j] = levels[s];
                }
            }
            let (pr, se) = self.mvn.prob(&lo, &hi);
            m += val * pr;
            v += (val * se).powi(2);
        }
        (m, v.sqrt())
    }

    /// `(-1)^m ∂^α_ν` of the mean by central differences of step `h`;
    /// the finite-difference counterpart of [`pivotal_intensity`].
    pub fn derivative(&self, levels: &[f64], points: &[usize], h: f64) -> f64 {
        let (sup, mult) = support_with_multiplicity(points);
        let m: u32 = mult.iter().sum();
        // Tensor product of central difference stencils.
        let mut stencil: Vec<(Vec<f64>, f64)> = vec![(vec![0.0; sup.len()], 1.0)];
        for (i, &a) in mult.iter().enumerate() {
            let mut next = Vec::new();
            for (off, w) in &stencil {
                for j in 0..=a {
                    let mut o = off.clone();
                    o[i] = (a as f64 / 2.0 - j as f64) * h;
                    let c = binomial(a, j) * if j % 2 == 0 { 1.0 } else { -1.0 };
                    next.push((o, w * c));
                }
            }
            stencil = next;
        }
        let mut lv = levels.to_vec();
        let mut acc = 0.0;
        for (off, w) in &stencil {
            for (k, &s) in sup.iter().enumerate() {
                lv[s] = levels[s] + off[k];
            }
            acc += w * self.mean(&lv).0;
        }
        let sign = if m.is_multiple_of(2) { 1.0 } else { -1.0 };
        sign * acc / h.powi(m as i32)
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Window geometry for stationary intensities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowShape {
    /// `Λ_W = [-W, W]^d`.
    Bulk,
    /// `H_W = [0, W] × [-W, W]^{d-1}`, whose face `x_1 = 0` is the boundary of the half-space.
    HalfSpace,
}

impl WindowShape {
    pub fn window(self, dim: usize, radius: i64) -> Result<LatticeBox> {
        match self {
            Self::Bulk => LatticeBox::new(dim, radius),
            Self::HalfSpace => {
                let mut lo = vec![-radius; dim];
                lo[0] = 0;
                LatticeBox::from_bounds(lo, vec![radius; dim])
            }
        }
    }
}

/// Parameters of a torus-based stationary intensity estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationaryConfig {
    pub dim: usize,
    /// Window radius `W`.
    pub radius: i64,
    /// Torus side divided by the window radius.
    pub margin: f64,
    pub level: f64,
    /// Independent torus samples.
    pub samples: usize,
    /// Windows read from each torus sample; 0 uses every disjoint placement.
    pub windows_per_sample: usize,
    pub shape: WindowShape,
    pub seed: u64,
    /// Second, smaller window radius for the window-sensitivity diagnostic.
    #[serde(default)]
    pub sensitivity_radius: Option<i64>,
}

impl StationaryConfig {
    pub fn bulk(dim: usize, radius: i64, level: f64, samples: usize, seed: u64) -> Self {
        Self {
            dim,
            radius,
            margin: 8.0,
            level,
            samples,
            windows_per_sample: 0,
            shape: WindowShape::Bulk,
            seed,
            sensitivity_radius: None,
        }
    }
}

/// Which intensity an estimate targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Target {
    FiniteBox,
    Stationary,
    HalfSpace,
    Truncated { r: i64 },
    Joint { t: f64 },
}

/// Difference between the estimate and the same estimate on a smaller window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    pub radius: i64,
    pub difference: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowInfo {
    pub shape: WindowShape,
    pub radius: i64,
    pub torus_side: usize,
    pub windows_per_sample: usize,
    /// Fraction of windows where a component the points can attach to reached the window boundary.
    pub unstable_fraction: f64,
    pub sensitivity: Option<Sensitivity>,
}

/// A pivotal-intensity estimate with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PivotalEstimate {
    pub target: Target,
    pub points: Vec<Site>,
    pub level: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub budget: usize,
    pub window: Option<WindowInfo>,
    pub sampler: String,
}

impl PivotalEstimate {
    pub fn as_estimate(&self) -> Estimate {
        Estimate { value: self.estimate, stderr: self.stderr, n: self.budget }
    }

    /// Wrap a finite-domain estimate.
    pub fn finite_box(points: Vec<Site>, level: f64, e: Estimate) -> Self {
        Self {
            target: Target::FiniteBox,
            points,
            level,
            estimate: e.value,
            stderr: e.stderr,
            budget: e.n,
            window: None,
            sampler: "exact-conditional".into(),
        }
    }
}

/// Several stationary intensities estimated from shared torus samples.
#[derive(Debug, Clone)]
pub struct StationaryBatch {
    pub estimates: Vec<Estimate>,
    /// `Σ_i w_i P(tuple_i)` with a standard error that accounts for the shared samples.
    pub total: Estimate,
    pub unstable_fraction: f64,
    pub windows: usize,
    pub torus_side: usize,
}

/// Translations of the base window that fit disjointly in the torus.
fn placements(side: usize, window: &LatticeBox, cap: usize) -> Vec<Vec<i64>> {
    let dim = window.dim();
    let per_axis: Vec<usize> = (0..dim).map(|a| (side / window.side(a)).max(1)).collect();
    let total: usize = per_axis.iter().product();
    let take = if cap == 0 { total } else { cap.min(total) };
    (0..take)
        .map(|mut i| {
            let mut t = vec![0i64; dim];
            for a in (0..dim).rev() {
                t[a] = ((i % per_axis[a]) * window.side(a)) as i64;
                i /= per_axis[a];
            }
            t
        })
        .collect()
}

struct TupleSetup {
    pins: Vec<usize>,
    density: f64,
    update: PinUpdate,
    hermite: LocalHermite,
}

/// Stationary intensities of the free field at a constant level for each
/// point tuple, on torus windows. Points are window coordinates and may
/// repeat; repeated points need all their neighbours inside the window.
pub fn stationary_batch(
    cfg: &StationaryConfig,
    functional: &dyn LevelSetFunctional,
    tuples: &[Vec<Site>],
    weights: &[f64],
) -> Result<StationaryBatch> {
    if cfg.samples < 2 {
        return Err(Error::arg("at least two torus samples are required"));
    }
    if weights.len() != tuples.len() {
        return Err(Error::arg("one weight per tuple is required"));
    }
    let window = cfg.shape.window(cfg.dim, cfg.radius)?;
    let span = (0..cfg.dim).map(|a| window.side(a)).max().unwrap_or(1);
    let torus = TorusSampler::for_window(cfg.dim, span.div_ceil(2), cfg.margin)?;
    let domain = window.domain();
    let setups: Vec<TupleSetup> = tuples
        .iter()
        .map(|points| {
            let (sup, mult) = support_with_multiplicity(points);
            let pins: Vec<usize> = sup
                .iter()
                .map(|p| window.index_of(p).ok_or_else(|| Error::OutOfDomain(p.clone())))
                .collect::<Result<_>>()?;
            let k = pins.len();
            let pin_cov = DMatrix::from_fn(k, k, |i, j| {
                let d: Vec<i64> = sup[i].iter().zip(&sup[j]).map(|(a, b)| a - b).collect();
                torus.covariance(&d)
            });
            Ok(TupleSetup {
                density: gaussian_density(&pin_cov, &vec![cfg.level; k])?,
                update: PinUpdate::new(&torus.covariance_columns(&window, &sup), &pins, &pin_cov)?,
                hermite: LocalHermite::new(&window, &pins, &mult)?,
                pins,
            })
        })
        .collect::<Result<_>>()?;
    let shifts = placements(torus.side(), &window, cfg.windows_per_sample);
    let levels = vec![cfg.level; window.len()];
    let per_sample: Vec<Result<(Vec<f64>, usize)>> = par_replicates(cfg.samples, cfg.seed, TAG_TORUS, |_, rng| {
        let full = torus.sample_torus(rng);
        let mut acc = vec![0.0; setups.len()];
        let mut unstable = 0;
        for t in &shifts {
            let lo: Vec<i64> = window.lo().iter().zip(t).map(|(a, b)| a + b).collect();
            let hi: Vec<i64> = window.hi().iter().zip(t).map(|(a, b)| a + b).collect();
            let base = torus.restrict(&full, &LatticeBox::from_bounds(lo, hi)?);
            for (j, s) in setups.iter().enumerate() {
                let mut f = base.clone();
                s.update.apply(&mut f, &levels[..s.pins.len()]);
                let mask = excursion_at(&f, &levels);
                if touches_boundary(&domain, &mask, &s.pins) {
                    unstable += 1;
                }
                let d = discrete_derivative(functional, &domain, &mask, &s.pins)?;
                if d != 0.0 {
                    acc[j] += d * s.hermite.factor(&domain, &f) * s.density;
                }
            }
        }
        let nw = shifts.len() as f64;
        Ok((acc.into_iter().map(|a| a / nw).collect(), unstable))
    });
    let mut rows = Vec::with_capacity(cfg.samples);
    let mut unstable = 0;
    for r in per_sample {
        let (v, u) = r?;
        rows.push(v);
        unstable += u;
    }
    let estimates = (0..setups.len())
        .map(|j| Estimate::from_samples(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect();
    let totals: Vec<f64> = rows.iter().map(|r| r.iter().zip(weights).map(|(a, w)| a * w).sum()).collect();
    Ok(StationaryBatch {
        estimates,
        total: Estimate::from_samples(&totals),
        unstable_fraction: unstable as f64 / (cfg.samples * shifts.len() * setups.len().max(1)) as f64,
        windows: shifts.len(),
        torus_side: torus.side(),
    })
}

/// Stationary intensity `P_∞(points)` approximated on torus windows.
pub fn stationary_pivotal_intensity(
    cfg: &StationaryConfig,
    functional: &dyn LevelSetFunctional,
    points: &[Site],
) -> Result<PivotalEstimate> {
    let tuples = [points.to_vec()];
    let b = stationary_batch(cfg, functional, &tuples, &[1.0])?;
    let e = b.estimates[0];
    let sensitivity = match cfg.sensitivity_radius {
        Some(r) if r < cfg.radius => {
            let small = StationaryConfig { radius: r, seed: cfg.seed ^ 0x5e45, sensitivity_radius: None, ..cfg.clone() };
            let s = stationary_batch(&small, functional, &tuples, &[1.0])?.estimates[0];
            Some(Sensitivity {
                radius: r,
                difference: e.value - s.value,
                stderr: (e.stderr.powi(2) + s.stderr.powi(2)).sqrt(),
            })
        }
        Some(r) => return Err(Error::arg(format!("sensitivity radius {r} must be below {}", cfg.radius))),
        None => None,
    };
    Ok(PivotalEstimate {
        target: if cfg.shape == WindowShape::HalfSpace { Target::HalfSpace } else { Target::Stationary },
        points: points.to_vec(),
        level: cfg.level,
        estimate: e.value,
        stderr: e.stderr,
        budget: cfg.samples,
        window: Some(WindowInfo {
            shape: cfg.shape,
            radius: cfg.radius,
            torus_side: b.torus_side,
            windows_per_sample: b.windows,
            unstable_fraction: b.unstable_fraction,
            sensitivity,
        }),
        sampler: "torus-spectral+kriging".into(),
    })
}

/// Half-space intensity `P^H_∞(k)` of the cluster count at `(k, 0, …, 0)`.
pub fn halfspace_pivotal_intensity(cfg: &StationaryConfig, k: i64) -> Result<PivotalEstimate> {
    if k < 0 || k > cfg.radius {
        return Err(Error::arg(format!("height {k} outside [0, {}]", cfg.radius)));
    }
    let mut y = vec![0; cfg.dim];
    y[0] = k;
    let c = StationaryConfig { shape: WindowShape::HalfSpace, ..cfg.clone() };
    stationary_pivotal_intensity(&c, &CountFunctional, &[y])
}

/// Stationary intensity of the truncated count `N_{≤r}`. It vanishes
/// identically when the points span more than `r + 2`.
pub fn truncated_pivotal_intensity(cfg: &StationaryConfig, r: i64, points: &[Site]) -> Result<PivotalEstimate> {
    if diam_inf(points) > r + 2 {
        return Ok(PivotalEstimate {
            target: Target::Truncated { r },
            points: points.to_vec(),
            level: cfg.level,
            estimate: 0.0,
            stderr: 0.0,
            budget: 0,
            window: None,
            sampler: "support-bound".into(),
        });
    }
    let mut out = stationary_pivotal_intensity(cfg, &TruncatedCountFunctional { max_diam: r }, points)?;
    out.target = Target::Truncated { r };
    Ok(out)
}

/// Whether a component that any configuration of the pins can attach to reaches `∂D`.
fn touches_boundary(domain: &Domain, mask: &[bool], pins: &[usize]) -> bool {
    let mut work = mask.to_vec();
    for value in [true, false] {
        for &p in pins {
            work[p] = value;
        }
        let lab = label(domain, &work);
        if pins.iter().any(|&p| lab.component_of(p).touches_boundary) {
            return true;
        }
    }
    false
}

/// Hermite factor for the free field from its local precision
/// `Q = I - P`, `P` the simple random walk kernel: `f(S)` given the rest
/// has covariance `Q_SS^{-1}` and `ν - E[f(S) | rest] = Q_SS^{-1} (Q f)_S`.
/// On the torus this ignores the zero-mode constraint, an `O(L^{-d})` effect.
struct LocalHermite {
    pins: Vec<usize>,
    q_ss_inv: DMatrix<f64>,
    poly: Option<Poly>,
}

impl LocalHermite {
    fn new(window: &LatticeBox, pins: &[usize], mult: &[u32]) -> Result<Self> {
        let k = pins.len();
        let reduced: Vec<u32> = mult.iter().map(|m| m - 1).collect();
        let off = -1.0 / (2 * window.dim()) as f64;
        let q_ss = DMatrix::from_fn(k, k, |i, j| {
            if i == j {
                1.0
            } else if window.neighbor_indices(pins[i]).contains(&pins[j]) {
                off
            } else {
                0.0
            }
        });
        let q_ss_inv = q_ss
            .try_inverse()
            .ok_or_else(|| Error::NotPositiveDefinite("local precision block".into()))?;
        let poly = if reduced.iter().any(|&a| a > 0) {
            if pins.iter().any(|&p| window.is_boundary(p)) {
                return Err(Error::arg("repeated points need their neighbours inside the window"));
            }
            Some(hermite_multivariate(&q_ss_inv, &reduced)?)
        } else {
            None
        };
        Ok(Self { pins: pins.to_vec(), q_ss_inv, poly })
    }

    fn factor(&self, domain: &Domain, f: &[f64]) -> f64 {
        let Some(poly) = &self.poly else { return 1.0 };
        let deg = (2 * domain.dim()) as f64;
        let qf: Vec<f64> = self
            .pins
            .iter()
            .map(|&p| f[p] - domain.neighbors(p).iter().map(|&j| f[j as usize]).sum::<f64>() / deg)
            .collect();
        let k = self.pins.len();
        let arg: Vec<f64> = (0..k).map(|i| (0..k).map(|j| self.q_ss_inv[(i, j)] * qf[j]).sum()).collect();
        poly.eval(&arg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clusters::AllComponentsFunctional;

    #[test]
    fn multiplicities() {
        let (s, m) = support_with_multiplicity(&[3, 1, 3, 3, 2]);
        assert_eq!(s, vec![1, 2, 3]);
        assert_eq!(m, vec![1, 1, 3]);
    }

    #[test]
    fn smoothed_mean_reduces_to_relevant_sites() {
        let model = CovarianceModel::Iid { dim: 2 };
        let ed = ExactDomain::from_box(&model, &LatticeBox::new(2, 1).unwrap()).unwrap();
        let sm = SmoothedMean::new(&ed, &CountFunctional, 0.0, 64, 4, 1).unwrap();
        assert_eq!(sm.relevant().len(), 5);
        // Ξ = 1 exactly when the centre differs from all four neighbours.
        let (m, _) = sm.mean(&[0.0; 9]);
        assert!((m - 2.0 / 32.0).abs() < 1e-12);
    }

    #[test]
    fn exact_and_smoothed_agree_on_a_path() {
        let sites: Vec<Site> = (0..4).map(|i| vec![i, 0, 0]).collect();
        let ed = ExactDomain::new(&CovarianceModel::gff(3).unwrap(), &sites).unwrap();
        let lv = vec![0.3; 4];
        let sm = SmoothedMean::new(&ed, &AllComponentsFunctional, 0.0, 4000, 8, 3).unwrap();
        let fd = sm.derivative(&lv, &[1], 1e-3);
        let mc = pivotal_intensity(&ed, &AllComponentsFunctional, &lv, &[1], 40_000, 5).unwrap();
        assert!((mc.value - fd).abs() < 4.0 * mc.stderr + 1e-4, "{mc:?} vs {fd}");
    }
}
