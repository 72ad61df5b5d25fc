use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gfflab_core::chaos::{
    chaos_component_variance, chaos_component_variance_stderr, halfspace_pivotal_intensity, intensity_table,
    pivotal_intensity, stationary_pivotal_intensity, tail_variance, truncated_pivotal_intensity, ExactDomain,
    PivotalEstimate, StationaryConfig,
};
use gfflab_core::clusters::{
    count_clusters, excursion, label, AllComponentsFunctional, CountFunctional, LevelSetFunctional,
};
use gfflab_core::experiments::hermite2::grid_convergence;
use gfflab_core::experiments::summary::summarize;
use gfflab_core::experiments::*;
use gfflab_core::gaussian::{CovarianceModel, ExactSampler};
use gfflab_core::green::{asymptotic_constant, fit_asymptotic_constant, Green};
use gfflab_core::kernels::{beta_constant, beta_continuum, e_constant};
use gfflab_core::rng::{par_replicates, stream, with_workers};
use gfflab_core::stats::Estimate;
use gfflab_core::{LatticeBox, Site};

#[derive(Parser, Debug)]
#[command(name = "gfflab", version, about = "Level-set cluster counts of the lattice Gaussian free field")]
struct Cli {
    /// Master seed; overrides the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = automatic). Results do not depend on it.
    #[arg(long, global = true, env = "GFFLAB_WORKERS")]
    workers: Option<usize>,
    /// Directory receiving `<command>.csv` and `<command>.json`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One field sample on the window, as (x1..xd, value).
    SampleField(SampleFieldArgs),
    /// Boundary-avoiding cluster counts per replicate.
    ClusterCount(ClusterCountArgs),
    /// Cluster density μ(ℓ) by several estimators.
    Density(DensityArgs),
    /// Var N_R(ℓ) against R with log-log fits.
    VarianceScaling(Common),
    /// Shape statistics of standardised counts against normal and Hermite references.
    DistributionTest(Common),
    /// Bounded-arm probabilities and the de-pinning check.
    ArmDecay(ArmArgs),
    /// One pivotal intensity.
    PivotalIntensity(PivotalArgs),
    /// Chaos component variances on a small exact domain.
    ChaosDecompose(ChaosArgs),
    /// Green's function values and kernel constants.
    Constants(ConstantsArgs),
    /// Samples from the Hermite reference law.
    Hermite2Sample(HermiteArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SamplerArg {
    Torus,
    Exact,
}

impl From<SamplerArg> for SamplerKind {
    fn from(s: SamplerArg) -> Self {
        match s {
            SamplerArg::Torus => SamplerKind::Torus,
            SamplerArg::Exact => SamplerKind::Exact,
        }
    }
}

/// Overrides of the shared configuration fields.
#[derive(Args, Debug, Default)]
struct Common {
    #[arg(long = "d")]
    dim: Option<usize>,
    /// Window radii, comma separated.
    #[arg(long = "R", value_delimiter = ',')]
    radii: Option<Vec<usize>>,
    /// Levels, comma separated.
    #[arg(long = "level", value_delimiter = ',', allow_hyphen_values = true)]
    levels: Option<Vec<f64>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, value_enum)]
    sampler: Option<SamplerArg>,
    /// Torus side over window radius.
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    batches: Option<usize>,
    /// Disable the zero-mode shift of torus samples.
    #[arg(long)]
    no_zero_mode: bool,
}

impl Common {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(d) = self.dim {
            cfg.dim = d;
        }
        if let Some(r) = &self.radii {
            cfg.radii = r.clone();
        }
        if let Some(l) = &self.levels {
            cfg.levels = l.clone();
        }
        if let Some(n) = self.reps {
            cfg.replicates = n;
            cfg.batches = cfg.batches.min(n);
        }
        if let Some(s) = self.sampler {
            cfg.sampler = s.into();
        }
        if let Some(m) = self.margin {
            cfg.margin = m;
        }
        if let Some(b) = self.batches {
            cfg.batches = b;
        }
        if self.no_zero_mode {
            cfg.compensate_zero_mode = false;
        }
    }
}

#[derive(Args, Debug)]
struct SampleFieldArgs {
    #[command(flatten)]
    common: Common,
    /// Replicate index of the sample.
    #[arg(long, default_value_t = 0)]
    index: u64,
}

#[derive(Args, Debug)]
struct ClusterCountArgs {
    #[command(flatten)]
    common: Common,
    /// Also count components of ℓ^∞ diameter at most r.
    #[arg(long)]
    truncate: Option<i64>,
}

#[derive(Args, Debug)]
struct DensityArgs {
    #[command(flatten)]
    common: Common,
    /// Add the common-random-number slope at each level.
    #[arg(long)]
    slope: bool,
    #[arg(long)]
    fd_step: Option<f64>,
}

#[derive(Args, Debug)]
struct ArmArgs {
    #[command(flatten)]
    common: Common,
    /// Arm radii, comma separated.
    #[arg(long, value_delimiter = ',')]
    arm_radii: Option<Vec<i64>>,
    #[arg(long)]
    window: Option<i64>,
    #[arg(long)]
    torus_side: Option<usize>,
    /// Verification instances of the de-pinning check (0 skips it).
    #[arg(long, default_value_t = 0)]
    depinning: usize,
    #[arg(long, default_value_t = 200)]
    calibration: usize,
    #[arg(long, default_value_t = 1.1)]
    slack: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum TargetArg {
    FiniteBox,
    Stationary,
    HalfSpace,
    Truncated,
}

#[derive(Args, Debug)]
struct PivotalArgs {
    #[arg(long, value_enum, default_value = "stationary")]
    target: TargetArg,
    #[arg(long = "d", default_value_t = 3)]
    dim: usize,
    /// Sites separated by ';', coordinates by ','.
    #[arg(long, allow_hyphen_values = true)]
    points: Option<String>,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    level: f64,
    /// Window radius W (stationary targets) or box radius (finite box).
    #[arg(long = "W", default_value_t = 5)]
    window: i64,
    #[arg(long, default_value_t = 400)]
    samples: usize,
    /// Height of the half-space point.
    #[arg(long, default_value_t = 0)]
    k: i64,
    /// Diameter cut of the truncated count.
    #[arg(long, default_value_t = 2)]
    r: i64,
    #[arg(long, default_value_t = 8.0)]
    margin: f64,
    #[arg(long, default_value_t = 0)]
    windows_per_sample: usize,
    /// Smaller window radius for the sensitivity diagnostic.
    #[arg(long)]
    sensitivity: Option<i64>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum FunctionalArg {
    /// Every component of both phases.
    All,
    /// Components avoiding the domain boundary.
    Count,
}

#[derive(Args, Debug)]
struct ChaosArgs {
    #[arg(long = "d", default_value_t = 3)]
    dim: usize,
    /// Sites separated by ';'; defaults to the unit square in the first two axes.
    #[arg(long, allow_hyphen_values = true)]
    sites: Option<String>,
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    level: f64,
    #[arg(long, default_value_t = 4)]
    max_order: usize,
    /// Samples per intensity.
    #[arg(long, default_value_t = 20_000)]
    samples: usize,
    /// Samples of the direct variance.
    #[arg(long, default_value_t = 100_000)]
    direct: usize,
    #[arg(long, value_enum, default_value = "all")]
    functional: FunctionalArg,
    /// Also estimate the tail variance beyond this order.
    #[arg(long)]
    tail_order: Option<usize>,
    #[arg(long, default_value_t = 12)]
    tail_nodes: usize,
}

#[derive(Args, Debug)]
struct ConstantsArgs {
    #[arg(long = "d", default_value_t = 3)]
    dim: usize,
    /// ℓ^∞ reach of the printed Green's function table.
    #[arg(long, default_value_t = 3)]
    reach: i64,
    /// Radii of the lattice kernel sums.
    #[arg(long = "R", value_delimiter = ',', default_values_t = vec![8, 12, 16, 24])]
    radii: Vec<usize>,
}

#[derive(Args, Debug)]
struct HermiteArgs {
    #[arg(long, default_value_t = 2)]
    order: usize,
    #[arg(long = "d")]
    dim: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    cutoff: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    modes: Option<usize>,
    /// Grid-convergence table entries `N:cutoff`, comma separated.
    #[arg(long, value_delimiter = ',')]
    grids: Option<Vec<String>>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e.chain().any(|c| c.downcast_ref::<gfflab_core::Error>().is_some_and(|g| g.is_numerical()));
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ExperimentConfig> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    let sink = Sink { dir: cli.out.clone(), csv: cfg.output.csv.clone(), json: cfg.output.json.clone() };
    let workers = cfg.workers;
    with_workers(workers, move || dispatch(cli.command, cfg, &sink))
}

fn dispatch(command: Command, mut cfg: ExperimentConfig, sink: &Sink) -> anyhow::Result<()> {
    match command {
        Command::SampleField(a) => {
            a.common.apply(&mut cfg);
            sample_field(&cfg, a.index, sink)
        }
        Command::ClusterCount(a) => {
            a.common.apply(&mut cfg);
            cluster_count(&cfg, a.truncate, sink)
        }
        Command::Density(a) => {
            a.common.apply(&mut cfg);
            if let Some(h) = a.fd_step {
                cfg.density.fd_step = h;
            }
            let curve = run_density_curve(&cfg)?;
            let slopes = if a.slope { run_density_slope(&cfg)? } else { Vec::new() };
            #[derive(Serialize)]
            struct Out<'a> {
                curve: &'a DensityCurve,
                slopes: &'a [DensitySlope],
            }
            let out = Out { curve: &curve, slopes: &slopes };
            sink.emit("density", Some(&csv_string(&curve.rows)?), &report("density", &cfg, &out))
        }
        Command::VarianceScaling(c) => {
            c.apply(&mut cfg);
            let v = run_variance_scaling(&cfg)?;
            sink.emit("variance-scaling", Some(&csv_string(&v.rows)?), &report("variance-scaling", &cfg, &v))
        }
        Command::DistributionTest(c) => {
            c.apply(&mut cfg);
            let res = run_distribution_test(&cfg)?;
            let rows: Vec<DistRow> = res.iter().map(DistRow::from).collect();
            sink.emit("distribution-test", Some(&csv_string(&rows)?), &report("distribution-test", &cfg, &res))
        }
        Command::ArmDecay(a) => arm_decay(a, cfg, sink),
        Command::PivotalIntensity(a) => pivotal(a, &cfg, sink),
        Command::ChaosDecompose(a) => chaos(a, &cfg, sink),
        Command::Constants(a) => constants(a, sink),
        Command::Hermite2Sample(a) => hermite(a, &cfg, sink),
    }
}

fn report<'a, T: Serialize>(name: &'a str, cfg: &'a ExperimentConfig, result: &'a T) -> Report<'a, T> {
    Report { experiment: name, config: cfg, result }
}

/// Where outputs go: `--out DIR`, else the configured paths, else stdout.
struct Sink {
    dir: Option<PathBuf>,
    csv: Option<PathBuf>,
    json: Option<PathBuf>,
}

impl Sink {
    fn emit<T: Serialize>(&self, name: &str, csv: Option<&str>, json: &T) -> anyhow::Result<()> {
        let (csv_path, json_path) = match &self.dir {
            Some(d) => {
                fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
                (Some(d.join(format!("{name}.csv"))), Some(d.join(format!("{name}.json"))))
            }
            None => (self.csv.clone(), self.json.clone()),
        };
        if let Some(text) = csv {
            match &csv_path {
                Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
        }
        match &json_path {
            Some(p) => write_json(p, json).with_context(|| format!("writing {}", p.display()))?,
            None if csv.is_none() || csv_path.is_some() => println!("{}", serde_json::to_string_pretty(json)?),
            None => {}
        }
        Ok(())
    }
}

const SAMPLE_TAG: u32 = 0xC1;
const COUNT_TAG: u32 = 0xC2;
const DIRECT_TAG: u32 = 0xC3;

fn sample_field(cfg: &ExperimentConfig, index: u64, sink: &Sink) -> anyhow::Result<()> {
    cfg.validate()?;
    let src = WindowSource::new(cfg.dim, cfg.radii[0], cfg.sampler, cfg.margin, cfg.compensate_zero_mode)?;
    let f = src.sample(&mut stream(cfg.seed, SAMPLE_TAG, index))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (1..=cfg.dim).map(|i| format!("x{i}")).collect();
    header.push("value".into());
    w.write_record(&header)?;
    for (i, v) in f.iter().enumerate() {
        let mut rec: Vec<String> = src.window().coords(i).iter().map(|c| c.to_string()).collect();
        rec.push(v.to_string());
        w.write_record(&rec)?;
    }
    let text = String::from_utf8(w.into_inner()?)?;
    let level = cfg.levels[0];
    #[derive(Serialize)]
    struct Out {
        sites: usize,
        index: u64,
        level: f64,
        above_level: f64,
        sampler: String,
        window: String,
    }
    let out = Out {
        sites: f.len(),
        index,
        level,
        above_level: f.iter().filter(|&&v| v >= level).count() as f64 / f.len() as f64,
        sampler: src.describe().to_string(),
        window: src.window_label(),
    };
    sink.emit("sample-field", Some(&text), &report("sample-field", cfg, &out))
}

#[derive(Serialize)]
struct CountRow {
    replicate: usize,
    level: f64,
    #[serde(rename = "N_plus")]
    plus: usize,
    #[serde(rename = "N_minus")]
    minus: usize,
    #[serde(rename = "N")]
    total: usize,
    #[serde(rename = "N_le_r", skip_serializing_if = "Option::is_none")]
    truncated: Option<usize>,
    seed: u64,
    sampler: String,
    window: String,
}

fn cluster_count(cfg: &ExperimentConfig, truncate: Option<i64>, sink: &Sink) -> anyhow::Result<()> {
    cfg.validate()?;
    if truncate.is_some_and(|r| r < 0) {
        bail!("--truncate must be non-negative");
    }
    let src = WindowSource::new(cfg.dim, cfg.radii[0], cfg.sampler, cfg.margin, cfg.compensate_zero_mode)?;
    let per_rep: Vec<gfflab_core::Result<Vec<(usize, usize, Option<usize>)>>> =
        par_replicates(cfg.replicates, cfg.seed, COUNT_TAG, |_, rng| {
            let f = src.sample(rng)?;
            Ok(cfg
                .levels
                .iter()
                .map(|&l| {
                    let lab = label(src.domain(), &excursion(&f, l));
                    let c = count_clusters(&lab, None);
                    (c.plus, c.minus, truncate.map(|r| count_clusters(&lab, Some(r)).total()))
                })
                .collect())
        });
    let mut rows = Vec::new();
    for (i, rep) in per_rep.into_iter().enumerate() {
        for (&level, (plus, minus, truncated)) in cfg.levels.iter().zip(rep?) {
            rows.push(CountRow {
                replicate: i,
                level,
                plus,
                minus,
                total: plus + minus,
                truncated,
                seed: cfg.seed,
                sampler: src.describe().to_string(),
                window: src.window_label(),
            });
        }
    }
    let summaries: Vec<(f64, StatSummary)> = cfg
        .levels
        .iter()
        .map(|&l| {
            let xs: Vec<f64> = rows.iter().filter(|r| r.level == l).map(|r| r.total as f64).collect();
            Ok((l, summarize(&xs, cfg.batches)?))
        })
        .collect::<gfflab_core::Result<_>>()?;
    sink.emit("cluster-count", Some(&csv_string(&rows)?), &report("cluster-count", cfg, &summaries))
}

#[derive(Serialize)]
struct DistRow {
    level: f64,
    radius: usize,
    n: usize,
    skewness: f64,
    skewness_se: f64,
    excess_kurtosis: f64,
    excess_kurtosis_se: f64,
    ks_normal_statistic: f64,
    ks_normal_p: f64,
    ks_hermite_statistic: Option<f64>,
    ks_hermite_p: Option<f64>,
    verdict: Verdict,
    seed: u64,
    sampler: String,
    window: String,
}

impl From<&DistributionResult> for DistRow {
    fn from(r: &DistributionResult) -> Self {
        let s = &r.summary;
        Self {
            level: r.level,
            radius: r.radius,
            n: s.n,
            skewness: s.skewness,
            skewness_se: s.skewness_se,
            excess_kurtosis: s.excess_kurtosis,
            excess_kurtosis_se: s.excess_kurtosis_se,
            ks_normal_statistic: s.ks_normal.statistic,
            ks_normal_p: s.ks_normal.p_value,
            ks_hermite_statistic: s.ks_reference.as_ref().map(|k| k.statistic),
            ks_hermite_p: s.ks_reference.as_ref().map(|k| k.p_value),
            verdict: r.verdict,
            seed: r.seed,
            sampler: r.sampler.clone(),
            window: r.window.clone(),
        }
    }
}

fn arm_decay(a: ArmArgs, mut cfg: ExperimentConfig, sink: &Sink) -> anyhow::Result<()> {
    a.common.apply(&mut cfg);
    if let Some(r) = a.arm_radii {
        cfg.arm.radii = r;
    }
    if let Some(w) = a.window {
        cfg.arm.window = w;
    }
    if let Some(l) = a.torus_side {
        cfg.arm.torus_side = l;
    }
    let decay = run_arm_decay(&cfg)?;
    let check = if a.depinning > 0 { Some(depinning_check(a.calibration, a.depinning, a.slack, cfg.seed)?) } else { None };
    #[derive(Serialize)]
    struct Out<'a> {
        decay: &'a ArmDecay,
        depinning: Option<&'a DepinningCheck>,
        depinning_holds: Option<bool>,
    }
    let out = Out { decay: &decay, depinning: check.as_ref(), depinning_holds: check.as_ref().map(|c| c.holds()) };
    sink.emit("arm-decay", Some(&csv_string(&decay.rows)?), &report("arm-decay", &cfg, &out))
}

fn parse_sites(text: &str, dim: usize) -> anyhow::Result<Vec<Site>> {
    text.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            let x: Vec<i64> = s
                .split(',')
                .map(|c| c.trim().parse::<i64>().with_context(|| format!("bad coordinate in {s:?}")))
                .collect::<anyhow::Result<_>>()?;
            if x.len() != dim {
                bail!("site {s:?} does not have {dim} coordinates");
            }
            Ok(x)
        })
        .collect()
}

fn pivotal(a: PivotalArgs, cfg: &ExperimentConfig, sink: &Sink) -> anyhow::Result<()> {
    let points = match &a.points {
        Some(p) => parse_sites(p, a.dim)?,
        None => vec![vec![0; a.dim]],
    };
    let mut sc = StationaryConfig::bulk(a.dim, a.window, a.level, a.samples, cfg.seed);
    sc.margin = a.margin;
    sc.windows_per_sample = a.windows_per_sample;
    sc.sensitivity_radius = a.sensitivity;
    let est: PivotalEstimate = match a.target {
        TargetArg::Stationary => stationary_pivotal_intensity(&sc, &CountFunctional, &points)?,
        TargetArg::HalfSpace => halfspace_pivotal_intensity(&sc, a.k)?,
        TargetArg::Truncated => truncated_pivotal_intensity(&sc, a.r, &points)?,
        TargetArg::FiniteBox => {
            let model = CovarianceModel::gff(a.dim)?;
            let ed = ExactDomain::from_box(&model, &LatticeBox::new(a.dim, a.window)?)?;
            let idx: Vec<usize> = points.iter().map(|p| ed.site_index(p)).collect::<gfflab_core::Result<_>>()?;
            let e = pivotal_intensity(&ed, &CountFunctional, &vec![a.level; ed.len()], &idx, a.samples, cfg.seed)?;
            PivotalEstimate::finite_box(points, a.level, e)
        }
    };
    sink.emit("pivotal-intensity", None, &est)
}

#[derive(Serialize)]
struct ComponentRow {
    order: usize,
    variance: f64,
    stderr: f64,
    cumulative: f64,
    fraction: f64,
}

#[derive(Serialize)]
struct ChaosOut {
    target: &'static str,
    points: Vec<Site>,
    level: f64,
    /// Sum of the component variances up to the largest order.
    estimate: f64,
    stderr: f64,
    budget: usize,
    window: String,
    sampler: &'static str,
    functional: FunctionalArg,
    direct_variance: f64,
    direct_stderr: f64,
    components: Vec<ComponentRow>,
    tail: Option<(usize, Estimate)>,
}

fn chaos(a: ChaosArgs, cfg: &ExperimentConfig, sink: &Sink) -> anyhow::Result<()> {
    let sites = match &a.sites {
        Some(s) => parse_sites(s, a.dim)?,
        None => {
            let mut s = vec![vec![0i64; a.dim]; 4];
            s[1][0] = 1;
            s[2][1] = 1;
            s[3][0] = 1;
            s[3][1] = 1;
            s
        }
    };
    if a.max_order == 0 {
        bail!("--max-order must be at least 1");
    }
    let model = CovarianceModel::gff(a.dim)?;
    let ed = ExactDomain::new(&model, &sites)?;
    let functional: &dyn LevelSetFunctional = match a.functional {
        FunctionalArg::All => &AllComponentsFunctional,
        FunctionalArg::Count => &CountFunctional,
    };
    let sampler = ExactSampler::new(&model, &sites)?;
    let values: Vec<f64> = par_replicates(a.direct, cfg.seed, DIRECT_TAG, |_, rng| {
        let f = sampler.sample(rng);
        functional.eval(&ed.domain, &excursion(&f, a.level))
    });
    let direct = summarize(&values, cfg.batches.min(a.direct.max(2)))?;
    let mut components = Vec::new();
    let (mut total, mut var) = (0.0, 0.0);
    for m in 1..=a.max_order {
        let spec = intensity_table(&ed, functional, a.level, m, None, a.samples, cfg.seed.wrapping_add(1000 * m as u64))?;
        let v = chaos_component_variance(&spec, &ed.cov);
        let se = chaos_component_variance_stderr(&spec, &ed.cov);
        total += v;
        var += se * se;
        components.push(ComponentRow { order: m, variance: v, stderr: se, cumulative: total, fraction: total / direct.variance });
    }
    let tail = match a.tail_order {
        Some(m) => Some((m, tail_variance(&ed, functional, a.level, m + 1, a.tail_nodes, a.samples, cfg.seed ^ 0x7a11)?)),
        None => None,
    };
    let out = ChaosOut {
        target: "chaos-decompose",
        points: sites,
        level: a.level,
        estimate: total,
        stderr: var.sqrt(),
        budget: a.samples,
        window: format!("{} sites", ed.len()),
        sampler: "exact-conditional",
        functional: a.functional,
        direct_variance: direct.variance,
        direct_stderr: direct.variance_se,
        components,
        tail,
    };
    sink.emit("chaos-decompose", Some(&csv_string(&out.components)?), &out)
}

#[derive(Serialize)]
struct KernelRow {
    name: String,
    d: usize,
    k_or_alpha: f64,
    #[serde(rename = "R_or_grid")]
    r_or_grid: String,
    raw: Option<f64>,
    normalized: Option<f64>,
    extrapolated: f64,
    residual: Option<f64>,
}

fn constants(a: ConstantsArgs, sink: &Sink) -> anyhow::Result<()> {
    let d = a.dim;
    if a.reach < 0 {
        bail!("--reach must be non-negative");
    }
    let g = Green::new(d, a.reach as usize)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["d".to_string()];
    header.extend((1..=d).map(|i| format!("x{i}")));
    header.push("G".into());
    w.write_record(&header)?;
    // One representative per symmetry class: 0 ≤ x_d ≤ … ≤ x_1 ≤ reach.
    for x in LatticeBox::from_bounds(vec![0; d], vec![a.reach; d])?.sites() {
        if x.windows(2).all(|p| p[0] >= p[1]) {
            let mut rec = vec![d.to_string()];
            rec.extend(x.iter().map(|c| c.to_string()));
            rec.push(g.at(&x).to_string());
            w.write_record(&rec)?;
        }
    }
    let green_csv = String::from_utf8(w.into_inner()?)?;

    let label = a.radii.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(";");
    let fit_hi = (4 * a.reach as usize).max(16);
    let fit = fit_asymptotic_constant(d, fit_hi / 2, fit_hi)?;
    let mut rows = vec![
        KernelRow {
            name: "c_d".into(),
            d,
            k_or_alpha: 0.0,
            r_or_grid: String::new(),
            raw: None,
            normalized: None,
            extrapolated: asymptotic_constant(d)?,
            residual: None,
        },
        KernelRow {
            name: "c_d_fit".into(),
            d,
            k_or_alpha: 0.0,
            r_or_grid: format!("{}..{}", fit_hi / 2, fit_hi),
            raw: None,
            normalized: None,
            extrapolated: fit.fitted,
            residual: Some(fit.residual),
        },
    ];
    let mut k = 1u32;
    while (k as usize) * (d - 2) <= d {
        let alpha = (k as usize * (d - 2)) as f64;
        if alpha < d as f64 {
            rows.push(KernelRow {
                name: "E".into(),
                d,
                k_or_alpha: alpha,
                r_or_grid: String::new(),
                raw: None,
                normalized: None,
                extrapolated: e_constant(d, alpha)?,
                residual: None,
            });
        }
        let b = beta_constant(d, k, &a.radii, None)?;
        rows.push(KernelRow {
            name: "beta".into(),
            d,
            k_or_alpha: k as f64,
            r_or_grid: label.clone(),
            raw: b.raw.last().copied(),
            normalized: b.normalized.last().copied(),
            extrapolated: b.extrapolated,
            residual: Some(b.residual),
        });
        if let Some(c) = beta_continuum(d, k)? {
            rows.push(KernelRow {
                name: "beta_continuum".into(),
                d,
                k_or_alpha: k as f64,
                r_or_grid: String::new(),
                raw: None,
                normalized: None,
                extrapolated: c,
                residual: None,
            });
        }
        k += 1;
    }
    let kernel_csv = csv_string(&rows)?;
    #[derive(Serialize)]
    struct Out<'a> {
        dim: usize,
        reach: i64,
        green_zero: f64,
        kernels: &'a [KernelRow],
    }
    let out = Out { dim: d, reach: a.reach, green_zero: g.at(&vec![0; d]), kernels: &rows };
    match &sink.dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("constants-green.csv"), &green_csv)?;
            sink.emit("constants", Some(&kernel_csv), &out)
        }
        None => {
            println!("{green_csv}");
            sink.emit("constants", Some(&kernel_csv), &out)
        }
    }
}

const HERMITE_TAG: u32 = 0xC4;

fn hermite(a: HermiteArgs, cfg: &ExperimentConfig, sink: &Sink) -> anyhow::Result<()> {
    let h = &cfg.hermite;
    let dim = a.dim.unwrap_or(h.dim);
    let alpha = a.alpha.unwrap_or(h.alpha);
    let grid = a.grid.unwrap_or(h.grid);
    let cutoff = a.cutoff.unwrap_or(h.cutoff);
    let n = a.n.unwrap_or(h.samples);
    if n < 2 {
        bail!("--n must be at least 2");
    }
    let reference = HermiteReference::new(a.order, dim, alpha, grid, cutoff, a.modes.unwrap_or(h.modes))?;
    let xs = reference.samples(n, cfg.seed, HERMITE_TAG);
    let grids: Vec<(usize, f64)> = a
        .grids
        .unwrap_or_default()
        .iter()
        .map(|g| {
            let (n, c) = g.split_once(':').with_context(|| format!("grid entry {g:?} is not N:cutoff"))?;
            Ok((n.trim().parse()?, c.trim().parse()?))
        })
        .collect::<anyhow::Result<_>>()?;
    let table = grid_convergence(a.order, dim, alpha, &grids)?;
    let summary = summarize(&xs, cfg.batches.min(n))?;
    #[derive(Serialize)]
    struct Row {
        index: usize,
        value: f64,
    }
    let rows: Vec<Row> = xs.iter().enumerate().map(|(index, &value)| Row { index, value }).collect();
    #[derive(Serialize)]
    struct Out<'a> {
        reference: &'a HermiteReference,
        summary: &'a StatSummary,
        grid_convergence: &'a [hermite2::GridRow],
        seed: u64,
    }
    let out = Out { reference: &reference, summary: &summary, grid_convergence: &table, seed: cfg.seed };
    sink.emit("hermite2-sample", Some(&csv_string(&rows)?), &report("hermite2-sample", cfg, &out))
}
