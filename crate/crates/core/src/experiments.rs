//! Seeded Monte Carlo harness.
//!
//! An [`ExperimentConfig`] fixes the law, the box radii, the number of trials
//! and a master seed. Trial `i` draws its environment from
//! `derive_seed(master, i)`; the seed does not depend on `n`, so the boxes of
//! one trial are nested windows of a single environment. Results are merged in
//! trial order, which makes every output file a pure function of the config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::eigen::{self, SolverOptions};
use crate::environment::{ConductanceLaw, Environment, RateParams, SpeedField};
use crate::error::{invalid, Error, Result};
use crate::lattice::BoxLattice;
use crate::operator::{ActiveSet, DirichletOperator};
use crate::percolation::PercolationPartition;
use crate::rng;
use crate::theory::{self, ChainOptions, DiagnosticRecord};

/// Largest number of eigenpairs tracked per trial.
pub const MAX_K: usize = 16;

/// Fraction of unconverged trials above which an experiment fails.
pub const MAX_UNCONVERGED_FRACTION: f64 = 0.02;

/// Number of points of the survival-curve grid.
pub const SURVIVAL_GRID: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Speed field only: order statistics and gaps, no eigensolve.
    PiOnly,
    /// Bottom eigenpairs of the box operator and the percolation partition.
    FullSpectral,
    /// Full deflation chain with the diagnostic ledger.
    Diagnostics,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pi-only" => Ok(Self::PiOnly),
            "full-spectral" => Ok(Self::FullSpectral),
            "diagnostics" => Ok(Self::Diagnostics),
            _ => Err(Error::Parse(format!("unknown mode {s:?}"))),
        }
    }
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::PiOnly => "pi-only",
            Self::FullSpectral => "full-spectral",
            Self::Diagnostics => "diagnostics",
        }
    }
}

/// Which rescaled order statistic the limit-law comparison uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Pi,
    Lambda,
}

impl Statistic {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Pi => "pi",
            Self::Lambda => "lambda",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub d: usize,
    pub n: Vec<usize>,
    pub law: ConductanceLaw,
    #[serde(rename = "K")]
    pub k: usize,
    pub trials: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub solver_seed: u64,
    pub out: String,
    pub mode: Mode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            d: 2,
            n: vec![20, 40, 60],
            law: ConductanceLaw::ParetoAtZero { gamma: 0.1, u0: 1.0 },
            k: 5,
            trials: 100,
            seed: 1,
            tol: 1e-8,
            max_iter: 1000,
            solver_seed: 0x5EED,
            out: "out".into(),
            mode: Mode::FullSpectral,
        }
    }
}

impl ExperimentConfig {
    /// Parses flat `key = value` lines on top of the defaults. `#` starts a
    /// comment. Recognized keys: `d`, `n` (comma list), `law` (`pareto` or
    /// `logsingular`), `gamma`, `u0`, `beta`, `eps1`, `K`, `trials`, `seed`,
    /// `tol`, `max_iter`, `solver_seed`, `out`, `mode`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", no + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Self::from_pairs(&pairs)
    }

    /// Builds a config from `key = value` pairs applied in order.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut raw = RawLaw::from(&Self::default().law);
        let mut cfg = Self::default();
        for (k, v) in pairs {
            cfg.apply(&mut raw, k, v)?;
        }
        cfg.law = raw.build()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies overrides to an existing config.
    pub fn with_overrides(&self, pairs: &[(String, String)]) -> Result<Self> {
        let mut raw = RawLaw::from(&self.law);
        let mut cfg = self.clone();
        for (k, v) in pairs {
            cfg.apply(&mut raw, k, v)?;
        }
        cfg.law = raw.build()?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, raw: &mut RawLaw, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e| Error::Parse(format!("{key} = {v}: {e}")))
        }
        match key {
            "d" => self.d = num(key, value)?,
            "n" => {
                self.n = value
                    .split(',')
                    .map(|s| num(key, s.trim()))
                    .collect::<Result<Vec<usize>>>()?
            }
            "law" => raw.kind = value.to_string(),
            "gamma" => raw.gamma = num(key, value)?,
            "u0" => raw.u0 = num(key, value)?,
            "beta" => raw.beta = num(key, value)?,
            "eps1" => raw.eps1 = num(key, value)?,
            "K" | "k" => self.k = num(key, value)?,
            "trials" => self.trials = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "tol" => self.tol = num(key, value)?,
            "max_iter" => self.max_iter = num(key, value)?,
            "solver_seed" => self.solver_seed = num(key, value)?,
            "out" => self.out = value.to_string(),
            "mode" => self.mode = value.parse()?,
            _ => return Err(Error::Parse(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 || self.d > crate::lattice::MAX_DIM {
            return Err(invalid(format!("d must lie in [2, {}]", crate::lattice::MAX_DIM)));
        }
        if self.n.is_empty() || self.n.iter().any(|&n| n < 1) {
            return Err(invalid("n must be a nonempty list of positive radii"));
        }
        if self.k < 1 || self.k > MAX_K {
            return Err(invalid(format!("K must lie in [1, {MAX_K}]")));
        }
        if self.trials < 1 {
            return Err(invalid("trials must be positive"));
        }
        if !(self.tol > 0.0) || self.max_iter < 1 {
            return Err(invalid("solver tolerance and iteration cap must be positive"));
        }
        self.law.rate_params()?;
        Ok(())
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions { tol: self.tol, max_iter: self.max_iter, seed: self.solver_seed, ..Default::default() }
    }

    /// Seed of trial `index`.
    pub fn trial_seed(&self, index: u64) -> u64 {
        rng::derive_seed(self.seed, index)
    }

    /// Canonical `key = value` form; parsing it gives back the same config.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let ns: Vec<String> = self.n.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(s, "d = {}", self.d);
        let _ = writeln!(s, "n = {}", ns.join(","));
        match self.law {
            ConductanceLaw::ParetoAtZero { gamma, u0 } => {
                let _ = writeln!(s, "law = pareto\ngamma = {gamma:?}\nu0 = {u0:?}");
            }
            ConductanceLaw::LogSingular { beta, eps1 } => {
                let _ = writeln!(s, "law = logsingular\nbeta = {beta:?}\neps1 = {eps1:?}");
            }
        }
        let _ = writeln!(s, "K = {}", self.k);
        let _ = writeln!(s, "trials = {}", self.trials);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "tol = {:?}", self.tol);
        let _ = writeln!(s, "max_iter = {}", self.max_iter);
        let _ = writeln!(s, "solver_seed = {}", self.solver_seed);
        let _ = writeln!(s, "out = {}", self.out);
        let _ = writeln!(s, "mode = {}", self.mode.as_str());
        s
    }
}

/// Law parameters collected before the law is validated as a whole.
struct RawLaw {
    kind: String,
    gamma: f64,
    u0: f64,
    beta: f64,
    eps1: f64,
}

impl RawLaw {
    fn from(law: &ConductanceLaw) -> Self {
        match *law {
            ConductanceLaw::ParetoAtZero { gamma, u0 } => {
                Self { kind: "pareto".into(), gamma, u0, beta: 1.0, eps1: 0.5 }
            }
            ConductanceLaw::LogSingular { beta, eps1 } => {
                Self { kind: "logsingular".into(), gamma: 0.1, u0: 1.0, beta, eps1 }
            }
        }
    }

    fn build(&self) -> Result<ConductanceLaw> {
        match self.kind.as_str() {
            "pareto" => ConductanceLaw::pareto(self.gamma, self.u0),
            "logsingular" => ConductanceLaw::log_singular(self.beta, self.eps1),
            other => Err(Error::UnsupportedLaw(other.to_string())),
        }
    }
}

/// Per-`k` measurements of one trial.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KRow {
    pub k: usize,
    /// `pi_{k,B_n}`.
    pub pi: f64,
    /// `1 - pi_k / pi_{k+1}`.
    pub gap: f64,
    pub lambda: Option<f64>,
    /// `lambda_k / pi_k`.
    pub ratio: Option<f64>,
    /// `psi_k(z_k)^2`.
    pub mass: Option<f64>,
    /// Mass of the localized vector on the giant cluster.
    pub mass_on_giant: Option<f64>,
    /// `z_1, ..., z_{k+1}` all holes.
    pub minima_in_holes: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialReport {
    pub trial: u64,
    pub seed: u64,
    pub n: usize,
    pub converged: bool,
    pub iterations: usize,
    pub holes: Option<usize>,
    /// Holes pairwise at ℓ∞ distance above 2.
    pub one_sparse: Option<bool>,
    pub exact_failures: usize,
    pub rows: Vec<KRow>,
}

/// Report plus the diagnostic records of one trial.
#[derive(Clone, Debug)]
pub struct TrialOutcome {
    pub report: TrialReport,
    pub records: Vec<DiagnosticRecord>,
}

/// Runs trial `index` at radius `n`.
pub fn run_trial(config: &ExperimentConfig, n: usize, index: u64) -> Result<TrialOutcome> {
    let seed = config.trial_seed(index);
    let radius = if config.mode == Mode::PiOnly { n } else { 2 * n };
    let region = Environment::sample(Arc::new(BoxLattice::new(config.d, radius)?), config.law, seed);
    analyze_environment(config, &region, n, index)
}

/// Analyzes one environment. `region` covers `B_n` (then the percolation
/// partition uses `B_n` itself) or a larger concentric box such as `B_{2n}`.
pub fn analyze_environment(
    config: &ExperimentConfig,
    region: &Environment,
    n: usize,
    index: u64,
) -> Result<TrialOutcome> {
    let env = if region.lattice().radius() == n { region.clone() } else { region.restrict(n)? };
    let k_max = config.k;
    let sites = env.lattice().site_count();
    if k_max + 2 > sites {
        return Err(invalid(format!("box of {sites} sites too small for K = {k_max}")));
    }
    let field = SpeedField::new(&env, k_max + 1)?;
    let mut rows: Vec<KRow> = (1..=k_max)
        .map(|k| KRow {
            k,
            pi: field.pi_k(k),
            gap: 1.0 - field.pi_k(k) / field.pi_k(k + 1),
            lambda: None,
            ratio: None,
            mass: None,
            mass_on_giant: None,
            minima_in_holes: None,
        })
        .collect();
    let mut report = TrialReport {
        trial: index,
        seed: region.seed(),
        n,
        converged: true,
        iterations: 0,
        holes: None,
        one_sparse: None,
        exact_failures: 0,
        rows: Vec::new(),
    };
    if config.mode == Mode::PiOnly {
        report.rows = rows;
        return Ok(TrialOutcome { report, records: Vec::new() });
    }

    let rate: RateParams = config.law.rate_params()?;
    let partition = if n >= 2 {
        match PercolationPartition::compute(region, n, &rate) {
            Ok(p) => Some(p),
            Err(Error::Degenerate(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    if let Some(p) = &partition {
        report.holes = Some(p.holes().len());
        report.one_sparse = Some(p.holes_sparse(1).is_none());
        for row in rows.iter_mut() {
            row.minima_in_holes = Some(p.minima_in_holes(&field, row.k)?);
        }
    }

    let mut records = Vec::new();
    match config.mode {
        Mode::FullSpectral => {
            let op = DirichletOperator::assemble(&env, &ActiveSet::full(env.lattice()))?;
            let solve = eigen::solve_bottom_k(&op, k_max, &config.solver())?;
            for k in 1..=k_max {
                records.extend(theory::mu_upper_bound(&op, &field, &solve.eigenvalues, 1, k, n)?);
            }
            report.converged = solve.all_converged();
            report.iterations = solve.iterations;
            for (i, row) in rows.iter_mut().enumerate() {
                let v = &solve.eigenvectors[i];
                let lambda = solve.eigenvalues[i];
                row.lambda = Some(lambda);
                row.ratio = Some(lambda / row.pi);
                row.mass = Some(v[field.minimizer(row.k)].powi(2));
                if let Some(p) = &partition {
                    row.mass_on_giant = Some(p.mass_on_giant(v)?);
                }
            }
        }
        Mode::Diagnostics => {
            let opts = ChainOptions { solver: config.solver(), dense_reference: false };
            let chain = theory::inductive_chain(&env, &field, partition.as_ref(), &rate, k_max, &opts)?;
            report.converged = chain.converged;
            report.iterations = chain.iterations;
            for (i, row) in rows.iter_mut().enumerate() {
                row.lambda = Some(chain.eigenvalues[i]);
                row.ratio = Some(chain.eigenvalues[i] / row.pi);
                row.mass = Some(chain.localization[i]);
                row.mass_on_giant = chain.mass_on_giant[i];
            }
            records = chain.records;
        }
        Mode::PiOnly => unreachable!(),
    }
    report.exact_failures = records.iter().filter(|r| r.is_exact_failure()).count();
    report.rows = rows;
    Ok(TrialOutcome { report, records })
}

/// `G_k(zeta) = exp(-zeta^{2d gamma}) sum_{j<k} zeta^{2d gamma j} / j!`:
/// probability that fewer than `k` points of a Poisson process with mean
/// `zeta^{2d gamma}` fall below the level, i.e. the limiting survival function
/// of the rescaled `k`-th order statistic.
pub fn survival_g(k: usize, zeta: f64, d: usize, gamma: f64) -> f64 {
    if zeta <= 0.0 {
        return 1.0;
    }
    let x = zeta.powf(2.0 * d as f64 * gamma);
    let mut term = 1.0;
    let mut sum = 0.0;
    for j in 0..k {
        if j > 0 {
            term *= x / j as f64;
        }
        sum += term;
    }
    (-x).exp() * sum
}

/// Empirical survival function `#{s > zeta} / N`.
pub fn empirical_survival(samples: &[f64], zeta: f64) -> f64 {
    samples.iter().filter(|&&s| s > zeta).count() as f64 / samples.len() as f64
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile(samples: &[f64], p: f64) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let h = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

#[derive(Clone, Debug, Serialize)]
pub struct SurvivalCurve {
    pub n: usize,
    pub k: usize,
    pub statistic: Statistic,
    pub zeta: Vec<f64>,
    pub empirical: Vec<f64>,
    pub theoretical: Vec<f64>,
    pub sup_distance: f64,
}

/// Uniform grid of [`SURVIVAL_GRID`] points on `[0, q_{0.999}]` of the samples.
pub fn survival_grid(samples: &[f64]) -> Vec<f64> {
    let top = quantile(samples, 0.999);
    (0..SURVIVAL_GRID).map(|i| top * i as f64 / (SURVIVAL_GRID - 1) as f64).collect()
}

/// Compares rescaled samples `statistic / a_n` with `G_k`.
pub fn limit_law_test(
    rescaled: &[f64],
    n: usize,
    k: usize,
    statistic: Statistic,
    d: usize,
    gamma: f64,
) -> Result<SurvivalCurve> {
    if rescaled.is_empty() {
        return Err(invalid("limit law needs at least one trial"));
    }
    let zeta = survival_grid(rescaled);
    let empirical: Vec<f64> = zeta.iter().map(|&z| empirical_survival(rescaled, z)).collect();
    let theoretical: Vec<f64> = zeta.iter().map(|&z| survival_g(k, z, d, gamma)).collect();
    let sup_distance = empirical
        .iter()
        .zip(&theoretical)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(SurvivalCurve { n, k, statistic, zeta, empirical, theoretical, sup_distance })
}

/// Largest gap between two empirical survival functions on the grid of `a`.
pub fn paired_sup_distance(a: &[f64], b: &[f64]) -> f64 {
    survival_grid(a)
        .iter()
        .map(|&z| (empirical_survival(a, z) - empirical_survival(b, z)).abs())
        .fold(0.0, f64::max)
}

/// Median and 5th percentile of one metric at one `(n, k)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrendRow {
    pub n: usize,
    pub k: usize,
    pub metric: &'static str,
    pub median: f64,
    pub p5: f64,
    pub count: usize,
}

/// Per-`(n, k)` medians and 5th percentiles of `mass`, `ratio`, `gap` and
/// `mass_on_giant` over converged trials.
pub fn sweep_summary(reports: &[TrialReport]) -> Vec<TrendRow> {
    type Getter = fn(&KRow) -> Option<f64>;
    let metrics: [(&'static str, Getter); 4] = [
        ("mass", |r| r.mass),
        ("ratio", |r| r.ratio),
        ("gap", |r| Some(r.gap)),
        ("mass_on_giant", |r| r.mass_on_giant),
    ];
    let mut groups: BTreeMap<(usize, usize), Vec<&KRow>> = BTreeMap::new();
    for rep in reports.iter().filter(|r| r.converged) {
        for row in &rep.rows {
            groups.entry((rep.n, row.k)).or_default().push(row);
        }
    }
    let mut out = Vec::new();
    for ((n, k), rows) in groups {
        for (name, get) in metrics {
            let vals: Vec<f64> = rows.iter().filter_map(|r| get(r)).collect();
            if vals.is_empty() {
                continue;
            }
            out.push(TrendRow {
                n,
                k,
                metric: name,
                median: quantile(&vals, 0.5),
                p5: quantile(&vals, 0.05),
                count: vals.len(),
            });
        }
    }
    out
}

/// Everything an experiment produces.
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub reports: Vec<TrialReport>,
    /// `(trial, record)` pairs in trial order.
    pub ledger: Vec<(u64, DiagnosticRecord)>,
    pub survival: Vec<SurvivalCurve>,
    pub trends: Vec<TrendRow>,
}

impl ExperimentOutput {
    pub fn unconverged(&self) -> usize {
        self.reports.iter().filter(|r| !r.converged).count()
    }

    pub fn exact_failures(&self) -> usize {
        self.ledger.iter().filter(|(_, r)| r.is_exact_failure()).count()
    }

    /// Fails if too many trials did not converge or any exact check failed.
    pub fn check(&self) -> Result<()> {
        let cap = MAX_UNCONVERGED_FRACTION * self.reports.len() as f64;
        if self.unconverged() as f64 > cap {
            return Err(Error::Degenerate(format!(
                "{} of {} trials did not converge (cap {:.0}%)",
                self.unconverged(),
                self.reports.len(),
                100.0 * MAX_UNCONVERGED_FRACTION
            )));
        }
        if self.exact_failures() > 0 {
            return Err(Error::Degenerate(format!("{} exact diagnostics failed", self.exact_failures())));
        }
        Ok(())
    }

    /// Writes `manifest.json`, `trials.csv`, `summary.csv`, `survival.csv`
    /// and, if there are records, `ledger.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let manifest = Manifest::new(&self.config);
        let mut f = std::fs::File::create(dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(&mut f, &manifest)?;
        writeln!(f)?;
        write_trials(std::fs::File::create(dir.join("trials.csv"))?, &self.reports)?;
        write_summary(std::fs::File::create(dir.join("summary.csv"))?, &self.trends)?;
        write_survival(std::fs::File::create(dir.join("survival.csv"))?, &self.survival)?;
        if !self.ledger.is_empty() {
            write_ledger(std::fs::File::create(dir.join("ledger.csv"))?, &self.ledger)?;
        }
        Ok(())
    }
}

/// Config echo, trial seeds and code version. No timestamps, so that equal
/// configs give byte-identical manifests.
#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub version: &'static str,
    pub config: ExperimentConfig,
    pub config_text: String,
    pub rate: Option<RateParams>,
    pub trial_seeds: Vec<u64>,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION"),
            config: config.clone(),
            config_text: config.to_key_value(),
            rate: config.law.rate_params().ok(),
            trial_seeds: (0..config.trials as u64).map(|i| config.trial_seed(i)).collect(),
        }
    }
}

fn run_all(config: &ExperimentConfig) -> Result<Vec<TrialOutcome>> {
    let jobs: Vec<(usize, u64)> = config
        .n
        .iter()
        .flat_map(|&n| (0..config.trials as u64).map(move |i| (n, i)))
        .collect();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        jobs.par_iter().map(|&(n, i)| run_trial(config, n, i)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        jobs.iter().map(|&(n, i)| run_trial(config, n, i)).collect()
    }
}

/// Runs every `(n, trial)` pair and assembles survival curves (Pareto laws)
/// and trend tables.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let outcomes = run_all(config)?;
    let mut reports = Vec::with_capacity(outcomes.len());
    let mut ledger = Vec::new();
    for o in outcomes {
        ledger.extend(o.records.into_iter().map(|r| (o.report.trial, r)));
        reports.push(o.report);
    }
    let survival = survival_curves(config, &reports)?;
    let trends = sweep_summary(&reports);
    Ok(ExperimentOutput { config: config.clone(), reports, ledger, survival, trends })
}

/// Survival curves of `pi_k / a_n` (and `lambda_k / a_n` when eigenvalues
/// were computed) for every `n` and `k`; empty for laws without a rescaling.
pub fn survival_curves(config: &ExperimentConfig, reports: &[TrialReport]) -> Result<Vec<SurvivalCurve>> {
    let ConductanceLaw::ParetoAtZero { gamma, .. } = config.law else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for &n in &config.n {
        let lattice = BoxLattice::new(config.d, n)?;
        let a_n = config.law.rescaling_for(&lattice)?;
        let group: Vec<&TrialReport> = reports.iter().filter(|r| r.n == n && r.converged).collect();
        if group.is_empty() {
            continue;
        }
        for k in 1..=config.k {
            let pis: Vec<f64> = group.iter().map(|r| r.rows[k - 1].pi / a_n).collect();
            out.push(limit_law_test(&pis, n, k, Statistic::Pi, config.d, gamma)?);
            let lambdas: Vec<f64> = group.iter().filter_map(|r| r.rows[k - 1].lambda).map(|l| l / a_n).collect();
            if lambdas.len() == group.len() {
                out.push(limit_law_test(&lambdas, n, k, Statistic::Lambda, config.d, gamma)?);
            }
        }
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn opt_bool(v: Option<bool>) -> String {
    v.map(|b| u8::from(b).to_string()).unwrap_or_default()
}

/// One row per `(trial, n, k)`.
pub fn write_trials<W: Write>(out: W, reports: &[TrialReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "trial", "n", "seed", "k", "pi", "gap", "lambda", "ratio", "mass", "mass_on_giant",
        "minima_in_holes", "holes", "one_sparse", "converged", "iterations", "exact_failures",
    ])?;
    for r in reports {
        for row in &r.rows {
            w.write_record([
                r.trial.to_string(),
                r.n.to_string(),
                r.seed.to_string(),
                row.k.to_string(),
                format!("{:?}", row.pi),
                format!("{:?}", row.gap),
                opt(row.lambda),
                opt(row.ratio),
                opt(row.mass),
                opt(row.mass_on_giant),
                opt_bool(row.minima_in_holes),
                r.holes.map(|h| h.to_string()).unwrap_or_default(),
                opt_bool(r.one_sparse),
                u8::from(r.converged).to_string(),
                r.iterations.to_string(),
                r.exact_failures.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `trial,lemma,n,k,l,m,lhs,rhs,holds,margin` plus the record kind.
pub fn write_ledger<W: Write>(out: W, ledger: &[(u64, DiagnosticRecord)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["trial", "lemma", "n", "k", "l", "m", "lhs", "rhs", "holds", "margin", "kind"])?;
    for (trial, r) in ledger {
        let kind = match r.kind {
            theory::CheckKind::Exact => "exact",
            theory::CheckKind::Asymptotic => "asymptotic",
            theory::CheckKind::Skipped => "skipped",
        };
        w.write_record([
            trial.to_string(),
            r.name.clone(),
            r.context.n.to_string(),
            r.context.k.to_string(),
            r.context.l.to_string(),
            r.context.m.to_string(),
            format!("{:?}", r.lhs),
            format!("{:?}", r.rhs),
            u8::from(r.holds).to_string(),
            format!("{:?}", r.margin),
            kind.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `n,k,statistic,zeta,empirical,theoretical`.
pub fn write_survival<W: Write>(out: W, curves: &[SurvivalCurve]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "k", "statistic", "zeta", "empirical", "theoretical"])?;
    for c in curves {
        for i in 0..c.zeta.len() {
            w.write_record([
                c.n.to_string(),
                c.k.to_string(),
                c.statistic.as_str().to_string(),
                format!("{:?}", c.zeta[i]),
                format!("{:?}", c.empirical[i]),
                format!("{:?}", c.theoretical[i]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `n,k,metric,median,p5,count`.
pub fn write_summary<W: Write>(out: W, rows: &[TrendRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "k", "metric", "median", "p5", "count"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.k.to_string(),
            r.metric.to_string(),
            format!("{:?}", r.median),
            format!("{:?}", r.p5),
            r.count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
