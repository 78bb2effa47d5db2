//! `rcm`: sample environments, solve for eigenpairs, run diagnostics, sweeps
//! and limit-law comparisons.
//!
//! Every subcommand reads an optional `key = value` config file (`--config`)
//! and `--set key=value` overrides on top of it. The exit status is nonzero
//! when an exact diagnostic fails or too many trials do not converge.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rcm_core::eigen::{self, SolverOptions};
use rcm_core::environment::Environment;
use rcm_core::experiments::{self, ExperimentConfig, Mode, Statistic};
use rcm_core::lattice::BoxLattice;
use rcm_core::operator::{ActiveSet, DirichletOperator, SymmetricOperator};

#[derive(Parser)]
#[command(name = "rcm", version, about = "Heavy-tailed random conductance model: eigenvalues and localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set n=20,40 --set gamma=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let base = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                ExperimentConfig::parse(&text)?
            }
            None => ExperimentConfig::default(),
        };
        let pairs = self
            .overrides
            .iter()
            .map(|s| {
                s.split_once('=')
                    .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                    .with_context(|| format!("override {s:?} is not KEY=VALUE"))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(base.with_overrides(&pairs)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample the environment of one trial on B_R and write a text snapshot.
    Sample {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Box radius R; defaults to twice the first `n`.
        #[arg(long)]
        radius: Option<usize>,
        #[arg(long, default_value_t = 0)]
        trial: u64,
        /// Output file; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bottom eigenpairs of the Dirichlet operator on B_n.
    Solve {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Snapshot to read; otherwise trial `--trial` is sampled.
        #[arg(long)]
        env: Option<PathBuf>,
        /// Radius of the box to solve on; defaults to the first `n`.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        trial: u64,
        /// Also write the eigenvectors, one column per pair.
        #[arg(long)]
        vectors: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Diagnostic ledger of one environment.
    Diagnose {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Snapshot of B_n or a larger concentric box.
        #[arg(long)]
        env: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        trial: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Seeded Monte Carlo sweep over `n`; writes manifest, trials, summary,
    /// survival and (in diagnostics mode) ledger files to `out`.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compares the rescaled order statistics with the limiting survival
    /// functions and prints the sup-distance per `(n, k)`.
    LimitLaw {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `pi` (speed order statistics only) or `lambda` (eigenvalues).
        #[arg(long, default_value = "pi")]
        statistic: String,
    },
}

fn writer(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_env(path: &Path) -> Result<Environment> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Environment::read_snapshot(BufReader::new(f))?)
}

fn first_n(cfg: &ExperimentConfig, n: Option<usize>) -> usize {
    n.unwrap_or(cfg.n[0])
}

/// Environment from a snapshot, or trial `trial` sampled on B_radius.
fn environment(cfg: &ExperimentConfig, env: &Option<PathBuf>, radius: usize, trial: u64) -> Result<Environment> {
    match env {
        Some(p) => read_env(p),
        None => Ok(Environment::sample(Arc::new(BoxLattice::new(cfg.d, radius)?), cfg.law, cfg.trial_seed(trial))),
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Sample { cfg, radius, trial, out } => {
            let cfg = cfg.load()?;
            let radius = radius.unwrap_or(2 * cfg.n[0]);
            let env = environment(&cfg, &None, radius, trial)?;
            let mut w = writer(&out)?;
            env.write_snapshot(&mut w)?;
            w.flush()?;
            Ok(true)
        }
        Command::Solve { cfg, env, n, trial, vectors, out } => {
            let cfg = cfg.load()?;
            let n = first_n(&cfg, n);
            let region = environment(&cfg, &env, n, trial)?;
            let env = if region.lattice().radius() == n { region } else { region.restrict(n)? };
            let op = DirichletOperator::assemble(&env, &ActiveSet::full(env.lattice()))?;
            let opts: SolverOptions = cfg.solver();
            let res = eigen::solve_bottom_k(&op, cfg.k, &opts)?;
            let res = eigen::principal_sign_fix(res, &op, cfg.tol)?;
            let mut w = writer(&out)?;
            res.write_csv(&mut w)?;
            w.flush()?;
            if let Some(p) = &vectors {
                let mut vw = BufWriter::new(File::create(p)?);
                for i in 0..op.dim() {
                    let row: Vec<String> = res.eigenvectors.iter().map(|v| format!("{:?}", v[i])).collect();
                    writeln!(vw, "{}", row.join(","))?;
                }
                vw.flush()?;
            }
            if !res.all_converged() {
                eprintln!("warning: not all eigenpairs converged within {} iterations", cfg.max_iter);
            }
            Ok(res.all_converged())
        }
        Command::Diagnose { cfg, env, n, trial, out } => {
            let mut cfg = cfg.load()?;
            cfg.mode = Mode::Diagnostics;
            let n = first_n(&cfg, n);
            let region = environment(&cfg, &env, 2 * n, trial)?;
            let outcome = experiments::analyze_environment(&cfg, &region, n, trial)?;
            let ledger: Vec<_> = outcome.records.iter().cloned().map(|r| (trial, r)).collect();
            let mut w = writer(&out)?;
            experiments::write_ledger(&mut w, &ledger)?;
            w.flush()?;
            let failures = outcome.report.exact_failures;
            eprintln!(
                "{} records, {} exact failures, converged: {}",
                ledger.len(),
                failures,
                outcome.report.converged
            );
            Ok(failures == 0 && outcome.report.converged)
        }
        Command::Sweep { cfg } => {
            let cfg = cfg.load()?;
            let output = experiments::run_experiment(&cfg)?;
            output.write_to(Path::new(&cfg.out))?;
            for t in output.trends.iter().filter(|t| t.metric == "mass" || t.metric == "ratio") {
                println!("n={} k={} {} median={:.6} p5={:.6}", t.n, t.k, t.metric, t.median, t.p5);
            }
            report_check(&output)
        }
        Command::LimitLaw { cfg, statistic } => {
            let mut cfg = cfg.load()?;
            let stat = match statistic.as_str() {
                "pi" => {
                    cfg.mode = Mode::PiOnly;
                    Statistic::Pi
                }
                "lambda" => {
                    if cfg.mode == Mode::PiOnly {
                        cfg.mode = Mode::FullSpectral;
                    }
                    Statistic::Lambda
                }
                other => bail!("unknown statistic {other:?} (expected pi or lambda)"),
            };
            let output = experiments::run_experiment(&cfg)?;
            if output.survival.is_empty() {
                bail!("the limit law is only available for the Pareto law");
            }
            output.write_to(Path::new(&cfg.out))?;
            for c in output.survival.iter().filter(|c| c.statistic == stat) {
                println!("n={} k={} sup_distance={:.4}", c.n, c.k, c.sup_distance);
            }
            report_check(&output)
        }
    }
}

fn report_check(output: &experiments::ExperimentOutput) -> Result<bool> {
    match output.check() {
        Ok(()) => Ok(true),
        Err(e) => {
            eprintln!("error: {e}");
            Ok(false)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
