use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use nlpme_core::config::{InitialSpec, Problem, RunConfig};
use nlpme_core::diagnostics::Verdict;
use nlpme_core::runner;

/// Nonlocal-to-local laboratory: JKO / particle-ODE runs, ε-sweeps and replay.
#[derive(Parser, Debug)]
#[command(name = "nlpme", version)]
struct Cli {
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: `out` key of the config, else `./out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated ε list overriding the config.
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Single run; exit 0 iff the solve completed and every check passed.
    Run(Common),
    /// ε-sweep with per-ε subdirectories and a top-level report.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Concurrent rows.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Two-species run (problem forced to `nlis`); sweeps when several ε are given.
    Cds {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Replays the verdicts of a run directory from its CSVs.
    Check {
        #[arg(long)]
        out: PathBuf,
    },
    /// Emits Barenblatt profiles as `x,value` CSVs.
    Reference(Common),
}

fn load(c: &Common) -> anyhow::Result<(RunConfig, PathBuf)> {
    let mut cfg =
        RunConfig::load(&c.config).with_context(|| format!("loading {}", c.config.display()))?;
    if let Some(eps) = &c.epsilons {
        cfg.eps = None;
        cfg.epsilons = eps.clone();
        cfg.validate()?;
    }
    let out = c
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out))
}

fn print_verdicts(quiet: bool, vs: &[Verdict]) {
    if quiet {
        return;
    }
    for v in vs {
        let tag = match (v.passed, v.advisory) {
            (true, _) => "pass",
            (false, true) => "flag",
            (false, false) => "FAIL",
        };
        println!(
            "{tag:4}  {:<36} value {:.6e}  limit {:.6e}  {}",
            v.name, v.value, v.limit, v.detail
        );
    }
}

fn do_run(quiet: bool, cfg: &RunConfig, out: &Path) -> anyhow::Result<bool> {
    let s = runner::run(cfg, out)?;
    if let Some(ev) = &s.evaluation {
        print_verdicts(quiet, &ev.verdicts);
    }
    if let Some(err) = &s.manifest.error {
        eprintln!("error: {err}");
        eprintln!("partial artifacts in {} (see MANIFEST)", out.display());
    }
    Ok(s.success())
}

fn do_sweep(quiet: bool, cfg: &RunConfig, out: &Path, jobs: usize) -> anyhow::Result<bool> {
    let s = runner::sweep(cfg, out, jobs)?;
    if quiet {
        return Ok(s.report.passed);
    }
    println!(
        "{:>10} {:>14} {:>10} {:>14} {:>14} {:>10}  verdict",
        "eps", "E_l2", "ratio", "excess_l1", "excess_l2", "h1_used"
    );
    for r in &s.report.rows {
        println!(
            "{:>10} {:>14.6e} {:>10.4} {:>14.6e} {:>14.6e} {:>10.4}  {}",
            r.eps, r.e_l2, r.ratio_prev, r.excess_l1_max, r.excess_l2, r.h1_budget_used, r.verdict
        );
    }
    print_verdicts(false, &s.excess_verdicts);
    println!("sweep {}", if s.report.passed { "pass" } else { "FAIL" });
    Ok(s.report.passed)
}

fn dispatch(cli: Cli) -> anyhow::Result<bool> {
    let q = cli.quiet;
    match cli.command {
        Command::Run(c) => {
            let (cfg, out) = load(&c)?;
            do_run(q, &cfg, &out)
        }
        Command::Sweep { common, jobs } => {
            let (cfg, out) = load(&common)?;
            do_sweep(q, &cfg, &out, jobs)
        }
        Command::Cds { common, jobs } => {
            let (mut cfg, out) = load(&common)?;
            cfg.problem = Problem::Nlis;
            cfg.validate()?;
            if cfg.eps_list().len() > 1 {
                do_sweep(q, &cfg, &out, jobs)
            } else {
                do_run(q, &cfg, &out)
            }
        }
        Command::Check { out } => {
            let r = runner::check(&out)?;
            print_verdicts(q, &r.evaluation.verdicts);
            if !r.identical {
                eprintln!(
                    "replayed verdicts differ from {}",
                    out.join(runner::VERDICTS).display()
                );
            }
            Ok(r.success())
        }
        Command::Reference(c) => {
            let (cfg, out) = load(&c)?;
            if !matches!(cfg.initial, InitialSpec::Barenblatt { .. }) {
                bail!("`reference` needs a barenblatt initial datum");
            }
            for f in runner::reference(&cfg, &out)? {
                if !q {
                    println!("{}", f.display());
                }
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
