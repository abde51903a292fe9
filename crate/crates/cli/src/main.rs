//! `gtbm`: batch front end for the g(t)-Brownian motion experiments.
//!
//! Exit codes: 0 when every configured threshold passes, 2 on a threshold
//! failure, 1 on any error (including usage errors).

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "gtbm", version, about = "Monte Carlo experiments for Brownian motion under time-dependent metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set sim.dt=5e-4`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed (overrides `sim.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for path-parallel loops.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate paths and summarize terminal points.
    Simulate,
    /// Frame orthonormality defects, one row per step size.
    TransportCheck,
    /// Gaps of the damped and variation transports from parallel transport.
    Equivalence,
    /// Bismut estimate of a heat-solution gradient.
    Bismut,
    /// Gradient sup-norm estimates against the decay bound.
    GradientBound,
    /// Law of the time-changed fixed-metric Brownian motion.
    TimeChange,
    /// Monte Carlo histogram against the conjugate heat density.
    ConjugateHeat,
    /// Quadratic variation of the intrinsic martingale.
    MartingaleL,
    /// Pointwise scalar-curvature gradient estimate on the torus flow.
    ScalarEstimate,
    /// Solve the normalized Ricci flow on the torus and save a snapshot.
    NrfSolve,
    /// Self-consistency checks of the PDE oracles.
    OracleSelftest,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::TransportCheck => "transport-check",
            Command::Equivalence => "equivalence",
            Command::Bismut => "bismut",
            Command::GradientBound => "gradient-bound",
            Command::TimeChange => "time-change",
            Command::ConjugateHeat => "conjugate-heat",
            Command::MartingaleL => "martingale-l",
            Command::ScalarEstimate => "scalar-estimate",
            Command::NrfSolve => "nrf-solve",
            Command::OracleSelftest => "oracle-selftest",
        }
    }
}

const SELFTEST_DEFAULT: &str = "[family]\nkind = \"flat_torus\"\n\n[sim]\nhorizon = 1.0\nn_steps = 1\n";

fn execute(cli: &Cli) -> Result<Option<bool>> {
    let text = match (&cli.config, cli.command) {
        (Some(path), _) => std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?,
        (None, Command::OracleSelftest) => SELFTEST_DEFAULT.to_string(),
        (None, _) => return Err(anyhow!("--config is required for `{}`", cli.command.name())),
    };
    let mut overrides = cli.set.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("sim.seed={seed}"));
    }
    if let Some(out) = &cli.out {
        overrides.push(format!("output.dir={}", toml::Value::String(out.display().to_string())));
    }
    let cfg = config::load(&text, &overrides)?;
    cfg.validate(cli.command)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    run::run(cli.command, &cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match std::panic::catch_unwind(|| execute(&cli)) {
        Ok(Ok(Some(false))) => {
            eprintln!("{}: threshold check failed", cli.command.name());
            ExitCode::from(2)
        }
        Ok(Ok(_)) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(_) => {
            eprintln!("error: internal failure");
            ExitCode::from(1)
        }
    }
}
