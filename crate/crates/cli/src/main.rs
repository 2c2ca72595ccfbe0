//! `openrabi` command-line driver.

mod commands;
mod config;
mod figures;
mod output;

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use openrabi::evolution::InitialState;
use openrabi::information::validated_cutoff;
use openrabi::model::{hamiltonian, hamiltonian_derivative, ModelOperators, Parameter};
use openrabi::rng::trajectory_seed;
use openrabi::trajectories::{max_bin_width, sample_with, Unraveling};
use rayon::prelude::*;

use crate::config::{QfiMethodArg, RunConfig};
use crate::figures::Figure;
use crate::output::{num, Run};

/// Open Rabi model laboratory: dynamics, trajectories, Fisher information
/// and finite-size scaling.
///
/// Every flag can also be set through the environment variable named in
/// its help entry (prefix OPENRABI_).
#[derive(Debug, Parser)]
#[command(name = "openrabi", version)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true, env = "OPENRABI_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "OPENRABI_OUT", default_value = "openrabi-out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "OPENRABI_THREADS")]
    threads: Option<usize>,
    /// Master seed for stochastic commands; overrides the config.
    #[arg(long, global = true, env = "OPENRABI_SEED")]
    seed: Option<u64>,
    /// Largest Fock cutoff the adaptive truncation may reach.
    #[arg(long = "max-ncutoff", global = true, env = "OPENRABI_MAX_NCUTOFF")]
    max_ncutoff: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    GeneralizedMe,
    Correlator,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DumpTarget {
    Hamiltonian,
    Derivative,
    Number,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Steady state per η: photon number, purity, residual.
    SteadyState,
    /// Liouvillian gap per η with the fitted dynamic exponent.
    Gap,
    /// Master-equation dynamics from vacuum ⊗ ↓.
    Propagate,
    /// Global quantum Fisher information for ω.
    Qfi {
        #[arg(long, value_enum)]
        method: Option<Method>,
    },
    /// Photon-counting Fisher information from sampled trajectories.
    Fi,
    /// Two-time correlator grid of the photon number.
    Correlator,
    /// Sample click records and store them in binary and CSV form.
    Trajectory,
    /// Scaling collapse of a qfi/fi CSV.
    Collapse,
    /// Desk-scale run of one of the reference scaling figures.
    ReproduceFigure {
        #[arg(value_enum)]
        figure: Figure,
    },
    /// Write an operator in the JSON debug format.
    Dump {
        #[arg(value_enum, default_value = "hamiltonian")]
        target: DumpTarget,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SteadyState => "steady-state",
            Command::Gap => "gap",
            Command::Propagate => "propagate",
            Command::Qfi { .. } => "qfi",
            Command::Fi => "fi",
            Command::Correlator => "correlator",
            Command::Trajectory => "trajectory",
            Command::Collapse => "collapse",
            Command::ReproduceFigure { .. } => "reproduce-figure",
            Command::Dump { .. } => "dump",
        }
    }
}

fn trajectory_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let grid = cfg.grid(&cfg.times, "times")?;
    let t_final = *grid.times(cfg.kappa, cfg.omega)?.last().expect("nonempty grid");
    std::fs::create_dir_all(run.dir().join("records"))?;
    let mut rows = Vec::new();
    for p in cfg.points()? {
        let q = validated_cutoff(&p, &InitialState::VacuumDown, &[t_final], &commands::solver(cfg))?;
        let dt = cfg.dt.unwrap_or_else(|| max_bin_width(&q));
        let u = Unraveling::new(&q, dt, ((t_final / dt).round() as usize).max(1))?;
        let x0 = if u.is_mixed() {
            u.initial_mixed(&InitialState::VacuumDown.density(q.n_cutoff)?)?
        } else {
            u.initial_pure(&InitialState::VacuumDown.pure(q.n_cutoff)?)?
        };
        let records = (0..cfg.n_traj)
            .into_par_iter()
            .map(|i| sample_with(&u, &x0, trajectory_seed(cfg.seed, i as u64)).map(|(r, _)| r))
            .collect::<openrabi::Result<Vec<_>>>()?;
        for (i, rec) in records.iter().enumerate() {
            let mut buf = Vec::new();
            openrabi::record::write_binary(rec, &mut buf)?;
            run.raw(&format!("records/eta{}_{i:05}.ortr", p.eta()), &buf)?;
            for &b in &rec.click_bins {
                rows.push(vec![num(p.eta()), i.to_string(), rec.seed.to_string(), b.to_string(), num(b as f64 * rec.dt)]);
            }
        }
    }
    run.csv("clicks.csv", &["eta", "trajectory", "seed", "bin", "time"], &rows)
}

fn dump_cmd(cfg: &RunConfig, run: &mut Run, target: DumpTarget) -> Result<()> {
    let p = cfg.points()?.remove(0);
    let op = match target {
        DumpTarget::Hamiltonian => hamiltonian(&p)?,
        DumpTarget::Derivative => hamiltonian_derivative(&p, Parameter::Omega)?,
        DumpTarget::Number => ModelOperators::new(p.n_cutoff)?.n,
    };
    run.json("operator.json", &op.to_json_debug())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = match (&cli.config, &cli.command) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Command::ReproduceFigure { figure }) => figures::preset(*figure),
        (None, _) => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(n) = cli.max_ncutoff {
        cfg.max_n_cutoff = n;
    }
    if let Command::Qfi { method: Some(m) } = &cli.command {
        cfg.method = match m {
            Method::GeneralizedMe => QfiMethodArg::GeneralizedMe,
            Method::Correlator => QfiMethodArg::Correlator,
        };
    }
    cfg.validate().context("invalid configuration")?;
    if matches!(cli.command, Command::Fi) && cfg.n_traj < 100 {
        bail!("invalid configuration: n_traj: must be at least 100, got {}", cfg.n_traj);
    }

    let out = match &cli.command {
        Command::ReproduceFigure { figure } => cli.out.join(format!("{figure:?}").to_lowercase()),
        _ => cli.out.clone(),
    };
    let mut run = Run::new(&out, cli.command.name(), &cfg)?;
    match &cli.command {
        Command::SteadyState => commands::steady_state_cmd(&cfg, &mut run)?,
        Command::Gap => commands::gap_cmd(&cfg, &mut run)?,
        Command::Propagate => commands::propagate_cmd(&cfg, &mut run)?,
        Command::Qfi { .. } => commands::qfi_cmd(&cfg, &mut run)?,
        Command::Fi => commands::fi_cmd(&cfg, &mut run)?,
        Command::Correlator => commands::correlator_cmd(&cfg, &mut run)?,
        Command::Trajectory => trajectory_cmd(&cfg, &mut run)?,
        Command::Collapse => commands::collapse_cmd(&cfg, &mut run)?,
        Command::ReproduceFigure { figure } => figures::reproduce(*figure, &cfg, &mut run)?,
        Command::Dump { target } => dump_cmd(&cfg, &mut run, *target)?,
    }
    let manifest = run.finish()?;
    println!("{}", out.join("manifest.json").display());
    log::info!("wrote {} files", manifest.outputs.len());
    Ok(())
}
