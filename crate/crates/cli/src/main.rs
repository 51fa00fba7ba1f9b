use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use moe_placement::experiment::{
    cmd_place, cmd_simulate, cmd_sweep, cmd_validate, sig6, Axis, ExperimentConfig, ExperimentError,
};
use moe_placement::placement::Strategy;

/// Activation-aware MoE expert placement and serving simulator.
#[derive(Parser)]
#[command(name = "moe-place", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to the config's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sets the workload, placement and profile seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Placement strategy: ours, uniform, redundance, smartmoe, eplb, oracle.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Disable periodic migration checks.
    #[arg(long)]
    no_migration: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a placement and its utility report.
    Place(Common),
    /// Run the event-driven simulation.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated strategies; each run writes its own subdirectory.
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<Strategy>,
    },
    /// Re-run the simulation along one axis and aggregate mean latency.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// gpus (total count), bandwidth (Mbps) or arrival (mean seconds).
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<Strategy>,
    },
    /// Schema-check configs, cluster/model/workload documents, traces and
    /// placements.
    Validate {
        /// Config giving the cluster and model that traces, workloads and
        /// placements are checked against.
        #[arg(long)]
        config: Option<PathBuf>,
        paths: Vec<PathBuf>,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), ExperimentError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(s) = common.strategy {
        cfg.strategy = s;
    }
    if common.no_migration {
        cfg.migration.enabled = false;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Place(common) => {
            let (cfg, out) = load(&common)?;
            let r = cmd_place(&cfg, &out)?;
            println!(
                "{}: proxy cost {}, local utility {}, placement written to {}",
                r.strategy,
                sig6(r.proxy_cost),
                sig6(r.utility.total_utility),
                out.join("placement.json").display()
            );
        }
        Command::Simulate { common, strategies } => {
            let (mut cfg, out) = load(&common)?;
            if !strategies.is_empty() {
                cfg.strategies = strategies;
            }
            for r in cmd_simulate(&cfg, &out)? {
                println!(
                    "{}: {} requests, mean latency {} s, p95 {} s, local ratio {}, {} migration(s) -> {}",
                    r.strategy,
                    r.summary.requests,
                    sig6(r.summary.global.mean),
                    sig6(r.summary.global.p95),
                    sig6(r.summary.final_local_ratio),
                    r.summary.migrations,
                    r.dir.display()
                );
            }
        }
        Command::Sweep {
            common,
            axis,
            values,
            strategies,
        } => {
            let (mut cfg, out) = load(&common)?;
            if !strategies.is_empty() {
                cfg.strategies = strategies;
            }
            let axis: Axis = axis.parse()?;
            for r in cmd_sweep(&cfg, axis, &values, &out)? {
                println!(
                    "{}={} {}: mean latency {} s, local ratio {}",
                    axis.name(),
                    sig6(r.value),
                    r.strategy,
                    sig6(r.mean_latency),
                    sig6(r.local_ratio)
                );
            }
            println!("{}", out.join("sweep.csv").display());
        }
        Command::Validate { config, paths } => {
            let cfg = config.as_deref().map(ExperimentConfig::load).transpose()?;
            let checks = cmd_validate(&paths, cfg.as_ref())?;
            let mut bad = 0;
            for c in &checks {
                match &c.error {
                    None => println!("ok    {} ({})", c.path.display(), c.kind),
                    Some(e) => {
                        bad += 1;
                        println!("error {} ({}): {e}", c.path.display(), c.kind);
                    }
                }
            }
            if bad > 0 {
                return Err(ExperimentError::Config {
                    context: "validate".into(),
                    message: format!("{bad} of {} file(s) failed", checks.len()),
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
