//! `fedqs` — command line front end for the simulator.
//!
//! Exit codes: 0 on success, 1 on configuration errors, 2 on runtime errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedqs_cli::config::{self, ExperimentConfig};
use fedqs_cli::presets::{self, BoundsGrid};
use fedqs_cli::runner;
use fedqs_core::bounds::BoundStrategy;
use fedqs_core::Error;

#[derive(Parser)]
#[command(name = "fedqs", version, about = "Semi-asynchronous federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Config file (`key = value` lines, `#` comments).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; repeats use seed, seed+1, ...
    #[arg(long)]
    seed: Option<u64>,
    /// fedqs-sgd | fedqs-avg | fedsgd | fedavg
    #[arg(long)]
    strategy: Option<String>,
    /// safl | sync
    #[arg(long)]
    mode: Option<String>,
    /// Output directory root.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (all repeats) and write trace/summary artifacts.
    Run(RunArgs),
    /// The staleness-x-heterogeneity grid under both baseline strategies.
    Motivation(RunArgs),
    /// Compare FedQS-SGD/FedSGD/FedQS-Avg/FedAvg on paired data.
    Compare(RunArgs),
    /// Sweep one config key over several values.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Config key to sweep.
        #[arg(long)]
        key: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
    },
    /// Print the convergence-bound constants over a hyperparameter grid.
    Bounds(BoundsArgs),
}

#[derive(Args)]
struct BoundsArgs {
    /// Comma-separated momentum caps (theta).
    #[arg(long, default_value = "0.5")]
    thetas: String,
    /// Comma-separated local epoch counts.
    #[arg(long, default_value = "2")]
    epochs: String,
    /// Comma-separated aggregation batch sizes (K).
    #[arg(long, default_value = "10")]
    ks: String,
    /// Comma-separated maximum learning rates (beta).
    #[arg(long, default_value = "0.33")]
    betas: String,
    /// Smoothness constant L.
    #[arg(long, default_value_t = 1.0)]
    smoothness: f64,
    /// Heterogeneity bound delta.
    #[arg(long, default_value_t = 0.5)]
    heterogeneity: f64,
    /// Gradient norm bound G_c.
    #[arg(long, default_value_t = 20.0)]
    grad_bound: f64,
    /// Momentum-executing clients per round Q(t).
    #[arg(long, default_value_t = 4)]
    momentum_clients: u32,
    /// Upper aggregation-weight bound p.
    #[arg(long, default_value_t = 0.5)]
    weight_upper: f64,
    /// Lower aggregation-weight bound q.
    #[arg(long, default_value_t = 0.0)]
    weight_lower: f64,
    /// Initial squared distance to the optimum.
    #[arg(long, default_value_t = 1.0)]
    init_gap: f64,
    /// sgd | avg | both
    #[arg(long, default_value = "both")]
    strategy: String,
}

fn build_config(args: &RunArgs, defaults: ExperimentConfig) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => config::parse_config(path, defaults)?,
        None => defaults,
    };
    for assignment in &args.set {
        let (key, value) = assignment.split_once('=').ok_or_else(|| {
            Error::Config(format!("--set '{}' must look like key=value", assignment))
        })?;
        config::apply_key(&mut cfg, key.trim(), value.trim())?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(strategy) = &args.strategy {
        cfg.strategy = config::parse_strategy(strategy)?;
    }
    if let Some(mode) = &args.mode {
        cfg.mode = config::parse_mode(mode)?;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.display().to_string();
    }
    if let Some(repeats) = args.repeats {
        cfg.repeats = repeats;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>, Error> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Config(format!("cannot parse '{}' as {}", s, what)))
        })
        .collect()
}

fn bounds_grid(args: &BoundsArgs) -> Result<BoundsGrid, Error> {
    let strategies = match args.strategy.to_ascii_lowercase().as_str() {
        "sgd" => vec![BoundStrategy::Sgd],
        "avg" => vec![BoundStrategy::Avg],
        "both" => vec![BoundStrategy::Sgd, BoundStrategy::Avg],
        other => {
            return Err(Error::Config(format!(
                "unknown bounds strategy '{}' (expected sgd, avg, or both)",
                other
            )))
        }
    };
    Ok(BoundsGrid {
        thetas: parse_list(&args.thetas, "a number")?,
        epochs: parse_list(&args.epochs, "an integer")?,
        ks: parse_list(&args.ks, "an integer")?,
        betas: parse_list(&args.betas, "a number")?,
        smoothness: args.smoothness,
        heterogeneity: args.heterogeneity,
        grad_bound: args.grad_bound,
        momentum_clients: args.momentum_clients,
        weight_upper: args.weight_upper,
        weight_lower: args.weight_lower,
        init_gap: args.init_gap,
        strategies,
    })
}

/// Everything after configuration: failures here exit with code 2.
fn execute(command: &Command, cfg: Option<ExperimentConfig>) -> Result<(), Error> {
    match command {
        Command::Run(_) => {
            let cfg = cfg.expect("run has a config");
            let report = runner::run_experiment(&cfg)?;
            println!("wrote {} repeats under {}", cfg.repeats, report.out_dir.display());
            for (metric, agg) in &report.aggregate.metrics {
                match (agg.mean, agg.std) {
                    (Some(mean), Some(std)) => {
                        println!("{:<16} mean {:.6} (std {:.6})", metric, mean, std)
                    }
                    (Some(mean), None) => println!("{:<16} mean {:.6}", metric, mean),
                    _ => println!("{:<16} undefined", metric),
                }
            }
            Ok(())
        }
        Command::Motivation(_) => {
            let cfg = cfg.expect("motivation has a config");
            let report = presets::preset_motivation(&cfg)?;
            let path = presets::write_motivation(&cfg, &report)?;
            print!("{}", report.render_table());
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Compare(_) => {
            let cfg = cfg.expect("compare has a config");
            let report = presets::preset_comparison(&cfg)?;
            let path = presets::write_comparison(&cfg, &report)?;
            print!("{}", report.render_table());
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Sweep { key, values, .. } => {
            let cfg = cfg.expect("sweep has a config");
            let values: Vec<String> = values
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
            let report = presets::preset_sweep(&cfg, key, &values)?;
            for entry in &report.entries {
                let best = entry
                    .aggregate
                    .metrics
                    .get("best_acc")
                    .and_then(|m| m.mean)
                    .unwrap_or(f64::NAN);
                println!("{} = {:<12} best_acc {:.6}", report.key, entry.value, best);
            }
            Ok(())
        }
        Command::Bounds(args) => {
            let grid = bounds_grid(args)?;
            print!("{}", presets::bounds_table(&grid)?);
            Ok(())
        }
    }
}

fn is_config_error(err: &Error) -> bool {
    matches!(err, Error::Config(_))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are successes, anything else is a
            // configuration problem.
            return if err.use_stderr() {
                eprint!("{}", err);
                ExitCode::from(1)
            } else {
                print!("{}", err);
                ExitCode::SUCCESS
            };
        }
    };
    let cfg = match &cli.command {
        Command::Run(args) => Some(build_config(args, ExperimentConfig::default())),
        Command::Motivation(args) | Command::Compare(args) => {
            Some(build_config(args, ExperimentConfig::desk_scale()))
        }
        Command::Sweep { run, .. } => Some(build_config(run, ExperimentConfig::default())),
        Command::Bounds(_) => None,
    };
    let cfg = match cfg.transpose() {
        Ok(cfg) => cfg,
        Err(err) => {
            eprintln!("error: {}", err);
            return ExitCode::from(1);
        }
    };
    match execute(&cli.command, cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err);
            ExitCode::from(if is_config_error(&err) { 1 } else { 2 })
        }
    }
}
