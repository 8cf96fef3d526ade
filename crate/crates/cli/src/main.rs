use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedsim_cli::commands::{self, RunOptions, DEFAULT_SWEEP_AGGREGATORS, DEFAULT_SWEEP_HYPERS};
use fedsim_cli::{CliError, CliResult};

/// Deterministic federated-learning simulator for strategy comparisons.
#[derive(Parser)]
#[command(name = "fedsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; `//` comment lines are allowed. Defaults to
    /// the built-in full-scale profile.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of rounds.
    #[arg(long)]
    rounds: Option<usize>,
    /// Worker threads; never changes results.
    #[arg(long, env = "FEDSIM_WORKERS")]
    workers: Option<usize>,
}

impl From<Common> for RunOptions {
    fn from(c: Common) -> Self {
        Self {
            config: c.config,
            out: c.out,
            seed: c.seed,
            rounds: c.rounds,
            workers: c.workers,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write rounds.csv, collaborators.csv, scans.csv,
    /// summary.csv and manifest.json.
    Run(Common),
    /// Run every aggregator x hyper-policy combination and write
    /// comparison.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated aggregator names.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SWEEP_AGGREGATORS.map(String::from))]
        aggregators: Vec<String>,
        /// Comma-separated hyperparameter policy names.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SWEEP_HYPERS.map(String::from))]
        hypers: Vec<String>,
    },
    /// Print mean, std and quartiles of the final round's per-scan metrics.
    Summarize {
        /// A rounds.csv written by `run`; scans.csv is read from the same
        /// directory.
        rounds_csv: PathBuf,
    },
    /// Print the collaborator shards a config produces.
    DescribePartition {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Emit (time, metric) series from rounds.csv files for plotting.
    PlotData {
        #[arg(required = true)]
        rounds_csv: Vec<PathBuf>,
        /// Any rounds.csv column.
        #[arg(long, default_value = "mean_dice")]
        metric: String,
        /// Write one file per input here instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run(common) => {
            let out = common.out.clone();
            let m = commands::run(&common.into())?;
            let dir = out.or(m.config.output.dir.clone().map(PathBuf::from)).unwrap_or_default();
            eprintln!(
                "completed {} rounds, simulated time {:.1} s, outputs in {}",
                m.rounds_completed,
                m.sim_time_end_s,
                dir.display()
            );
        }
        Command::Sweep {
            common,
            aggregators,
            hypers,
        } => {
            let outcomes = commands::sweep(&common.into(), &aggregators, &hypers)?;
            println!("aggregator,hyper,final_mean_dice,convergence_score");
            for c in &outcomes {
                match &c.result {
                    Ok((d, s)) => println!("{},{},{d:.4},{s:.4}", c.aggregator, c.hyper),
                    Err(e) => println!("{},{},failed,{}", c.aggregator, c.hyper, e.exit_code()),
                }
            }
        }
        Command::Summarize { rounds_csv } => print!("{}", commands::summarize(&rounds_csv)?),
        Command::DescribePartition { config, seed } => {
            print!("{}", commands::describe_partition(config.as_deref(), seed)?)
        }
        Command::PlotData { rounds_csv, metric, out } => {
            let series = commands::plot_data(&rounds_csv, &metric)?;
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
                    for (path, text) in &series {
                        commands::write_atomic(&dir.join(commands::plot_file_name(path, &metric)), text)?;
                    }
                }
                None => {
                    for (path, text) in &series {
                        if series.len() > 1 {
                            println!("# {}", path.display());
                        }
                        print!("{text}");
                    }
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
