use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spotter_core::gridworld::{DEFAULT_HEIGHT, DEFAULT_WIDTH};
use spotter_core::harness::{run_experiment, summarize_files, ExperimentConfig, HarnessError, RunMode};
use spotter_core::par::Mode;

#[derive(Parser)]
#[command(name = "spotter", version, about = "Plan, detect impasses, learn new operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write metrics under --out.
    Run(RunArgs),
    /// Merge metrics files into per-episode mean and std of reward.
    Summarize {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Add a column normalized by the largest mean.
        #[arg(long)]
        normalize: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long, default_value = "spotter")]
    mode: String,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    puzzles: Vec<u8>,
    #[arg(long, value_delimiter = ',', default_value = "10000,20000,10000")]
    episodes: Vec<u64>,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    #[arg(long, default_value_t = 0.9)]
    tau: f64,
    /// Exploration schedule as MAX:MIN.
    #[arg(long, default_value = "0.9:0.05")]
    eps: String,
    /// First seed; runs use seed, seed+1, ...
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    runs: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Log candidate preconditions instead of installing operators.
    #[arg(long)]
    defer_operators: bool,
    #[arg(long, default_value_t = 50)]
    log_every: u64,
    #[arg(long)]
    render_ascii: bool,
    #[arg(long)]
    load_operators: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_WIDTH)]
    width: u8,
    #[arg(long, default_value_t = DEFAULT_HEIGHT)]
    height: u8,
    #[arg(long)]
    record_wall_time: bool,
    /// Run seeds one after another.
    #[arg(long)]
    sequential: bool,
}

fn parse_eps(s: &str) -> Result<(f64, f64), HarnessError> {
    let bad = || HarnessError::Usage(format!("--eps expects MAX:MIN, got `{s}`"));
    let (hi, lo) = s.split_once(':').ok_or_else(bad)?;
    Ok((hi.trim().parse().map_err(|_| bad())?, lo.trim().parse().map_err(|_| bad())?))
}

fn experiment(args: RunArgs) -> Result<ExperimentConfig, HarnessError> {
    let mode: RunMode = args.mode.parse()?;
    let (eps_max, eps_min) = parse_eps(&args.eps)?;
    if args.runs == 0 {
        return Err(HarnessError::Usage("--runs must be at least 1".into()));
    }
    Ok(ExperimentConfig {
        mode,
        puzzles: args.puzzles,
        episodes: args.episodes,
        width: args.width,
        height: args.height,
        alpha: args.alpha,
        gamma: args.gamma,
        tau: args.tau,
        eps_max,
        eps_min,
        seeds: (args.seed..args.seed + args.runs).collect(),
        out_dir: args.out,
        defer_operators: args.defer_operators,
        log_every: args.log_every,
        load_operators: args.load_operators,
        render_ascii: args.render_ascii,
        record_wall_time: args.record_wall_time,
        par: if args.sequential { Mode::Sequential } else { Mode::Parallel },
        ..ExperimentConfig::default()
    })
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run(args) => {
            let config = experiment(args)?;
            for path in run_experiment(&config)? {
                println!("{}", path.display());
            }
        }
        Command::Summarize { files, normalize, out } => {
            let csv = summarize_files(&files, normalize)?;
            match out {
                Some(path) => std::fs::write(&path, csv).map_err(|source| HarnessError::Io { path, source })?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("spotter: {e}");
            ExitCode::from(match e {
                HarnessError::Usage(_) => 2,
                HarnessError::Io { .. } => 3,
                _ => 1,
            })
        }
    }
}
