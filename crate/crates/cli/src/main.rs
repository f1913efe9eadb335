use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use dccp_marl::experiment::{self, RunConfig, RunSummary};
use dccp_marl::verify::{self, SuiteReport};

#[derive(Parser)]
#[command(name = "dccp-marl", version, about = "Multi-agent DQN with depthwise-convolution communication")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a run config and write metrics, summaries and checkpoints.
    Train {
        config: PathBuf,
        /// Train only this seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the number of training steps.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Greedy evaluation of a checkpoint (path without extension).
    Evaluate {
        checkpoint: PathBuf,
        config: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        /// Also write the first evaluation episode as a per-agent CSV.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Rank run summaries on one metric.
    Compare {
        #[arg(required = true, num_args = 2..)]
        summaries: Vec<PathBuf>,
        #[arg(long)]
        metric: String,
    },
    /// Finite-difference check of every backward pass.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Brute-force equivalence checks against naive reimplementations.
    Oracle {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: &PathBuf) -> Result<RunConfig> {
    RunConfig::load(path).with_context(|| format!("reading config {}", path.display()))
}

fn report(r: SuiteReport) -> Result<bool> {
    print!("{r}");
    println!("{}", if r.passed() { "all checks passed" } else { "some checks FAILED" });
    Ok(r.passed())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            steps,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(n) = steps {
                cfg.train_steps = n;
            }
            let summary = experiment::run(&cfg)?;
            println!("run {} -> {}", summary.run_id, cfg.run_dir()?.display());
            for (name, agg) in &summary.metrics {
                println!("{name:<20} {:>12.6} ± {:.6}", agg.mean, agg.stderr);
            }
            Ok(true)
        }
        Command::Evaluate {
            checkpoint,
            config,
            episodes,
            trajectory,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(e) = episodes {
                cfg.eval.episodes = e;
            }
            let metrics = experiment::evaluate_checkpoint(&cfg, &checkpoint)?;
            for (name, value) in metrics {
                println!("{name:<20} {value}");
            }
            if let Some(path) = trajectory {
                let rows = experiment::checkpoint_trajectory(&cfg, &checkpoint)?;
                std::fs::write(&path, experiment::trajectory_csv(&rows))
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(true)
        }
        Command::Compare { summaries, metric } => {
            let loaded = summaries
                .iter()
                .map(|p| RunSummary::load(p).with_context(|| format!("reading summary {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            if loaded.len() < 2 {
                bail!("compare needs at least two summaries");
            }
            print!("{}", experiment::compare(&loaded, &metric)?);
            Ok(true)
        }
        Command::Gradcheck { seed } => report(verify::gradient_suite(seed)?),
        Command::Oracle { seed } => report(verify::oracle_suite(seed)?),
    }
}
