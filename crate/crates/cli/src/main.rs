use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use stockformer_cli::error::one_line;
use stockformer_cli::pipeline::{self, Layout};
use stockformer_cli::synth::{write_fixture, SynthOptions};
use stockformer_cli::{error_code, RunConfig};

#[derive(Parser)]
#[command(
    name = "stockformer",
    version,
    about = "Dual-frequency stock prediction pipeline"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, env = "STOCKFORMER_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides `model.seed`.
    #[arg(long, global = true, env = "STOCKFORMER_SEED")]
    seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long, global = true, env = "STOCKFORMER_OUT")]
    out: Option<PathBuf>,
    /// Overrides `run.jobs`.
    #[arg(long, global = true, env = "STOCKFORMER_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic bar file, metadata and config into the output directory.
    Synth {
        #[arg(long, default_value_t = SynthOptions::default().stocks)]
        stocks: usize,
        #[arg(long, default_value_t = SynthOptions::default().days)]
        days: usize,
        #[arg(long, default_value_t = SynthOptions::default().missing_rate)]
        missing_rate: f64,
    },
    /// Load, validate and filter bars.
    Ingest,
    /// Build, clean, neutralize and screen factors.
    Factors,
    /// Compute rolling train/validation/test windows.
    Split,
    /// Train one model per split.
    Train {
        #[arg(long)]
        split: Option<usize>,
    },
    /// Predict the test windows of each split.
    Predict {
        #[arg(long)]
        split: Option<usize>,
    },
    /// Score predictions and pick the traded output.
    Evaluate {
        #[arg(long)]
        split: Option<usize>,
    },
    /// Run TopK-Dropout on the test scores.
    Backtest {
        #[arg(long)]
        split: Option<usize>,
    },
    /// Aggregate evaluations and backtests.
    Report,
    /// Hyperparameter grid on one split.
    Sweep {
        #[arg(long, default_value_t = 0)]
        split: usize,
        #[arg(long)]
        max_runs: Option<usize>,
    },
    /// Full model and single-component ablations on one split.
    Ablate {
        #[arg(long, default_value_t = 0)]
        split: usize,
    },
    /// Every stage from ingest to report.
    Run,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.model.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    if let Some(jobs) = cli.jobs {
        config.run.jobs = jobs;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Synth {
        stocks,
        days,
        missing_rate,
    } = cli.command
    {
        let dir = cli
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from("synthetic"));
        let options = SynthOptions {
            stocks,
            days,
            missing_rate,
            seed: cli.seed.unwrap_or(SynthOptions::default().seed),
            ..SynthOptions::default()
        };
        let path = write_fixture(&dir, &options)?;
        println!("config {}", path.display());
        return Ok(());
    }
    let config = load_config(&cli)?;
    let layout = Layout::new(&config.output.dir);
    match cli.command {
        Command::Synth { .. } => unreachable!("handled above"),
        Command::Ingest => {
            let s = pipeline::ingest(&config, &layout)?;
            println!(
                "ingest: {} dates, {} symbols, {} excluded",
                s.dates,
                s.symbols,
                s.excluded.len()
            );
        }
        Command::Factors => {
            let s = pipeline::factors(&config, &layout)?;
            println!(
                "factors: kept {}, neutralized {}",
                s.kept.len(),
                s.neutralized
            );
        }
        Command::Split => println!("split: {} splits", pipeline::split(&config, &layout)?.len()),
        Command::Train { split } => println!(
            "train: {} models",
            pipeline::train_splits(&config, &layout, split)?.len()
        ),
        Command::Predict { split } => println!(
            "predict: {} rows",
            pipeline::predict(&config, &layout, split)?
        ),
        Command::Evaluate { split } => {
            for e in pipeline::evaluate_splits(&config, &layout, split)? {
                println!(
                    "evaluate: ic {:.4} rank_ic {:.4} accuracy {:.2}",
                    e.report.ic_mean, e.report.rank_ic_mean, e.report.directional_accuracy
                );
            }
        }
        Command::Backtest { split } => {
            for c in pipeline::backtest(&config, &layout, split)? {
                println!(
                    "backtest: annualized {:.4} max drawdown {:.4}",
                    c.strategy.annualized_return, c.strategy.max_drawdown
                );
            }
        }
        Command::Report => println!("report: {} splits", pipeline::report(&layout)?.len()),
        Command::Sweep { split, max_runs } => println!(
            "sweep: {} runs",
            pipeline::sweep(&config, &layout, split, max_runs)?.len()
        ),
        Command::Ablate { split } => {
            for r in pipeline::ablate(&config, &layout, split)? {
                println!("ablate: {:<12} val {:.6}", r.variant, r.val_total);
            }
        }
        Command::Run => {
            pipeline::ingest(&config, &layout)?;
            pipeline::factors(&config, &layout)?;
            pipeline::split(&config, &layout)?;
            pipeline::train_splits(&config, &layout, None)?;
            pipeline::predict(&config, &layout, None)?;
            pipeline::evaluate_splits(&config, &layout, None)?;
            pipeline::backtest(&config, &layout, None)?;
            println!("run: {} splits reported", pipeline::report(&layout)?.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let text = e.to_string();
            let first = text
                .lines()
                .next()
                .unwrap_or_default()
                .trim_start_matches("error: ");
            eprintln!("error[E_USAGE]: {first}");
            return ExitCode::from(2);
        }
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", error_code(&e), one_line(&e));
            ExitCode::from(2)
        }
    }
}
