//! `srvf`: rationale collection, supervisor training, corrected prediction,
//! scoring and benchmarking from the command line.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use commands::{
    check_outputs, print_stdout, BenchArgs, CollectArgs, EvalArgs, RunArgs, SampleArgs, SynthArgs, TrainArgs,
};
use config::{CommonArgs, Config};

#[derive(Debug, Parser)]
#[command(
    name = "srvf",
    version,
    about = "Supervised rationale verification and feedback for relation extraction"
)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Collect unbiased and biased rationales on labeled samples.
    Collect(CollectArgs),
    /// Train the rationale supervisor on a rationale store.
    Train(TrainArgs),
    /// Predict test samples, correcting biased predictions.
    Run(RunArgs),
    /// Score predictions against gold labels.
    Eval(EvalArgs),
    /// Draw a k-shot training set.
    SampleKshot(SampleArgs),
    /// Compare methods end to end.
    Bench(BenchArgs),
    /// Write the synthetic corpus.
    Synth(SynthArgs),
}

fn init_logging() {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .json()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = Config::resolve(&cli.common)?;
    match &cli.command {
        Command::Collect(a) => a.apply(&mut cfg),
        Command::Train(a) => a.apply(&mut cfg),
        Command::Run(a) => a.apply(&mut cfg),
        Command::Bench(a) => a.apply(&mut cfg),
        Command::Eval(_) | Command::SampleKshot(_) | Command::Synth(_) => {}
    }
    if cli.common.print_config {
        return print_stdout(&cfg.to_json());
    }
    match &cli.command {
        Command::Collect(a) => {
            check_outputs(&[&a.data], &[&a.out])?;
            a.run(&cfg)
        }
        Command::Train(a) => {
            check_outputs(&[&a.rationales, &a.data], &[&a.out])?;
            a.run(&cfg)
        }
        Command::Run(a) => {
            check_outputs(&[&a.test, &a.model, &a.store, &a.data], &[&a.out])?;
            a.run(&cfg)
        }
        Command::Eval(a) => {
            let outs: Vec<&std::path::Path> = a.out.iter().chain(&a.error_matrix).map(|p| p.as_path()).collect();
            check_outputs(&[&a.pred, &a.gold], &outs)?;
            a.run(&cfg)
        }
        Command::SampleKshot(a) => {
            check_outputs(&[&a.data], &[&a.out])?;
            a.run(&cfg)
        }
        Command::Bench(a) => a.run(&cfg),
        Command::Synth(a) => a.run(&cfg),
    }
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
    init_logging();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!(error = format!("{e:#}"), "command failed");
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
