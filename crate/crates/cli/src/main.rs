//! `ascnet` command-line tool: corpus generation, training, evaluation,
//! gradient checks, benchmarking and rate-field export.

mod bench;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ascnet::models::Variant;
use ascnet::training::GradTarget;

/// Exit status for a runtime failure.
const EXIT_RUNTIME: u8 = 2;
/// Exit status when a gradient check fails.
const EXIT_GRADCHECK: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "ascnet", version, about = "Adaptive-scale convolutional networks for segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic two-scale disk corpus.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a data directory.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Train the three 7-layer models per seed and tabulate median metrics.
    Bench(BenchArgs),
    /// Export the learned rate field of an adaptive model for one image.
    Ratefield(RatefieldArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// TOML file with synthetic corpus settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_parser = parse_variant)]
    model: Variant,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(1..))]
    iters: u64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    eps: f64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    log_every: u64,
    /// Also write `<out>.<iteration>` every this many iterations.
    #[arg(long, default_value_t = 0)]
    checkpoint_every: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CheckTarget {
    Classic,
    Dilated,
    Asc,
    Ratenet,
    Model,
}

impl From<CheckTarget> for GradTarget {
    fn from(t: CheckTarget) -> Self {
        match t {
            CheckTarget::Classic => GradTarget::Classic,
            CheckTarget::Dilated => GradTarget::Dilated,
            CheckTarget::Asc => GradTarget::Asc,
            CheckTarget::Ratenet => GradTarget::RateNet,
            CheckTarget::Model => GradTarget::Model,
        }
    }
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, value_enum)]
    target: CheckTarget,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(1..))]
    iters: u64,
    #[arg(long, default_value = "1,2,3", value_parser = parse_seeds)]
    seeds: Seeds,
}

#[derive(Args, Debug)]
struct RatefieldArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Clone, Debug)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let seeds = s
        .split(',')
        .map(|t| t.trim().parse::<u64>().map_err(|e| format!("bad seed '{t}': {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if seeds.is_empty() {
        return Err("at least one seed is required".into());
    }
    Ok(Seeds(seeds))
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|_| {
        let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Bench(a) => bench::run(a),
        Command::Ratefield(a) => commands::ratefield(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
