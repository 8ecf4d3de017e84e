use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thinned_mfld::lv::{make_dataset_with, DatasetOptions, LvParams};
use thinned_mfld_harness::aggregate::{aggregate, write_summaries};
use thinned_mfld_harness::config::parse_seeds;
use thinned_mfld_harness::record::{read_records, write_dataset};
use thinned_mfld_harness::{run_experiment, Experiment, ExperimentConfig, HarnessError, Method, Overrides};

#[derive(Parser)]
#[command(name = "tmfld", about = "Cost-vs-accuracy experiments for thinned mean-field Langevin dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// MMD quantization of a Gaussian mixture.
    Quantize(RunArgs),
    /// Online teacher-student training of a mean-field network.
    Teach(RunArgs),
    /// PrO posterior for the Lotka-Volterra model.
    Pro(RunArgs),
    /// Mean-field game solved by forward-backward sweeps.
    Mfg(RunArgs),
    /// Integration error or drift discrepancy of a single coreset draw.
    ThinBench(RunArgs),
    /// Mean, standard error and median over seeds at each cost checkpoint.
    Aggregate {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes a synthetic Lotka-Volterra dataset as `tau,y1,y2`.
    Dataset {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Use the noise-free dynamics and observations.
        #[arg(long)]
        noise_free: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `a..b` (end exclusive), `a..=b` or `a,b,c`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    g: Option<u32>,
    /// Iterations (sweeps for mfg).
    #[arg(long)]
    iterations: Option<u64>,
}

fn run(experiment: Experiment, args: RunArgs) -> Result<(), HarnessError> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_path(path, Some(experiment))?,
        None => ExperimentConfig::defaults(experiment),
    };
    let overrides = Overrides {
        n: args.n,
        method: args.method.as_deref().map(str::parse::<Method>).transpose()?,
        g: args.g,
        iterations: args.iterations,
        seeds: args.seeds.as_deref().map(parse_seeds).transpose()?,
        out: args.out,
    };
    cfg.override_with(&overrides)?;
    let summary = run_experiment(&cfg)?;
    eprintln!("wrote {} rows for {} seeds", summary.rows_written, cfg.seeds.len());
    if summary.failures.is_empty() {
        Ok(())
    } else {
        Err(HarnessError::SeedsFailed {
            failed: summary.failures.len(),
            total: cfg.seeds.len(),
        })
    }
}

fn dispatch(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Quantize(a) => run(Experiment::Quantize, a),
        Command::Teach(a) => run(Experiment::Teach, a),
        Command::Pro(a) => run(Experiment::Pro, a),
        Command::Mfg(a) => run(Experiment::Mfg, a),
        Command::ThinBench(a) => run(Experiment::ThinBench, a),
        Command::Aggregate { csv, out } => {
            let rows = read_records(&csv)?;
            let (summaries, skipped) = aggregate(&rows);
            for k in &skipped {
                eprintln!(
                    "warning: skipping {} {} N={} g={} {} at cost {}: fewer than two seeds",
                    k.experiment,
                    k.method,
                    k.n,
                    k.g,
                    k.metric_name,
                    k.cumulative_cost()
                );
            }
            let file = std::fs::File::create(&out).map_err(|source| HarnessError::Io { path: out.clone(), source })?;
            write_summaries(file, &summaries)
        }
        Command::Dataset { seed, out, noise_free } => {
            let opts = DatasetOptions {
                intrinsic_noise: !noise_free,
                measurement_noise: !noise_free,
            };
            let data = make_dataset_with(seed, &LvParams::data_generating(), opts)?;
            let file = std::fs::File::create(&out).map_err(|source| HarnessError::Io { path: out.clone(), source })?;
            write_dataset(file, &data)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
