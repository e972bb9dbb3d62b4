//! Command-line entry point wiring the detection pipeline stages.

mod config;
mod fixture;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand};

use bgplens::as_profile::NoiseKind;
use bgplens::error::CoreError;

use config::{ProviderConfig, RunConfig};

#[derive(Parser)]
#[command(
    name = "bgplens",
    version,
    about = "BGP route-change anomaly detection over AS semantic embeddings"
)]
struct Cli {
    /// Run configuration (JSON). Required by every subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for data-parallel stages.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the configured provider kind.
    #[arg(long, global = true, value_parser = ["mock", "http"])]
    provider: Option<String>,

    /// Overrides the configured detection window, in seconds.
    #[arg(long, global = true)]
    window_secs: Option<i64>,

    /// Overrides the configured reduced embedding dimension.
    #[arg(long, global = true)]
    reduced_dim: Option<usize>,

    /// Generates the synthetic benchmark scenario into a directory and exits.
    #[arg(long, value_name = "DIR")]
    gen_fixture: Option<PathBuf>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Build prefix trees from the RIB and extract route changes.
    Monitor,
    /// Render AS description segments from relationships and metadata.
    Profile,
    /// Embed description segments into per-AS vectors.
    Embed,
    /// Train the contrastive reduction network.
    TrainCdr,
    /// Apply the reduction model to the embedding store.
    Reduce,
    /// Score route changes and flag anomalies.
    Detect,
    /// Aggregate flagged changes into attributed events and write the report.
    Aggregate,
    /// Apply relationship noise and write a perturbed relationship file.
    Perturb {
        /// delete, add or flip
        #[arg(long)]
        noise: String,
        /// Fraction of edges to perturb, in [0, 1].
        #[arg(long)]
        ratio: f64,
        /// Output path for the perturbed relationship file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage in order and print the report path.
    RunAll,
}

/// Exit codes: 1 usage/config, 2 data error, 3 provider error.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return match core {
                CoreError::Provider { .. } => 3,
                CoreError::InvalidArgument(_) | CoreError::InsufficientSupervision => 1,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    // Unclassified failures default to config/usage problems: missing
    // files, bad config values, malformed flags.
    1
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| anyhow!("--config PATH is required for this subcommand"))?;
    let mut config = RunConfig::load(path)?;
    if let Some(jobs) = cli.jobs {
        config.jobs = Some(jobs);
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(window) = cli.window_secs {
        config.window_secs = window;
    }
    if let Some(dim) = cli.reduced_dim {
        config.reduced_dim = dim;
    }
    if let Some(kind) = &cli.provider {
        config.provider = match kind.as_str() {
            "mock" => match config.provider {
                mock @ ProviderConfig::Mock { .. } => mock,
                _ => ProviderConfig::Mock {
                    dim: 64,
                    seed: config.seed,
                },
            },
            _ => match config.provider {
                http @ ProviderConfig::Http { .. } => http,
                _ => ProviderConfig::Http {
                    endpoint: None,
                    model: None,
                    expected_dim: None,
                    timeout_secs: 30,
                },
            },
        };
    }
    config.validate()?;
    if let Some(jobs) = config.jobs {
        if let Err(msg) = bgplens::set_parallelism(jobs) {
            eprintln!("warning: {msg}");
        }
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(dir) = &cli.gen_fixture {
        fixture::generate(dir, cli.seed.unwrap_or(42))?;
        println!("{}", dir.join("config.json").display());
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(anyhow!("no subcommand given (try --help)"));
    };
    let config = load_config(&cli)?;
    match command {
        Command::Monitor => stages::monitor(&config),
        Command::Profile => stages::profile(&config),
        Command::Embed => stages::embed(&config),
        Command::TrainCdr => stages::train_cdr(&config),
        Command::Reduce => stages::reduce_stage(&config),
        Command::Detect => stages::detect_stage(&config),
        Command::Aggregate => stages::aggregate(&config),
        Command::Perturb { noise, ratio, out } => {
            let noise: NoiseKind = noise.parse()?;
            stages::perturb(&config, noise, *ratio, out)
        }
        Command::RunAll => stages::run_all(&config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
