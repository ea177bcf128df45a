use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use segal::data::save_dataset;
use segal::orchestrator::{emit_results, run_experiment, summarize_dir, DatasetSource, ExperimentConfig};
use segal::Error;
use segal_service::{serve, AnnotationService};

#[derive(Parser)]
#[command(name = "segal", version, about = "Active learning for image segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its result files.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the config's synthetic dataset as PNG files plus a manifest.
    Synth {
        #[arg(long)]
        config: PathBuf,
        /// Target directory; defaults to `<output_dir>/dataset`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print learning curves and pixels-to-target for result directories.
    Summarize {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Serve the annotation API.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
    },
}

/// A failure and the exit code it maps to.
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let cfg = ExperimentConfig::read(path).map_err(|e| Failure::Config(e.to_string()))?;
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { config, out } => {
            let cfg = load_config(&config)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let outcome = run_experiment(&cfg, Path::new("."))?;
            emit_results(&outcome, &dir)?;
            print!("{}", summarize_dir(&dir)?);
            println!("results written to {}", dir.display());
        }
        Command::Synth { config, out } => {
            let cfg = load_config(&config)?;
            let DatasetSource::Synthetic(synth) = &cfg.dataset else {
                return Err(Failure::Config("synth needs a synthetic dataset in the config".into()));
            };
            let dir = out.unwrap_or_else(|| cfg.output_dir.join("dataset"));
            let dataset = segal::data::generate_synthetic(synth)?;
            let manifest = save_dataset(&dataset, &dir)?;
            println!("{} records written, manifest {}", dataset.records.len(), manifest.display());
        }
        Command::Summarize { dir } => print!("{}", summarize_dir(&dir)?),
        Command::Serve { config, port, host } => {
            let cfg = load_config(&config)?;
            let service = AnnotationService::open(cfg, Path::new("."))?;
            let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(e.to_string()))?;
            runtime
                .block_on(serve(service, SocketAddr::new(host, port)))
                .map_err(|e| Failure::Runtime(e.to_string()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
