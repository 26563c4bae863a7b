//! `nss`: run the service, train and classify offline, generate and replay
//! synthetic traffic, move models between data directories.

mod lab;
mod models;
mod offline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or unusable input files; exit code 2.
    Usage(String),
    /// Anything that went wrong while doing the work; exit code 1.
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Usage(m) | Self::Runtime(m) => m,
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub fn usage(msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(msg.to_string())
}

pub fn runtime(msg: impl std::fmt::Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

#[derive(Parser)]
#[command(name = "nss", version, about = "Network state identification service")]
struct Cli {
    /// Emit JSON on stdout instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the management service.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `listen` from the config.
        #[arg(long)]
        listen: Option<std::net::SocketAddr>,
        /// Overrides `data_dir` from the config.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Train a model from a labeled feature CSV.
    Train(offline::TrainArgs),
    /// Classify rows of a feature CSV with a model file.
    Classify(offline::ClassifyArgs),
    /// Write a labeled feature CSV fixture.
    Dataset(offline::DatasetArgs),
    /// Generate a synthetic counter trace.
    Synth(lab::SynthArgs),
    /// Run a synthetic SNMP agent.
    Agent(lab::AgentArgs),
    /// Replay a trace to stdout or into a running service.
    Replay(lab::ReplayArgs),
    /// Copy a model out of a data directory as a portable file.
    ExportModel(models::ExportArgs),
    /// Add a portable model file to a data directory.
    ImportModel(models::ImportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.json;
    let result = match cli.command {
        Command::Serve { config, listen, data_dir } => serve(config, listen, data_dir),
        Command::Train(a) => offline::train(&a, json),
        Command::Classify(a) => offline::classify(&a, json),
        Command::Dataset(a) => offline::dataset(&a, json),
        Command::Synth(a) => lab::synth(&a, json),
        Command::Agent(a) => runtime_block(lab::agent(a, json)),
        Command::Replay(a) => runtime_block(lab::replay(a, json)),
        Command::ExportModel(a) => models::export(&a, json),
        Command::ImportModel(a) => models::import(&a, json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nss: {}", e.message().replace('\n', " "));
            ExitCode::from(e.code())
        }
    }
}

fn runtime_block(fut: impl std::future::Future<Output = CliResult>) -> CliResult {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(runtime)?
        .block_on(fut)
}

/// Prints one JSON value as a line.
pub fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string(value).expect("serializable"));
}

fn serve(config: PathBuf, listen: Option<std::net::SocketAddr>, data_dir: Option<PathBuf>) -> CliResult {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let mut cfg = nss_service::ServiceConfig::load(&config).map_err(usage)?;
    if let Some(l) = listen {
        cfg.listen = l;
    }
    if let Some(d) = data_dir {
        cfg.data_dir = d;
    }
    runtime_block(async move {
        let mut handle = nss_service::start(cfg).await.map_err(runtime)?;
        eprintln!("nss: listening on {}", handle.url());
        tokio::select! {
            r = handle.wait() => r.map_err(runtime)?,
            _ = shutdown_signal() => {}
        }
        handle.shutdown().await;
        Ok(())
    })
}

pub async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}
