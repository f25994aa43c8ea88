//! Command line definition and the three subcommands.

use std::io::{BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use t2i_agents::artifact::{decode_png, PNG_MEDIA_TYPE};
use t2i_agents::session::validate_threshold;
use t2i_agents::{AutomaticHandler, CreativityLevel, GenerationRequest, InteractionHandler, RunOverrides};

use crate::api::{self, ApiOptions};
use crate::batch::{self, BatchOptions};
use crate::console::ConsoleHandler;
use crate::{build_orchestrator, load_config, CliError};

#[derive(Debug, Parser)]
#[command(name = "t2i-agents", version, about = "Interpret, generate, evaluate and regenerate images from text")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one prompt to completion and write the final image.
    Run(RunArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Run a JSONL file of prompts unattended.
    Batch(BatchArgs),
}

fn parse_creativity(s: &str) -> Result<CreativityLevel, String> {
    s.parse().map_err(|e: t2i_agents::Error| e.to_string())
}

fn parse_threshold(s: &str) -> Result<f64, String> {
    let t: f64 = s.parse().map_err(|e| format!("{e}"))?;
    validate_threshold(t).map_err(|e| e.to_string())?;
    Ok(t)
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    #[arg(long)]
    pub prompt: String,
    /// PNG passed to the interpreter as a reference image.
    #[arg(long)]
    pub ref_image: Option<PathBuf>,
    /// low, medium or high (defaults to the configured level).
    #[arg(long, value_parser = parse_creativity)]
    pub creativity: Option<CreativityLevel>,
    /// Ask clarifications and feedback on the terminal.
    #[arg(long)]
    pub interactive: bool,
    #[arg(long, value_parser = parse_threshold)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub max_regen: Option<u32>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ServeArgs {
    /// Overrides the configured port.
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory with the built browser UI, served at `/`.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
    /// Session store when the config names none.
    #[arg(long, default_value = "data")]
    pub data_dir: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct BatchArgs {
    #[arg(long)]
    pub prompts: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sessions in flight at once.
    #[arg(long, default_value_t = 4)]
    pub parallel: usize,
    #[arg(long, value_parser = parse_creativity)]
    pub creativity: Option<CreativityLevel>,
}

pub const FINAL_IMAGE: &str = "final.png";
pub const SESSION_FILE: &str = "session.json";

/// Parse arguments and run. Usage errors exit 2, failures exit 1.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let default_level = if matches!(cli.command, Command::Serve(_)) { "info" } else { "warn" };
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level)),
        )
        .with_writer(std::io::stderr)
        .try_init();
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(1);
        }
    };
    let result = runtime.block_on(async {
        match cli.command {
            Command::Run(a) => run(a).await,
            Command::Serve(a) => serve(a).await,
            Command::Batch(a) => run_batch(a).await,
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

pub async fn run(a: RunArgs) -> Result<(), CliError> {
    let config = load_config(a.config.as_deref())?;
    let data_dir = config.data_dir.clone().unwrap_or_else(|| a.out.join("data"));
    std::fs::create_dir_all(&a.out)?;
    let (orch, _mocks) = build_orchestrator(&config, &data_dir)?;

    let level = a.creativity.unwrap_or(config.run.creativity_default);
    let mut request = GenerationRequest::new(a.prompt, level).interactive(a.interactive);
    if a.threshold.is_some() || a.max_regen.is_some() {
        request = request.with_overrides(RunOverrides {
            threshold: a.threshold,
            max_regen: a.max_regen,
        });
    }
    if let Some(path) = &a.ref_image {
        let bytes = std::fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        decode_png(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        request = request.with_reference(orch.store().store_artifact(&bytes, PNG_MEDIA_TYPE)?);
    }

    let id = orch.create_session(request, None)?;
    let console;
    let handler: &dyn InteractionHandler = if a.interactive {
        console = ConsoleHandler::new(BufReader::new(std::io::stdin()), std::io::stdout());
        &console
    } else {
        &AutomaticHandler
    };
    let outcome = orch.drive(&id, handler).await;
    let state = orch.store().replay_session(&id)?;
    write_json(&a.out.join(SESSION_FILE), &state)?;
    outcome?;
    let result = orch.result(&id)?;
    std::fs::write(a.out.join(FINAL_IMAGE), orch.store().load(&result.image)?)?;
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, &result).map_err(|e| CliError::Input(e.to_string()))?;
    writeln!(stdout)?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub async fn serve(a: ServeArgs) -> Result<(), CliError> {
    let config = load_config(a.config.as_deref())?;
    let data_dir = config.data_dir.clone().unwrap_or(a.data_dir);
    let (orch, _mocks) = build_orchestrator(&config, &data_dir)?;
    let resumed = api::resume_incomplete(&orch)?;
    if resumed > 0 {
        tracing::info!(resumed, "resumed unfinished sessions");
    }
    let app = api::router(
        orch,
        &ApiOptions {
            cors_origins: config.server.cors_origins.clone(),
            ui_dir: a.ui_dir,
        },
    );
    let port = a.port.unwrap_or(config.server.port);
    let addr: SocketAddr = format!("{}:{port}", a.host)
        .parse()
        .map_err(|e| CliError::Input(format!("bad listen address: {e}")))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, data_dir = %data_dir.display(), "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

pub async fn run_batch(a: BatchArgs) -> Result<(), CliError> {
    let config = load_config(a.config.as_deref())?;
    let text = std::fs::read_to_string(&a.prompts)
        .map_err(|e| CliError::Input(format!("{}: {e}", a.prompts.display())))?;
    let items = batch::parse_prompts(&text)?;
    let (orch, _mocks) = build_orchestrator(&config, &a.out.join("data"))?;
    let opts = BatchOptions {
        parallel: a.parallel,
        creativity: a.creativity.unwrap_or(config.run.creativity_default),
    };
    let records = batch::run_batch(orch, items, &opts).await;
    let path = batch::write_results(&a.out, &records)?;
    let accepted = records.iter().filter(|r| r.accepted).count();
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    eprintln!(
        "{} prompts, {accepted} accepted, {failed} failed; results in {}",
        records.len(),
        path.display()
    );
    Ok(())
}
