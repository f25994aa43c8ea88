//! Deterministic stand-in for the chat, generator, editor and segmenter services.

use std::net::SocketAddr;

use clap::{Parser, ValueEnum};
use t2i_agents::gateway::mock::{MockScoring, SegmenterFallback};
use t2i_cli::mock_backend::{router, MockServer};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Segmenter {
    CenterBox,
    NotFound,
}

#[derive(Debug, Parser)]
#[command(name = "t2i-mock-backend", version)]
struct Args {
    #[arg(long, default_value_t = 8090)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Report this overall score for every evaluation instead of a hash-derived one.
    #[arg(long)]
    score: Option<f64>,
    #[arg(long, value_enum, default_value = "center-box")]
    segmenter: Segmenter,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let args = Args::parse();
    let scoring = match args.score {
        Some(score) => MockScoring::Constant { score },
        None => MockScoring::default(),
    };
    let segmenter = match args.segmenter {
        Segmenter::CenterBox => SegmenterFallback::CenterBox,
        Segmenter::NotFound => SegmenterFallback::NotFound,
    };
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "mock backend listening");
    axum::serve(listener, router(MockServer::new(scoring, segmenter))).await
}
