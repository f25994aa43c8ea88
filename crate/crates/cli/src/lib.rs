//! Front ends for the orchestration engine: the `t2i-agents` command line
//! (single runs, batch runs, the HTTP service) and a mock backend server.

pub mod api;
pub mod batch;
pub mod cli;
pub mod console;
pub mod mock_backend;

use std::path::Path;
use std::sync::Arc;

use t2i_agents::gateway::mock::MockHandles;
use t2i_agents::{AppConfig, Orchestrator, Store};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] t2i_agents::Error),

    #[error("{0}")]
    Input(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Build the backends from `config` and open the store under `data_dir`.
pub fn build_orchestrator(config: &AppConfig, data_dir: &Path) -> Result<(Arc<Orchestrator>, MockHandles), CliError> {
    let (gateway, mocks) = config.build_gateway()?;
    let store = Store::open(data_dir)?;
    let orch = Orchestrator::new(Arc::new(gateway), Arc::new(store), config.run)?;
    Ok((Arc::new(orch), mocks))
}

pub fn load_config(path: Option<&Path>) -> Result<AppConfig, CliError> {
    match path {
        Some(p) => Ok(AppConfig::load(p)?),
        None => Ok(AppConfig::default()),
    }
}
