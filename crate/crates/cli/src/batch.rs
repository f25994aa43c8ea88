//! Run many prompts through the automatic pipeline with bounded parallelism.
//!
//! Input is JSONL, one `{"prompt": ..., "id"?: ...}` per line (a bare JSON
//! string is accepted too). Output is `results.jsonl` in input order.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use t2i_agents::{AutomaticHandler, CreativityLevel, Error, GenerationRequest, Orchestrator, SessionId};

use crate::CliError;

pub const RESULTS_FILE: &str = "results.jsonl";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum InputLine {
    Bare(String),
    Item {
        #[serde(default)]
        id: Option<String>,
        prompt: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub id: Option<String>,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub prompt: String,
    pub session_id: SessionId,
    pub accepted: bool,
    pub turns: usize,
    pub overall: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn parse_prompts(text: &str) -> Result<Vec<BatchItem>, CliError> {
    let mut items = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: InputLine = serde_json::from_str(line)
            .map_err(|e| CliError::Input(format!("line {}: {e}", n + 1)))?;
        let item = match parsed {
            InputLine::Bare(prompt) => BatchItem { id: None, prompt },
            InputLine::Item { id, prompt } => BatchItem { id, prompt },
        };
        if item.prompt.trim().is_empty() {
            return Err(CliError::Input(format!("line {}: empty prompt", n + 1)));
        }
        items.push(item);
    }
    Ok(items)
}

pub fn session_id_for(index: usize) -> SessionId {
    SessionId::parse(&format!("batch-{:05}", index + 1)).expect("valid session id")
}

#[derive(Debug, Clone)]
pub struct BatchOptions {
    pub parallel: usize,
    pub creativity: CreativityLevel,
}

async fn run_one(orch: &Orchestrator, index: usize, item: BatchItem, creativity: CreativityLevel) -> BatchRecord {
    let id = session_id_for(index);
    let request = GenerationRequest::new(item.prompt.clone(), creativity);
    let outcome = if orch.store().session_exists(&id) {
        // Left over from an interrupted batch: finish it rather than start over.
        match orch.drive(&id, &AutomaticHandler).await {
            Ok(_) => orch.result(&id),
            Err(e) => Err(e),
        }
    } else {
        orch.run_pipeline_with_id(request, Some(id.clone()), &AutomaticHandler).await
    };
    match outcome {
        Ok(r) => BatchRecord {
            id: item.id,
            prompt: item.prompt,
            session_id: id,
            accepted: r.accepted,
            turns: r.turns,
            overall: Some(r.overall),
            error: None,
        },
        Err(e) => {
            let turns = orch.store().replay_session(&id).map(|s| s.turns.len()).unwrap_or(0);
            BatchRecord {
                id: item.id,
                prompt: item.prompt,
                session_id: id,
                accepted: false,
                turns,
                overall: None,
                error: Some(root_message(&e)),
            }
        }
    }
}

fn root_message(e: &Error) -> String {
    match e {
        Error::Pipeline { source, .. } => source.to_string(),
        other => other.to_string(),
    }
}

pub async fn run_batch(orch: Arc<Orchestrator>, items: Vec<BatchItem>, opts: &BatchOptions) -> Vec<BatchRecord> {
    let parallel = opts.parallel.max(1);
    let creativity = opts.creativity;
    let mut records: Vec<(usize, BatchRecord)> = stream::iter(items.into_iter().enumerate())
        .map(|(i, item)| {
            let orch = orch.clone();
            async move { (i, run_one(&orch, i, item, creativity).await) }
        })
        .buffer_unordered(parallel)
        .collect()
        .await;
    records.sort_by_key(|(i, _)| *i);
    records.into_iter().map(|(_, r)| r).collect()
}

pub fn write_results(out: &Path, records: &[BatchRecord]) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(out)?;
    let path = out.join(RESULTS_FILE);
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
    for r in records {
        serde_json::to_writer(&mut f, r).map_err(|e| CliError::Input(e.to_string()))?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(path)
}
