//! Multi-agent text-to-image orchestration.
//!
//! An input interpreter turns a prompt into an analysis report, a generation
//! engine plans and runs a generator or editor, and a quality evaluator scores
//! the result and gates regeneration. The [`orchestrator`] drives the loop and
//! records every step in an append-only event log ([`store`]).

pub mod artifact;
pub mod config;
pub mod engine;
pub mod error;
pub mod evaluator;
pub mod event;
pub mod gateway;
pub mod interpreter;
pub mod orchestrator;
pub mod region;
pub mod session;
pub mod store;
pub mod testkit;

pub use artifact::ArtifactRef;
pub use config::AppConfig;
pub use error::{BackendError, Error, Result};
pub use evaluator::{compute_overall, render_verdict, Decision, Verdict};
pub use event::{EventKind, EventRecord};
pub use gateway::{BackendSet, CallTrace, Gateway, RetryPolicy};
pub use orchestrator::{
    AutomaticHandler, DriveOutcome, Feedback, FinalResult, InteractionHandler, Orchestrator,
    Reply, RunConfig, SuspendingHandler,
};
pub use session::*;
pub use store::Store;
