//! A fully mocked engine in a directory, for tests, benchmarks and demos.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;

use crate::error::Result;
use crate::gateway::mock::{MockHandles, MockScoring, SegmenterFallback};
use crate::gateway::{Gateway, RetryPolicy, TemplateSet};
use crate::evaluator::Verdict;
use crate::orchestrator::{Feedback, InteractionHandler, Orchestrator, Reply, RunConfig};
use crate::session::{AmbiguousElement, ClarificationAnswer, SessionId, Turn};
use crate::store::Store;

#[derive(Debug, Clone)]
pub struct RigOptions {
    pub scoring: MockScoring,
    pub segmenter_fallback: SegmenterFallback,
    pub run: RunConfig,
    pub retry: RetryPolicy,
    pub fsync: bool,
}

impl Default for RigOptions {
    fn default() -> Self {
        RigOptions {
            scoring: MockScoring::Constant { score: 9.0 },
            segmenter_fallback: SegmenterFallback::CenterBox,
            run: RunConfig {
                width: 64,
                height: 64,
                ..RunConfig::default()
            },
            retry: RetryPolicy {
                backoff_ms: 0,
                ..RetryPolicy::default()
            },
            fsync: true,
        }
    }
}

impl RigOptions {
    pub fn scoring(mut self, scoring: MockScoring) -> Self {
        self.scoring = scoring;
        self
    }

    pub fn constant(self, score: f64) -> Self {
        self.scoring(MockScoring::Constant { score })
    }

    pub fn sequence(self, scores: &[f64]) -> Self {
        self.scoring(MockScoring::Sequence {
            scores: scores.to_vec(),
        })
    }

    pub fn max_regen(mut self, n: u32) -> Self {
        self.run.max_regen = n;
        self
    }

    pub fn threshold(mut self, t: f64) -> Self {
        self.run.threshold = t;
        self
    }

    pub fn size(mut self, width: u32, height: u32) -> Self {
        self.run.width = width;
        self.run.height = height;
        self
    }

    pub fn no_fsync(mut self) -> Self {
        self.fsync = false;
        self
    }
}

pub struct MockRig {
    pub orchestrator: Arc<Orchestrator>,
    pub store: Arc<Store>,
    pub mocks: MockHandles,
}

impl MockRig {
    pub fn new(root: &Path, opts: RigOptions) -> Result<MockRig> {
        let mocks = MockHandles::new(opts.scoring, opts.segmenter_fallback);
        let gateway = Arc::new(Gateway::new(mocks.backend_set(), opts.retry, TemplateSet::builtin()));
        let mut store = Store::open(root)?;
        if !opts.fsync {
            store = store.without_fsync();
        }
        let store = Arc::new(store);
        let orchestrator = Arc::new(Orchestrator::new(gateway, store.clone(), opts.run)?);
        Ok(MockRig {
            orchestrator,
            store,
            mocks,
        })
    }
}

/// Handler that replays queued answers and feedback, then behaves like
/// [`crate::AutomaticHandler`]. Counts how often it was consulted.
#[derive(Default)]
pub struct ScriptedHandler {
    answers: Mutex<VecDeque<Vec<ClarificationAnswer>>>,
    feedback: Mutex<VecDeque<Feedback>>,
    clarify_calls: AtomicUsize,
    feedback_calls: AtomicUsize,
    asked: Mutex<Vec<Vec<AmbiguousElement>>>,
}

impl ScriptedHandler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn answers(self, answers: Vec<ClarificationAnswer>) -> Self {
        self.answers.lock().unwrap().push_back(answers);
        self
    }

    pub fn feedback(self, fb: Feedback) -> Self {
        self.feedback.lock().unwrap().push_back(fb);
        self
    }

    pub fn clarify_calls(&self) -> usize {
        self.clarify_calls.load(Ordering::SeqCst)
    }

    pub fn feedback_calls(&self) -> usize {
        self.feedback_calls.load(Ordering::SeqCst)
    }

    /// Pending elements shown at each clarification request.
    pub fn asked(&self) -> Vec<Vec<AmbiguousElement>> {
        self.asked.lock().unwrap().clone()
    }
}

#[async_trait]
impl InteractionHandler for ScriptedHandler {
    async fn ask_clarifications(
        &self,
        _: &SessionId,
        pending: &[AmbiguousElement],
    ) -> Reply<Vec<ClarificationAnswer>> {
        self.clarify_calls.fetch_add(1, Ordering::SeqCst);
        self.asked.lock().unwrap().push(pending.to_vec());
        Reply::Value(self.answers.lock().unwrap().pop_front().unwrap_or_default())
    }

    async fn request_feedback(&self, _: &SessionId, _: &Turn, _: &Verdict) -> Reply<Feedback> {
        self.feedback_calls.fetch_add(1, Ordering::SeqCst);
        Reply::Value(self.feedback.lock().unwrap().pop_front().unwrap_or_default())
    }
}

pub fn answer(element: &str, text: &str) -> ClarificationAnswer {
    ClarificationAnswer {
        element: element.to_string(),
        answer: text.to_string(),
    }
}

pub fn feedback_text(text: &str) -> Feedback {
    Feedback {
        text: Some(text.to_string()),
        ..Feedback::default()
    }
}
