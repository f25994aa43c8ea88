//! The interpret → generate → evaluate → regenerate loop.
//!
//! The orchestrator never mutates session state directly. Each step appends
//! an event and folds it (see [`crate::event::apply`]), so the next step is a
//! function of the log alone. Driving a session again after a crash or a
//! suspension resumes at the first step whose event is missing.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::artifact::{png_dimensions, ArtifactRef};
use crate::engine::{
    attach_mask, execute_plan, identify_task, prepare_plan, TaskContext, DEFAULT_HEIGHT,
    DEFAULT_WIDTH,
};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, render_verdict, Decision, Verdict};
use crate::event::{
    apply, error_category, ClarifyAnswerPayload, ClarifyAskPayload, DonePayload, ErrorPayload,
    EvalPayload, EventKind, EventRecord, ImagePayload, PlanPayload, RegionInfo, ReportPayload,
    RequestPayload, SessionSettings, VerdictPayload,
};
use crate::gateway::{CallTrace, Gateway, GenerateParams};
use crate::interpreter::{
    analyze_input, apply_answers, finalize_report, resolve_ambiguities, InterpreterLimits,
};
use crate::session::{
    validate_threshold, AmbiguousElement, ClarificationAnswer, CreativityLevel, GenerationRequest,
    LoopDecision, SessionId, SessionState, SessionStatus, TaskKind, Turn,
};
use crate::store::Store;

pub use crate::event::FeedbackPayload as Feedback;

pub const DEFAULT_THRESHOLD: f64 = 8.0;
pub const DEFAULT_MAX_REGEN: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub threshold: f64,
    pub max_regen: u32,
    pub creativity_default: CreativityLevel,
    pub width: u32,
    pub height: u32,
    pub limits: InterpreterLimits,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            threshold: DEFAULT_THRESHOLD,
            max_regen: DEFAULT_MAX_REGEN,
            creativity_default: CreativityLevel::Medium,
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            limits: InterpreterLimits::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        validate_threshold(self.threshold)?;
        if self.width == 0 || self.height == 0 {
            return Err(Error::validation("image width and height must be positive"));
        }
        Ok(())
    }
}

/// A handler either answers now or asks the orchestrator to park the session
/// until the answer arrives through another channel (e.g. the HTTP API).
#[derive(Debug, Clone, PartialEq)]
pub enum Reply<T> {
    Value(T),
    Suspend,
}

/// Where a human can step in. Only consulted for interactive requests.
#[async_trait]
pub trait InteractionHandler: Send + Sync {
    async fn ask_clarifications(
        &self,
        session: &SessionId,
        pending: &[AmbiguousElement],
    ) -> Reply<Vec<ClarificationAnswer>>;

    /// Called after each scored turn while regenerations remain. The
    /// returned feedback may carry a canvas mask already stored as an artifact.
    async fn request_feedback(&self, session: &SessionId, turn: &Turn, verdict: &Verdict) -> Reply<Feedback>;
}

/// Answers nothing and never blocks.
pub struct AutomaticHandler;

#[async_trait]
impl InteractionHandler for AutomaticHandler {
    async fn ask_clarifications(&self, _: &SessionId, _: &[AmbiguousElement]) -> Reply<Vec<ClarificationAnswer>> {
        Reply::Value(Vec::new())
    }

    async fn request_feedback(&self, _: &SessionId, _: &Turn, _: &Verdict) -> Reply<Feedback> {
        Reply::Value(Feedback::default())
    }
}

/// Parks the session at every interaction point.
pub struct SuspendingHandler;

#[async_trait]
impl InteractionHandler for SuspendingHandler {
    async fn ask_clarifications(&self, _: &SessionId, _: &[AmbiguousElement]) -> Reply<Vec<ClarificationAnswer>> {
        Reply::Suspend
    }

    async fn request_feedback(&self, _: &SessionId, _: &Turn, _: &Verdict) -> Reply<Feedback> {
        Reply::Suspend
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalResult {
    pub session_id: SessionId,
    pub image: ArtifactRef,
    pub accepted: bool,
    pub accepted_by_user: bool,
    pub turns: usize,
    pub overall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DriveOutcome {
    Finished(FinalResult),
    Suspended(SessionStatus),
}

/// Per-turn generation seed, derived from the session id.
pub fn seed_for(id: &SessionId, turn: usize) -> u64 {
    let d = Sha256::digest(format!("{id}:{turn}").as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Context for the next regeneration: the last turn's suggestions, feedback,
/// image and the evaluator's switch-to-generator flag.
pub fn regeneration_context(state: &SessionState) -> Result<TaskContext> {
    let last = state
        .last_turn()
        .ok_or_else(|| Error::state("no completed turn to regenerate from"))?;
    let report = state
        .report
        .clone()
        .ok_or_else(|| Error::state("session has no analysis report"))?;
    let non_empty = |s: &str| Some(s.to_string()).filter(|s| !s.trim().is_empty());
    Ok(TaskContext {
        report,
        request: state.request.clone(),
        improvement_suggestions: non_empty(&last.evaluation.improvement_suggestions),
        user_feedback: last.user_feedback.as_deref().and_then(non_empty),
        previous_image: Some(last.image.clone()),
        forced_generate: last.evaluation.switch_to_generator,
        canvas_mask: last.canvas_mask.clone(),
    })
}

fn is_infrastructure(e: &Error) -> bool {
    matches!(
        e,
        Error::Storage(_) | Error::Sequence { .. } | Error::CorruptLog { .. } | Error::UnknownSession(_)
    )
}

pub struct Orchestrator {
    gateway: Arc<Gateway>,
    store: Arc<Store>,
    config: RunConfig,
    locks: Mutex<HashMap<SessionId, Arc<tokio::sync::Mutex<()>>>>,
}

impl Orchestrator {
    pub fn new(gateway: Arc<Gateway>, store: Arc<Store>, config: RunConfig) -> Result<Self> {
        config.validate()?;
        Ok(Orchestrator {
            gateway,
            store,
            config,
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    fn session_lock(&self, id: &SessionId) -> Arc<tokio::sync::Mutex<()>> {
        self.locks
            .lock()
            .unwrap()
            .entry(id.clone())
            .or_default()
            .clone()
    }

    /// Record a new session. Run parameters are pinned in its first event:
    /// request overrides win over the configured defaults.
    pub fn create_session(&self, request: GenerationRequest, id: Option<SessionId>) -> Result<SessionId> {
        request.validate()?;
        let id = id.unwrap_or_else(SessionId::generate);
        if self.store.session_exists(&id) {
            return Err(Error::state(format!("session `{id}` already exists")));
        }
        let settings = SessionSettings {
            threshold: request.threshold_or(self.config.threshold),
            max_regen: request.max_regen_or(self.config.max_regen),
            width: self.config.width,
            height: self.config.height,
        };
        validate_threshold(settings.threshold)?;
        let rec = EventRecord::new(
            &id,
            1,
            EventKind::Request,
            &RequestPayload { request, settings },
            Vec::new(),
        );
        self.store.append_event(&rec)?;
        Ok(id)
    }

    /// Create a session and drive it to completion.
    pub async fn run_pipeline(
        &self,
        request: GenerationRequest,
        handler: &dyn InteractionHandler,
    ) -> Result<FinalResult> {
        self.run_pipeline_with_id(request, None, handler).await
    }

    pub async fn run_pipeline_with_id(
        &self,
        request: GenerationRequest,
        id: Option<SessionId>,
        handler: &dyn InteractionHandler,
    ) -> Result<FinalResult> {
        let id = self.create_session(request, id)?;
        match self.drive(&id, handler).await? {
            DriveOutcome::Finished(r) => Ok(r),
            DriveOutcome::Suspended(status) => Err(Error::state(format!(
                "session `{id}` suspended in {status:?}; the handler declined to answer"
            ))),
        }
    }

    /// Advance a session until it finishes or the handler suspends it.
    pub async fn drive(&self, id: &SessionId, handler: &dyn InteractionHandler) -> Result<DriveOutcome> {
        let lock = self.session_lock(id);
        let _guard = lock.lock().await;
        let events = self.store.read_events(id)?;
        let mut run = Run::load(self, id.clone(), events)?;
        run.drive(handler).await
    }

    /// Like [`Orchestrator::drive`], also returning the in-memory state the
    /// run ended with, whether or not it failed.
    pub async fn drive_observed(
        &self,
        id: &SessionId,
        handler: &dyn InteractionHandler,
    ) -> (Result<DriveOutcome>, Option<SessionState>) {
        let lock = self.session_lock(id);
        let _guard = lock.lock().await;
        let mut run = match self.store.read_events(id).and_then(|ev| Run::load(self, id.clone(), ev)) {
            Ok(run) => run,
            Err(e) => return (Err(e), None),
        };
        let outcome = run.drive(handler).await;
        (outcome, Some(run.state))
    }

    /// Record clarification answers for a parked session without driving it.
    pub fn submit_answers(&self, id: &SessionId, answers: Vec<ClarificationAnswer>) -> Result<()> {
        let lock = self.session_lock(id);
        let _guard = lock
            .try_lock()
            .map_err(|_| Error::Busy(id.to_string()))?;
        let mut run = Run::load(self, id.clone(), self.store.read_events(id)?)?;
        if run.state.status != SessionStatus::AwaitingClarification {
            return Err(Error::state(format!(
                "session is {:?}, not AWAITING_CLARIFICATION",
                run.state.status
            )));
        }
        let draft = &run.state.clarification.as_ref().expect("status implies draft").draft;
        apply_answers(draft, &answers)?;
        run.append(EventKind::ClarifyAnswer, &ClarifyAnswerPayload { answers })
    }

    /// Record feedback for a parked session without driving it.
    pub fn submit_feedback(&self, id: &SessionId, feedback: Feedback) -> Result<()> {
        let lock = self.session_lock(id);
        let _guard = lock
            .try_lock()
            .map_err(|_| Error::Busy(id.to_string()))?;
        let mut run = Run::load(self, id.clone(), self.store.read_events(id)?)?;
        if run.state.status != SessionStatus::AwaitingFeedback {
            return Err(Error::state(format!(
                "session is {:?}, not AWAITING_FEEDBACK",
                run.state.status
            )));
        }
        if let Some(mask) = &feedback.canvas_mask {
            let last = run.state.last_turn().expect("awaiting feedback implies a turn");
            let image_dims = png_dimensions(&self.store.load(&last.image)?)?;
            let mask_dims = png_dimensions(&self.store.load(mask)?)?;
            if image_dims != mask_dims {
                return Err(Error::DimensionMismatch {
                    image: image_dims,
                    mask: mask_dims,
                });
            }
        }
        run.append(EventKind::Feedback, &feedback)
    }

    /// Outcome of a finished session, read from its DONE event.
    pub fn result(&self, id: &SessionId) -> Result<FinalResult> {
        Run::load(self, id.clone(), self.store.read_events(id)?)?.result_from_done()
    }

    pub async fn resume_with_answers(
        &self,
        id: &SessionId,
        answers: Vec<ClarificationAnswer>,
        handler: &dyn InteractionHandler,
    ) -> Result<DriveOutcome> {
        self.submit_answers(id, answers)?;
        self.drive(id, handler).await
    }

    pub async fn resume_with_feedback(
        &self,
        id: &SessionId,
        feedback: Feedback,
        handler: &dyn InteractionHandler,
    ) -> Result<DriveOutcome> {
        self.submit_feedback(id, feedback)?;
        self.drive(id, handler).await
    }
}

/// One drive of one session: the log so far, the folded state, and the
/// trace of backend attempts since the last append.
struct Run<'a> {
    orch: &'a Orchestrator,
    id: SessionId,
    events: Vec<EventRecord>,
    state: SessionState,
    settings: SessionSettings,
    trace: CallTrace,
}

enum Step {
    Continue,
    Stop(DriveOutcome),
}

impl<'a> Run<'a> {
    fn load(orch: &'a Orchestrator, id: SessionId, events: Vec<EventRecord>) -> Result<Run<'a>> {
        let settings = events
            .first()
            .ok_or_else(|| Error::UnknownSession(id.to_string()))?
            .decode::<RequestPayload>()?
            .settings;
        let state = crate::event::replay(&events)?;
        Ok(Run {
            orch,
            id,
            events,
            state,
            settings,
            trace: CallTrace::new(),
        })
    }

    fn next_seq(&self) -> u64 {
        self.events.len() as u64 + 1
    }

    fn append<P: Serialize>(&mut self, kind: EventKind, payload: &P) -> Result<()> {
        let rec = EventRecord::new(&self.id, self.next_seq(), kind, payload, self.trace.drain());
        let next = apply(Some(self.state.clone()), &rec)?;
        self.orch.store.append_event(&rec)?;
        self.state = next;
        self.events.push(rec);
        Ok(())
    }

    fn gateway(&self) -> &Gateway {
        &self.orch.gateway
    }

    fn store(&self) -> &Store {
        &self.orch.store
    }

    fn last_verdict(&self) -> Result<VerdictPayload> {
        self.events
            .iter()
            .rev()
            .find(|e| e.kind == EventKind::Verdict)
            .ok_or_else(|| Error::state("no verdict recorded"))?
            .decode()
    }

    async fn drive(&mut self, handler: &dyn InteractionHandler) -> Result<DriveOutcome> {
        loop {
            self.trace.set_key_base(format!("{}-{}", self.id, self.next_seq()));
            match self.step(handler).await {
                Ok(Step::Continue) => {}
                Ok(Step::Stop(outcome)) => return Ok(outcome),
                Err(e) if is_infrastructure(&e) => return Err(e),
                Err(e) => return self.fail(e),
            }
        }
    }

    /// Record an agent failure. With at least one finished turn the session
    /// still ends DONE on the last good image.
    fn fail(&mut self, e: Error) -> Result<DriveOutcome> {
        tracing::warn!(session = %self.id, error = %e, "pipeline step failed");
        let fatal = self.state.turns.is_empty();
        let attempted_stages = match &e {
            Error::RegionExtraction { attempted } => attempted.clone(),
            _ => Vec::new(),
        };
        self.append(
            EventKind::Error,
            &ErrorPayload {
                error: error_category(&e).to_string(),
                message: e.to_string(),
                fatal,
                attempted_stages,
            },
        )?;
        if fatal {
            return Err(Error::Pipeline {
                session_id: self.id.to_string(),
                source: Box::new(e),
            });
        }
        self.finish(false, false)
    }

    fn finish(&mut self, accepted: bool, by_user: bool) -> Result<DriveOutcome> {
        let last = self.state.last_turn().expect("finish needs a turn").clone();
        self.append(
            EventKind::Done,
            &DonePayload {
                accepted,
                accepted_by_user: by_user,
                image: last.image.clone(),
                turns: self.state.turns.len(),
                overall: last.evaluation.overall,
            },
        )?;
        Ok(DriveOutcome::Finished(self.result_from_done()?))
    }

    fn result_from_done(&self) -> Result<FinalResult> {
        let done: DonePayload = self
            .events
            .last()
            .filter(|e| e.kind == EventKind::Done)
            .ok_or_else(|| Error::state("session is not DONE"))?
            .decode()?;
        Ok(FinalResult {
            session_id: self.id.clone(),
            image: done.image,
            accepted: done.accepted,
            accepted_by_user: self.state.accepted_by_user,
            turns: done.turns,
            overall: done.overall,
        })
    }

    async fn step(&mut self, handler: &dyn InteractionHandler) -> Result<Step> {
        let last = self.events.last().expect("log starts with REQUEST").clone();
        match last.kind {
            EventKind::Request => self.analyze().await,
            EventKind::ClarifyAsk => self.ask(handler).await,
            EventKind::ClarifyAnswer => self.report().await,
            EventKind::Report => self.plan().await,
            EventKind::Plan => self.execute().await,
            EventKind::Image => self.evaluate().await,
            EventKind::Eval => self.verdict(),
            EventKind::Verdict => {
                let v: VerdictPayload = last.decode()?;
                if v.awaiting_feedback {
                    self.feedback(handler, &v.verdict).await
                } else {
                    self.follow(v.decision).await
                }
            }
            EventKind::Feedback => {
                let fb: Feedback = last.decode()?;
                let v = self.last_verdict()?;
                if fb.accept && !fb.regenerate {
                    let accepted = v.verdict.decision == Decision::Accept;
                    return Ok(Step::Stop(self.finish(accepted, true)?));
                }
                if fb.wants_changes() && self.state.regen_count < self.settings.max_regen {
                    return self.plan().await;
                }
                self.follow(v.decision).await
            }
            EventKind::Done => Ok(Step::Stop(DriveOutcome::Finished(self.result_from_done()?))),
            EventKind::Error => {
                let p: ErrorPayload = last.decode()?;
                if p.fatal {
                    // Re-driving a failed session reports the original failure.
                    Err(Error::Pipeline {
                        session_id: self.id.to_string(),
                        source: Box::new(Error::state(format!("session failed earlier: {}", p.message))),
                    })
                } else {
                    Ok(Step::Stop(self.finish(false, false)?))
                }
            }
        }
    }

    async fn follow(&mut self, decision: LoopDecision) -> Result<Step> {
        match decision {
            LoopDecision::StopAccepted => Ok(Step::Stop(self.finish(true, false)?)),
            LoopDecision::StopExhausted => Ok(Step::Stop(self.finish(false, false)?)),
            LoopDecision::Continue => self.plan().await,
        }
    }

    async fn analyze(&mut self) -> Result<Step> {
        let request = self.state.request.clone();
        let reference = match &request.reference_image {
            Some(r) => Some(self.store().load(r)?),
            None => None,
        };
        let draft = analyze_input(
            self.gateway(),
            &request,
            reference.as_deref(),
            self.orch.config.limits,
            &self.trace,
        )
        .await?;
        if request.interactive && draft.has_pending() {
            self.append(EventKind::ClarifyAsk, &ClarifyAskPayload { draft })?;
            return Ok(Step::Continue);
        }
        let resolved = resolve_ambiguities(self.gateway(), &draft, &request, &[], &self.trace).await?;
        let report = finalize_report(self.gateway(), &resolved, &request, &self.trace).await?;
        self.append(EventKind::Report, &ReportPayload { report })?;
        Ok(Step::Continue)
    }

    async fn ask(&mut self, handler: &dyn InteractionHandler) -> Result<Step> {
        let draft = self
            .state
            .clarification
            .as_ref()
            .ok_or_else(|| Error::state("no clarification pending"))?
            .draft
            .clone();
        let pending: Vec<AmbiguousElement> = draft.pending().cloned().collect();
        match handler.ask_clarifications(&self.id, &pending).await {
            Reply::Suspend => Ok(Step::Stop(DriveOutcome::Suspended(self.state.status))),
            Reply::Value(answers) => {
                // Keep only answers that name a pending element; skipping is allowed.
                let answers: Vec<ClarificationAnswer> = answers
                    .into_iter()
                    .filter(|a| {
                        let ok = !a.answer.trim().is_empty()
                            && apply_answers(&draft, std::slice::from_ref(a)).is_ok();
                        if !ok {
                            tracing::warn!(element = %a.element, "ignoring unusable clarification answer");
                        }
                        ok
                    })
                    .collect();
                self.append(EventKind::ClarifyAnswer, &ClarifyAnswerPayload { answers })?;
                Ok(Step::Continue)
            }
        }
    }

    async fn report(&mut self) -> Result<Step> {
        let c = self
            .state
            .clarification
            .clone()
            .ok_or_else(|| Error::state("no clarification to finalize"))?;
        let answers = c.answers.unwrap_or_default();
        let request = self.state.request.clone();
        let resolved = resolve_ambiguities(self.gateway(), &c.draft, &request, &answers, &self.trace).await?;
        let report = finalize_report(self.gateway(), &resolved, &request, &self.trace).await?;
        self.append(EventKind::Report, &ReportPayload { report })?;
        Ok(Step::Continue)
    }

    async fn plan(&mut self) -> Result<Step> {
        let ctx = if self.state.turns.is_empty() {
            let report = self
                .state
                .report
                .clone()
                .ok_or_else(|| Error::state("planning before the report exists"))?;
            TaskContext::first_turn(report, self.state.request.clone())
        } else {
            regeneration_context(&self.state)?
        };
        let decision = identify_task(self.gateway(), &ctx, &self.trace).await?;
        let mut plan = prepare_plan(self.gateway(), &ctx, decision.task_kind, &self.trace).await?;
        let mut region = None;
        if plan.task_kind == TaskKind::Edit {
            let (with_mask, outcome) = attach_mask(self.gateway(), self.store(), &plan, &ctx, &self.trace).await?;
            plan = with_mask;
            region = Some(RegionInfo {
                stage: outcome.stage,
                attempted: outcome.attempted,
            });
        }
        let seed = seed_for(&self.id, self.state.turns.len());
        self.append(
            EventKind::Plan,
            &PlanPayload {
                plan,
                seed,
                task_reasoning: decision.reasoning,
                region,
            },
        )?;
        Ok(Step::Continue)
    }

    async fn execute(&mut self) -> Result<Step> {
        let t = self
            .state
            .in_progress
            .clone()
            .ok_or_else(|| Error::state("no plan to execute"))?;
        let params = GenerateParams {
            width: self.settings.width,
            height: self.settings.height,
            seed: t.seed,
        };
        let exec = execute_plan(self.gateway(), self.store(), &t.plan, &params, &self.trace).await?;
        self.append(
            EventKind::Image,
            &ImagePayload {
                image: exec.image,
                seed: t.seed,
                latency_ms: exec.latency_ms,
            },
        )?;
        Ok(Step::Continue)
    }

    async fn evaluate(&mut self) -> Result<Step> {
        let image_ref = self
            .state
            .in_progress
            .as_ref()
            .and_then(|t| t.image.clone())
            .ok_or_else(|| Error::state("no image to evaluate"))?;
        let report = self
            .state
            .report
            .clone()
            .ok_or_else(|| Error::state("evaluating without a report"))?;
        let image = self.store().load(&image_ref)?;
        let evaluation = evaluate(
            self.gateway(),
            &image,
            &self.state.request,
            &report,
            self.settings.threshold,
            &self.trace,
        )
        .await?;
        self.append(EventKind::Eval, &EvalPayload { evaluation })?;
        Ok(Step::Continue)
    }

    fn verdict(&mut self) -> Result<Step> {
        let last = self.state.last_turn().ok_or_else(|| Error::state("no turn to judge"))?;
        let verdict = render_verdict(&last.evaluation, self.settings.threshold);
        let decision = self
            .state
            .should_continue(self.settings.threshold, self.settings.max_regen)?;
        let awaiting_feedback =
            self.state.request.interactive && self.state.regen_count < self.settings.max_regen;
        self.append(
            EventKind::Verdict,
            &VerdictPayload {
                verdict,
                decision,
                regen_count: self.state.regen_count,
                awaiting_feedback,
            },
        )?;
        Ok(Step::Continue)
    }

    async fn feedback(&mut self, handler: &dyn InteractionHandler, verdict: &Verdict) -> Result<Step> {
        let turn = self.state.last_turn().expect("verdict implies a turn").clone();
        match handler.request_feedback(&self.id, &turn, verdict).await {
            Reply::Suspend => Ok(Step::Stop(DriveOutcome::Suspended(self.state.status))),
            Reply::Value(fb) => {
                self.append(EventKind::Feedback, &fb)?;
                Ok(Step::Continue)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.threshold, 8.0);
        assert_eq!(c.max_regen, 3);
        assert_eq!(c.creativity_default, CreativityLevel::Medium);
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        let id = SessionId::parse("abc").unwrap();
        assert_eq!(seed_for(&id, 0), seed_for(&id, 0));
        assert_ne!(seed_for(&id, 0), seed_for(&id, 1));
    }
}
