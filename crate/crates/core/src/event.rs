//! Event records and the fold that rebuilds session state from them.
//!
//! Each record's payload is a typed struct serialized to JSON, plus a `calls`
//! array listing the backend attempts made while producing it.

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::artifact::ArtifactRef;
use crate::error::{Error, Result};
use crate::evaluator::Verdict;
use crate::gateway::CallRecord;
use crate::region::RegionStage;
use crate::session::{
    new_session_with_id, AnalysisReport, ClarificationAnswer, DraftAnalysis, EvaluationResult,
    GenerationPlan, GenerationRequest, LoopDecision, PendingClarification, SessionId,
    SessionState, SessionStatus, TurnInProgress,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Request,
    Report,
    ClarifyAsk,
    ClarifyAnswer,
    Plan,
    Image,
    Eval,
    Feedback,
    Verdict,
    Done,
    Error,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Request => "REQUEST",
            EventKind::Report => "REPORT",
            EventKind::ClarifyAsk => "CLARIFY_ASK",
            EventKind::ClarifyAnswer => "CLARIFY_ANSWER",
            EventKind::Plan => "PLAN",
            EventKind::Image => "IMAGE",
            EventKind::Eval => "EVAL",
            EventKind::Feedback => "FEEDBACK",
            EventKind::Verdict => "VERDICT",
            EventKind::Done => "DONE",
            EventKind::Error => "ERROR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub ts: DateTime<Utc>,
    pub session_id: SessionId,
    pub seq: u64,
    pub kind: EventKind,
    pub payload: Value,
}

impl EventRecord {
    /// Build a record; `calls` is merged into the payload object.
    pub fn new<P: Serialize>(
        session_id: &SessionId,
        seq: u64,
        kind: EventKind,
        payload: &P,
        calls: Vec<CallRecord>,
    ) -> EventRecord {
        let mut payload = serde_json::to_value(payload).expect("payload serializes");
        if let Value::Object(map) = &mut payload {
            map.insert(
                "calls".to_string(),
                serde_json::to_value(calls).expect("calls serialize"),
            );
        }
        EventRecord {
            ts: Utc::now(),
            session_id: session_id.clone(),
            seq,
            kind,
            payload,
        }
    }

    pub fn decode<P: DeserializeOwned>(&self) -> Result<P> {
        serde_json::from_value(self.payload.clone()).map_err(|e| Error::CorruptLog {
            session_id: self.session_id.to_string(),
            seq: self.seq,
            message: format!("{} payload: {e}", self.kind.as_str()),
        })
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.payload
            .get("calls")
            .and_then(|c| serde_json::from_value(c.clone()).ok())
            .unwrap_or_default()
    }

    /// The record without fields that legitimately vary between identical
    /// runs (wall-clock time and measured latency).
    pub fn without_timing(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("record serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("ts");
        }
        if let Some(p) = v.get_mut("payload").and_then(Value::as_object_mut) {
            p.remove("latency_ms");
        }
        v
    }
}

/// Run parameters pinned when the session is created.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionSettings {
    pub threshold: f64,
    pub max_regen: u32,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestPayload {
    pub request: GenerationRequest,
    pub settings: SessionSettings,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClarifyAskPayload {
    pub draft: DraftAnalysis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClarifyAnswerPayload {
    pub answers: Vec<ClarificationAnswer>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportPayload {
    pub report: AnalysisReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionInfo {
    pub stage: RegionStage,
    pub attempted: Vec<RegionStage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanPayload {
    pub plan: GenerationPlan,
    pub seed: u64,
    pub task_reasoning: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<RegionInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePayload {
    pub image: ArtifactRef,
    pub seed: u64,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPayload {
    pub evaluation: EvaluationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictPayload {
    pub verdict: Verdict,
    pub decision: LoopDecision,
    pub regen_count: u32,
    pub awaiting_feedback: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackPayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default)]
    pub accept: bool,
    #[serde(default)]
    pub regenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canvas_mask: Option<ArtifactRef>,
}

impl FeedbackPayload {
    /// Text or a drawn region asks for changes, as does an explicit flag.
    pub fn wants_changes(&self) -> bool {
        self.regenerate
            || self.canvas_mask.is_some()
            || self.text.as_deref().is_some_and(|t| !t.trim().is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DonePayload {
    pub accepted: bool,
    #[serde(default)]
    pub accepted_by_user: bool,
    pub image: ArtifactRef,
    pub turns: usize,
    pub overall: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorPayload {
    /// Error category, e.g. `backend`, `format`, `region_extraction`.
    pub error: String,
    pub message: String,
    /// No turn completed, so the session fails.
    pub fatal: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attempted_stages: Vec<RegionStage>,
}

pub fn error_category(e: &Error) -> &'static str {
    match e {
        Error::Validation(_) => "validation",
        Error::State(_) => "state",
        Error::Busy(_) => "busy",
        Error::Backend(_) => "backend",
        Error::Format { .. } => "format",
        Error::ScoreRange { .. } => "score_range",
        Error::UnknownElement(_) => "unknown_element",
        Error::RegionExtraction { .. } => "region_extraction",
        Error::Arity { .. } => "arity",
        Error::DimensionMismatch { .. } => "dimension_mismatch",
        Error::Storage(_) => "storage",
        Error::Sequence { .. } => "sequence",
        Error::UnknownSession(_) => "unknown_session",
        Error::CorruptLog { .. } => "corrupt_log",
        Error::Pipeline { .. } => "pipeline",
        Error::Image(_) => "image",
        Error::Config(_) => "config",
    }
}

fn corrupt(rec: &EventRecord, message: impl Into<String>) -> Error {
    Error::CorruptLog {
        session_id: rec.session_id.to_string(),
        seq: rec.seq,
        message: message.into(),
    }
}

/// Apply one record to the state it follows.
pub fn apply(state: Option<SessionState>, rec: &EventRecord) -> Result<SessionState> {
    let Some(state) = state else {
        if rec.kind != EventKind::Request {
            return Err(corrupt(rec, "log does not start with REQUEST"));
        }
        let p: RequestPayload = rec.decode()?;
        return new_session_with_id(rec.session_id.clone(), p.request)
            .map_err(|e| corrupt(rec, e.to_string()));
    };
    if state.status.is_terminal() {
        return Err(corrupt(rec, format!("{} after terminal status", rec.kind.as_str())));
    }
    let mut next = state;
    match rec.kind {
        EventKind::Request => return Err(corrupt(rec, "duplicate REQUEST")),
        EventKind::ClarifyAsk => {
            let p: ClarifyAskPayload = rec.decode()?;
            next.clarification = Some(PendingClarification {
                draft: p.draft,
                answers: None,
            });
            next.status = SessionStatus::AwaitingClarification;
        }
        EventKind::ClarifyAnswer => {
            let p: ClarifyAnswerPayload = rec.decode()?;
            let c = next
                .clarification
                .as_mut()
                .ok_or_else(|| corrupt(rec, "CLARIFY_ANSWER without CLARIFY_ASK"))?;
            c.answers = Some(p.answers);
            next.status = SessionStatus::Interpreting;
        }
        EventKind::Report => {
            let p: ReportPayload = rec.decode()?;
            next.report = Some(p.report);
            next.clarification = None;
            next.status = SessionStatus::Generating;
        }
        EventKind::Plan => {
            let p: PlanPayload = rec.decode()?;
            if next.report.is_none() {
                return Err(corrupt(rec, "PLAN before REPORT"));
            }
            next.in_progress = Some(TurnInProgress {
                plan: p.plan,
                seed: p.seed,
                image: None,
            });
            next.status = SessionStatus::Generating;
        }
        EventKind::Image => {
            let p: ImagePayload = rec.decode()?;
            let t = next
                .in_progress
                .as_mut()
                .ok_or_else(|| corrupt(rec, "IMAGE without PLAN"))?;
            t.image = Some(p.image);
        }
        EventKind::Eval => {
            let p: EvalPayload = rec.decode()?;
            let t = next
                .in_progress
                .clone()
                .ok_or_else(|| corrupt(rec, "EVAL without PLAN"))?;
            let image = t.image.ok_or_else(|| corrupt(rec, "EVAL without IMAGE"))?;
            next = next
                .record_turn(t.plan, image, p.evaluation, None)
                .map_err(|e| corrupt(rec, e.to_string()))?;
        }
        EventKind::Verdict => {
            let p: VerdictPayload = rec.decode()?;
            if next.turns.is_empty() {
                return Err(corrupt(rec, "VERDICT before any turn"));
            }
            if p.awaiting_feedback {
                next.status = SessionStatus::AwaitingFeedback;
            }
        }
        EventKind::Feedback => {
            let p: FeedbackPayload = rec.decode()?;
            if next.status != SessionStatus::AwaitingFeedback {
                return Err(corrupt(rec, "FEEDBACK while not awaiting feedback"));
            }
            let last = next
                .turns
                .last_mut()
                .ok_or_else(|| corrupt(rec, "FEEDBACK before any turn"))?;
            last.user_feedback = p.text.filter(|t| !t.trim().is_empty());
            last.canvas_mask = p.canvas_mask;
            if p.accept && !p.regenerate {
                next.accepted_by_user = true;
            }
            next.status = SessionStatus::Evaluating;
        }
        EventKind::Done => {
            let p: DonePayload = rec.decode()?;
            if next.turns.is_empty() {
                return Err(corrupt(rec, "DONE without turns"));
            }
            next.accepted_by_user = next.accepted_by_user || p.accepted_by_user;
            next.in_progress = None;
            next.clarification = None;
            next.status = SessionStatus::Done;
        }
        EventKind::Error => {
            let p: ErrorPayload = rec.decode()?;
            next.in_progress = None;
            if p.fatal {
                next.clarification = None;
                next.status = SessionStatus::Failed;
            }
        }
    }
    Ok(next)
}

/// Fold a complete log. Sequence numbers must run 1, 2, 3, ... without gaps.
pub fn replay(records: &[EventRecord]) -> Result<SessionState> {
    let first = records
        .first()
        .ok_or_else(|| Error::UnknownSession("<empty log>".to_string()))?;
    let mut state = None;
    for (i, rec) in records.iter().enumerate() {
        let expected = i as u64 + 1;
        if rec.seq != expected {
            return Err(Error::Sequence {
                session_id: first.session_id.to_string(),
                expected,
                actual: rec.seq,
            });
        }
        if rec.session_id != first.session_id {
            return Err(corrupt(rec, "record belongs to another session"));
        }
        state = Some(apply(state, rec)?);
    }
    Ok(state.expect("non-empty log"))
}
