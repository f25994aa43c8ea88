//! Domain types shared by every agent, and the session state machine.
//!
//! A [`SessionState`] is an immutable snapshot: every transition returns a new
//! value. The orchestrator only changes state by appending events (see
//! [`crate::event`]), so a live session and a replayed one fold through the
//! same transitions.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Deserializer, Serialize};

use crate::artifact::ArtifactRef;
use crate::error::{Error, Result};

pub const SCORE_MIN: f64 = 0.0;
pub const SCORE_MAX: f64 = 10.0;

// ---------------------------------------------------------------------------
// Identifiers

/// Opaque, lexicographically sortable session identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SessionId(String);

static ID_COUNTER: AtomicU64 = AtomicU64::new(0);

impl SessionId {
    /// Millisecond clock prefix, then a process-wide counter and a random tail.
    pub fn generate() -> Self {
        let ms = chrono::Utc::now().timestamp_millis().max(0) as u64;
        let n = ID_COUNTER.fetch_add(1, Ordering::Relaxed) & 0xff_ffff;
        let tail: u16 = rand::random();
        SessionId(format!("{ms:012x}{n:06x}{tail:04x}"))
    }

    pub fn parse(s: &str) -> Result<Self> {
        let ok = !s.is_empty()
            && s.len() <= 64
            && s.bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
        if ok {
            Ok(SessionId(s.to_string()))
        } else {
            Err(Error::validation(format!("invalid session id `{s}`")))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for SessionId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        SessionId::parse(&s)
    }
}

impl From<SessionId> for String {
    fn from(id: SessionId) -> String {
        id.0
    }
}

// ---------------------------------------------------------------------------
// Request

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CreativityLevel {
    #[serde(alias = "low")]
    Low,
    #[default]
    #[serde(alias = "medium")]
    Medium,
    #[serde(alias = "high")]
    High,
}

impl CreativityLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            CreativityLevel::Low => "LOW",
            CreativityLevel::Medium => "MEDIUM",
            CreativityLevel::High => "HIGH",
        }
    }
}

impl fmt::Display for CreativityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CreativityLevel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Ok(CreativityLevel::Low),
            "medium" => Ok(CreativityLevel::Medium),
            "high" => Ok(CreativityLevel::High),
            other => Err(Error::validation(format!("unknown creativity level `{other}`"))),
        }
    }
}

/// Per-request replacements for the run configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_regen: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    #[serde(default)]
    pub reference_image: Option<ArtifactRef>,
    #[serde(default)]
    pub creativity_level: CreativityLevel,
    #[serde(default)]
    pub interactive: bool,
    #[serde(default)]
    pub overrides: Option<RunOverrides>,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, creativity_level: CreativityLevel) -> Self {
        GenerationRequest {
            prompt: prompt.into(),
            reference_image: None,
            creativity_level,
            interactive: false,
            overrides: None,
        }
    }

    pub fn interactive(mut self, on: bool) -> Self {
        self.interactive = on;
        self
    }

    pub fn with_reference(mut self, image: ArtifactRef) -> Self {
        self.reference_image = Some(image);
        self
    }

    pub fn with_overrides(mut self, overrides: RunOverrides) -> Self {
        self.overrides = Some(overrides);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompt.trim().is_empty() {
            return Err(Error::validation("prompt must not be empty"));
        }
        if let Some(t) = self.overrides.as_ref().and_then(|o| o.threshold) {
            validate_threshold(t)?;
        }
        Ok(())
    }

    pub fn threshold_or(&self, default: f64) -> f64 {
        self.overrides
            .as_ref()
            .and_then(|o| o.threshold)
            .unwrap_or(default)
    }

    pub fn max_regen_or(&self, default: u32) -> u32 {
        self.overrides
            .as_ref()
            .and_then(|o| o.max_regen)
            .unwrap_or(default)
    }
}

pub fn validate_threshold(t: f64) -> Result<()> {
    if t.is_finite() && (SCORE_MIN..=SCORE_MAX).contains(&t) {
        Ok(())
    } else {
        Err(Error::validation(format!("threshold {t} outside [0, 10]")))
    }
}

// ---------------------------------------------------------------------------
// Analysis report

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MainSubject {
    pub name: String,
    #[serde(default)]
    pub attributes: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifiedElements {
    pub main_subjects: Vec<MainSubject>,
    #[serde(default)]
    pub references: Option<String>,
}

/// The eight aspects the interpreter fills in. Every key is always present.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreativityFills {
    pub background: String,
    pub composition: String,
    pub color_harmony: String,
    pub lighting: String,
    pub focus_sharpness: String,
    pub emotional_impact: String,
    pub uniqueness_creativity: String,
    pub visual_style: String,
}

impl CreativityFills {
    pub const KEYS: [&'static str; 8] = [
        "background",
        "composition",
        "color_harmony",
        "lighting",
        "focus_sharpness",
        "emotional_impact",
        "uniqueness_creativity",
        "visual_style",
    ];

    pub fn entries(&self) -> [(&'static str, &str); 8] {
        [
            ("background", &self.background),
            ("composition", &self.composition),
            ("color_harmony", &self.color_harmony),
            ("lighting", &self.lighting),
            ("focus_sharpness", &self.focus_sharpness),
            ("emotional_impact", &self.emotional_impact),
            ("uniqueness_creativity", &self.uniqueness_creativity),
            ("visual_style", &self.visual_style),
        ]
    }

    /// Draft fills may omit keys; missing ones become empty strings.
    fn deserialize_lenient<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let map: Option<std::collections::BTreeMap<String, serde_json::Value>> =
            Option::deserialize(d)?;
        let map = map.unwrap_or_default();
        let get = |k: &str| match map.get(k) {
            Some(serde_json::Value::String(s)) => s.clone(),
            _ => String::new(),
        };
        Ok(CreativityFills {
            background: get("background"),
            composition: get("composition"),
            color_harmony: get("color_harmony"),
            lighting: get("lighting"),
            focus_sharpness: get("focus_sharpness"),
            emotional_impact: get("emotional_impact"),
            uniqueness_creativity: get("uniqueness_creativity"),
            visual_style: get("visual_style"),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ResolutionSource {
    #[default]
    Pending,
    Human,
    ModelFill,
    Literal,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub source: ResolutionSource,
    pub answer: String,
}

impl Resolution {
    pub fn pending() -> Self {
        Resolution::default()
    }

    pub fn new(source: ResolutionSource, answer: impl Into<String>) -> Self {
        Resolution {
            source,
            answer: answer.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmbiguousElement {
    pub element: String,
    pub reason: String,
    pub clarification_questions: Vec<String>,
    #[serde(default)]
    pub resolution: Resolution,
}

impl AmbiguousElement {
    pub fn is_pending(&self) -> bool {
        self.resolution.source == ResolutionSource::Pending
    }

    pub fn validate(&self) -> Result<()> {
        if self.element.trim().is_empty() {
            return Err(Error::validation("ambiguous element name is empty"));
        }
        if self.clarification_questions.is_empty() {
            return Err(Error::validation(format!(
                "ambiguous element `{}` has no clarification questions",
                self.element
            )));
        }
        let pending = self.is_pending();
        let empty = self.resolution.answer.trim().is_empty();
        if pending != empty {
            return Err(Error::validation(format!(
                "ambiguous element `{}`: PENDING iff answer is empty",
                self.element
            )));
        }
        Ok(())
    }
}

/// Interpreter output before every ambiguity is resolved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftAnalysis {
    pub identified_elements: IdentifiedElements,
    #[serde(default, deserialize_with = "CreativityFills::deserialize_lenient")]
    pub creativity_fills: CreativityFills,
    #[serde(default)]
    pub ambiguous_elements: Vec<AmbiguousElement>,
    #[serde(default)]
    pub detailed_prompt: String,
}

impl DraftAnalysis {
    pub fn pending(&self) -> impl Iterator<Item = &AmbiguousElement> {
        self.ambiguous_elements.iter().filter(|a| a.is_pending())
    }

    pub fn has_pending(&self) -> bool {
        self.pending().next().is_some()
    }

    pub fn subject_names(&self) -> Vec<&str> {
        self.identified_elements
            .main_subjects
            .iter()
            .map(|s| s.name.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub identified_elements: IdentifiedElements,
    pub creativity_fills: CreativityFills,
    pub ambiguous_elements: Vec<AmbiguousElement>,
    pub detailed_prompt: String,
}

impl AnalysisReport {
    pub fn validate(&self) -> Result<()> {
        if self.detailed_prompt.trim().is_empty() {
            return Err(Error::validation("detailed_prompt is empty"));
        }
        for a in &self.ambiguous_elements {
            a.validate()?;
            if a.is_pending() {
                return Err(Error::validation(format!(
                    "finalized report still has PENDING element `{}`",
                    a.element
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Plan

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskKind {
    Generate,
    Edit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EditMode {
    #[serde(alias = "add")]
    Add,
    #[serde(alias = "replace")]
    Replace,
    #[serde(alias = "remove")]
    Remove,
}

impl EditMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EditMode::Add => "ADD",
            EditMode::Replace => "REPLACE",
            EditMode::Remove => "REMOVE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditSpec {
    pub mode: EditMode,
    pub target_expression: String,
    #[serde(default)]
    pub mask: Option<ArtifactRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationPlan {
    pub task_kind: TaskKind,
    pub selected_model: String,
    pub generating_prompt: String,
    #[serde(default)]
    pub reference_content_image: Option<ArtifactRef>,
    #[serde(default)]
    pub reference_style_image: Option<ArtifactRef>,
    #[serde(default)]
    pub edit_spec: Option<EditSpec>,
    pub reasoning: String,
    pub confidence: f64,
}

impl GenerationPlan {
    pub fn validate(&self) -> Result<()> {
        if self.generating_prompt.trim().is_empty() {
            return Err(Error::validation("generating_prompt is empty"));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::validation(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        match self.task_kind {
            TaskKind::Edit => {
                if self.edit_spec.is_none() {
                    return Err(Error::validation("EDIT plan without edit_spec"));
                }
                if self.reference_content_image.is_none() {
                    return Err(Error::validation("EDIT plan without reference_content_image"));
                }
            }
            TaskKind::Generate => {
                if self.edit_spec.is_some() {
                    return Err(Error::validation("GENERATE plan carries an edit_spec"));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AestheticScores {
    pub composition: f64,
    pub color_harmony: f64,
    pub lighting_exposure: f64,
    pub focus_sharpness: f64,
    pub emotional_impact: f64,
    pub uniqueness_creativity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentScores {
    pub main_subjects_presence: f64,
    pub spatial_accuracy: f64,
    pub style_adherence: f64,
    pub background_representation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub aesthetic: AestheticScores,
    pub alignment: AlignmentScores,
    pub missing_elements: Vec<String>,
    pub improvement_suggestions: String,
    pub overall: f64,
    /// Set when the evaluator judges the editing backend unable to satisfy the request.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub switch_to_generator: bool,
}

impl EvaluationResult {
    pub const SUB_SCORE_NAMES: [&'static str; 10] = [
        "composition",
        "color_harmony",
        "lighting_exposure",
        "focus_sharpness",
        "emotional_impact",
        "uniqueness_creativity",
        "main_subjects_presence",
        "spatial_accuracy",
        "style_adherence",
        "background_representation",
    ];

    /// Aesthetic scores first, then alignment, in declaration order.
    pub fn sub_scores(&self) -> [f64; 10] {
        let a = &self.aesthetic;
        let b = &self.alignment;
        [
            a.composition,
            a.color_harmony,
            a.lighting_exposure,
            a.focus_sharpness,
            a.emotional_impact,
            a.uniqueness_creativity,
            b.main_subjects_presence,
            b.spatial_accuracy,
            b.style_adherence,
            b.background_representation,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in Self::SUB_SCORE_NAMES.iter().zip(self.sub_scores()) {
            if !v.is_finite() || !(SCORE_MIN..=SCORE_MAX).contains(&v) {
                return Err(Error::validation(format!("{name} = {v} outside [0, 10]")));
            }
        }
        let mean = self.sub_scores().iter().sum::<f64>() / 10.0;
        if (self.overall - mean).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "overall {} is not the mean {mean} of the sub-scores",
                self.overall
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Session

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub plan: GenerationPlan,
    pub image: ArtifactRef,
    pub evaluation: EvaluationResult,
    #[serde(default)]
    pub user_feedback: Option<String>,
    /// Region drawn by the user alongside their feedback on this turn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canvas_mask: Option<ArtifactRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionStatus {
    Interpreting,
    AwaitingClarification,
    Generating,
    Evaluating,
    AwaitingFeedback,
    Done,
    Failed,
}

impl SessionStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, SessionStatus::Done | SessionStatus::Failed)
    }
}

/// Clarification exchange still open, or answered but not yet folded into a report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingClarification {
    pub draft: DraftAnalysis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<Vec<ClarificationAnswer>>,
}

/// A turn whose plan (and possibly image) exist but whose evaluation does not yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnInProgress {
    pub plan: GenerationPlan,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ArtifactRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClarificationAnswer {
    pub element: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: SessionId,
    pub request: GenerationRequest,
    pub report: Option<AnalysisReport>,
    pub turns: Vec<Turn>,
    pub regen_count: u32,
    pub status: SessionStatus,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub accepted_by_user: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clarification: Option<PendingClarification>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_progress: Option<TurnInProgress>,
}

/// Outcome of the loop guard evaluated after each scored turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LoopDecision {
    StopAccepted,
    StopExhausted,
    Continue,
}

pub fn new_session(request: GenerationRequest) -> Result<SessionState> {
    new_session_with_id(SessionId::generate(), request)
}

pub fn new_session_with_id(id: SessionId, request: GenerationRequest) -> Result<SessionState> {
    request.validate()?;
    Ok(SessionState {
        id,
        request,
        report: None,
        turns: Vec::new(),
        regen_count: 0,
        status: SessionStatus::Interpreting,
        accepted_by_user: false,
        clarification: None,
        in_progress: None,
    })
}

/// Pure loop guard: accept on `overall >= threshold`, otherwise stop once the
/// regeneration budget is spent.
pub fn decide(last_overall: f64, regen_count: u32, threshold: f64, max_regen: u32) -> LoopDecision {
    if last_overall >= threshold {
        LoopDecision::StopAccepted
    } else if regen_count >= max_regen {
        LoopDecision::StopExhausted
    } else {
        LoopDecision::Continue
    }
}

impl SessionState {
    pub fn last_turn(&self) -> Option<&Turn> {
        self.turns.last()
    }

    pub fn should_continue(&self, threshold: f64, max_regen: u32) -> Result<LoopDecision> {
        let last = self
            .last_turn()
            .ok_or_else(|| Error::state("should_continue called before the first evaluation"))?;
        Ok(decide(
            last.evaluation.overall,
            self.regen_count,
            threshold,
            max_regen,
        ))
    }

    pub fn record_turn(
        &self,
        plan: GenerationPlan,
        image: ArtifactRef,
        evaluation: EvaluationResult,
        feedback: Option<String>,
    ) -> Result<SessionState> {
        if !matches!(
            self.status,
            SessionStatus::Generating | SessionStatus::Evaluating
        ) {
            return Err(Error::state(format!(
                "cannot record a turn while {:?}",
                self.status
            )));
        }
        let mut next = self.clone();
        next.turns.push(Turn {
            plan,
            image,
            evaluation,
            user_feedback: feedback,
            canvas_mask: None,
        });
        next.regen_count = (next.turns.len() - 1) as u32;
        next.status = SessionStatus::Evaluating;
        next.in_progress = None;
        Ok(next)
    }

    pub fn with_status(&self, status: SessionStatus) -> SessionState {
        let mut next = self.clone();
        next.status = status;
        next
    }

    /// Check the structural invariants that hold at every event boundary.
    pub fn check_invariants(&self) -> Result<()> {
        if !self.turns.is_empty() && self.regen_count as usize != self.turns.len() - 1 {
            return Err(Error::state(format!(
                "regen_count {} disagrees with {} turns",
                self.regen_count,
                self.turns.len()
            )));
        }
        if self.status == SessionStatus::Done && self.turns.is_empty() {
            return Err(Error::state("DONE session without turns"));
        }
        if let Some(r) = &self.report {
            r.validate()?;
        }
        Ok(())
    }
}
