//! Registered output schemas for structured chat calls.
//!
//! Every schema is a serde type plus semantic checks. A reply that fails
//! either step is a [`Violation`]; the gateway re-asks with the violation
//! message appended.

use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::session::{
    AestheticScores, AlignmentScores, CreativityFills, DraftAnalysis, EditMode, TaskKind,
    SCORE_MAX, SCORE_MIN,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaId {
    Draft,
    Resolutions,
    Summary,
    TaskDecision,
    Plan,
    Boxes,
    Evaluation,
}

impl SchemaId {
    pub fn validate(self, v: &Value) -> Result<(), Violation> {
        match self {
            SchemaId::Draft => check::<DraftAnalysis>(v),
            SchemaId::Resolutions => check::<ResolutionsReply>(v),
            SchemaId::Summary => check::<SummaryReply>(v),
            SchemaId::TaskDecision => check::<TaskDecisionReply>(v),
            SchemaId::Plan => check::<PlanReply>(v),
            SchemaId::Boxes => check::<BoxesReply>(v),
            SchemaId::Evaluation => check::<EvaluationReply>(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// Not JSON, wrong shape, or a semantic rule broken.
    Format,
    /// Well-formed, but a score lies outside [0, 10].
    Range,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

impl Violation {
    pub fn format(message: impl Into<String>) -> Self {
        Violation {
            kind: ViolationKind::Format,
            message: message.into(),
        }
    }

    pub fn range(message: impl Into<String>) -> Self {
        Violation {
            kind: ViolationKind::Range,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// A typed reply with its registered schema.
pub trait StructuredOutput: DeserializeOwned {
    const SCHEMA: SchemaId;

    fn check(&self) -> Result<(), Violation> {
        Ok(())
    }
}

fn check<T: StructuredOutput>(v: &Value) -> Result<(), Violation> {
    let parsed: T = serde_json::from_value(v.clone()).map_err(|e| Violation::format(e.to_string()))?;
    parsed.check()
}

/// Find the JSON object in a model reply, tolerating code fences and chatter.
pub fn extract_json(text: &str) -> Result<Value, Violation> {
    let trimmed = text.trim();
    if let Ok(v) = serde_json::from_str::<Value>(trimmed) {
        return as_object(v);
    }
    let unfenced = trimmed
        .strip_prefix("```json")
        .or_else(|| trimmed.strip_prefix("```"))
        .and_then(|s| s.trim_end().strip_suffix("```"))
        .map(str::trim);
    if let Some(inner) = unfenced {
        if let Ok(v) = serde_json::from_str::<Value>(inner) {
            return as_object(v);
        }
    }
    match (trimmed.find('{'), trimmed.rfind('}')) {
        (Some(a), Some(b)) if a < b => serde_json::from_str::<Value>(&trimmed[a..=b])
            .map_err(|e| Violation::format(format!("reply is not valid JSON: {e}")))
            .and_then(as_object),
        _ => Err(Violation::format("reply contains no JSON object")),
    }
}

fn as_object(v: Value) -> Result<Value, Violation> {
    if v.is_object() {
        Ok(v)
    } else {
        Err(Violation::format("reply must be a JSON object"))
    }
}

// ---------------------------------------------------------------------------
// Reply types

impl StructuredOutput for DraftAnalysis {
    const SCHEMA: SchemaId = SchemaId::Draft;

    fn check(&self) -> Result<(), Violation> {
        let subjects = &self.identified_elements.main_subjects;
        if subjects.is_empty() {
            return Err(Violation::format("identified_elements.main_subjects is empty"));
        }
        if subjects.iter().any(|s| s.name.trim().is_empty()) {
            return Err(Violation::format("a main subject has an empty name"));
        }
        let mut seen = std::collections::HashSet::new();
        for a in &self.ambiguous_elements {
            if a.element.trim().is_empty() {
                return Err(Violation::format("an ambiguous element has an empty name"));
            }
            if !seen.insert(a.element.trim().to_lowercase()) {
                return Err(Violation::format(format!(
                    "ambiguous element `{}` listed twice",
                    a.element
                )));
            }
            if a.clarification_questions.iter().all(|q| q.trim().is_empty()) {
                return Err(Violation::format(format!(
                    "ambiguous element `{}` needs at least one clarification question",
                    a.element
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedItem {
    pub element: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionsReply {
    pub resolutions: Vec<ResolvedItem>,
}

impl StructuredOutput for ResolutionsReply {
    const SCHEMA: SchemaId = SchemaId::Resolutions;

    fn check(&self) -> Result<(), Violation> {
        match self.resolutions.iter().find(|r| r.answer.trim().is_empty()) {
            Some(r) => Err(Violation::format(format!(
                "resolution for `{}` is empty",
                r.element
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryReply {
    pub creativity_fills: CreativityFills,
    pub detailed_prompt: String,
}

impl StructuredOutput for SummaryReply {
    const SCHEMA: SchemaId = SchemaId::Summary;

    fn check(&self) -> Result<(), Violation> {
        if self.detailed_prompt.trim().is_empty() {
            return Err(Violation::format("detailed_prompt is empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDecisionReply {
    pub task_kind: TaskKind,
    #[serde(default)]
    pub reasoning: String,
}

impl StructuredOutput for TaskDecisionReply {
    const SCHEMA: SchemaId = SchemaId::TaskDecision;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceRole {
    #[default]
    Content,
    Style,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditReply {
    pub mode: EditMode,
    pub target_expression: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReply {
    pub generating_prompt: String,
    #[serde(default)]
    pub reasoning: String,
    pub confidence: f64,
    #[serde(default)]
    pub reference_role: ReferenceRole,
    #[serde(default)]
    pub edit: Option<EditReply>,
}

impl StructuredOutput for PlanReply {
    const SCHEMA: SchemaId = SchemaId::Plan;

    fn check(&self) -> Result<(), Violation> {
        if self.generating_prompt.trim().is_empty() {
            return Err(Violation::format("generating_prompt is empty"));
        }
        if !self.confidence.is_finite() || !(0.0..=1.0).contains(&self.confidence) {
            return Err(Violation::format(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxesReply {
    pub boxes: Vec<PixelBox>,
}

impl StructuredOutput for BoxesReply {
    const SCHEMA: SchemaId = SchemaId::Boxes;

    fn check(&self) -> Result<(), Violation> {
        let finite = self
            .boxes
            .iter()
            .all(|b| [b.x0, b.y0, b.x1, b.y1].iter().all(|c| c.is_finite()));
        if finite {
            Ok(())
        } else {
            Err(Violation::format("box coordinates must be finite numbers"))
        }
    }
}

/// Raw evaluator reply. Any `overall` the model reports is ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReply {
    pub aesthetic: AestheticScores,
    pub alignment: AlignmentScores,
    #[serde(default)]
    pub missing_elements: Vec<String>,
    #[serde(default)]
    pub improvement_suggestions: String,
    #[serde(default)]
    pub overall: Option<f64>,
    #[serde(default)]
    pub switch_to_generator: bool,
}

impl EvaluationReply {
    pub fn sub_scores(&self) -> [(&'static str, f64); 10] {
        let a = &self.aesthetic;
        let b = &self.alignment;
        [
            ("composition", a.composition),
            ("color_harmony", a.color_harmony),
            ("lighting_exposure", a.lighting_exposure),
            ("focus_sharpness", a.focus_sharpness),
            ("emotional_impact", a.emotional_impact),
            ("uniqueness_creativity", a.uniqueness_creativity),
            ("main_subjects_presence", b.main_subjects_presence),
            ("spatial_accuracy", b.spatial_accuracy),
            ("style_adherence", b.style_adherence),
            ("background_representation", b.background_representation),
        ]
    }
}

impl StructuredOutput for EvaluationReply {
    const SCHEMA: SchemaId = SchemaId::Evaluation;

    fn check(&self) -> Result<(), Violation> {
        for (name, v) in self.sub_scores() {
            if !v.is_finite() || !(SCORE_MIN..=SCORE_MAX).contains(&v) {
                return Err(Violation::range(format!(
                    "{name} = {v} is outside [0, 10]"
                )));
            }
        }
        Ok(())
    }
}
