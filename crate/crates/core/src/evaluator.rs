//! Image scoring and the accept/regenerate gate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::structured::{EvaluationReply, SchemaId};
use crate::gateway::templates::ids;
use crate::gateway::{CallTrace, Gateway, StructuredCallSpec};
use crate::session::{AnalysisReport, EvaluationResult, GenerationRequest, SCORE_MAX, SCORE_MIN};

pub const SUB_SCORE_COUNT: usize = 10;

/// Unweighted mean of the ten sub-scores.
///
/// Summation runs over the sorted values so the result does not depend on
/// argument order, and is clamped to `[min, max]` to absorb rounding.
pub fn compute_overall(sub_scores: &[f64]) -> Result<f64> {
    if sub_scores.len() != SUB_SCORE_COUNT {
        return Err(Error::Arity {
            expected: SUB_SCORE_COUNT,
            actual: sub_scores.len(),
        });
    }
    if let Some(v) = sub_scores
        .iter()
        .find(|v| !v.is_finite() || !(SCORE_MIN..=SCORE_MAX).contains(*v))
    {
        return Err(Error::validation(format!("sub-score {v} outside [0, 10]")));
    }
    let mut sorted = sub_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / SUB_SCORE_COUNT as f64;
    Ok(mean.clamp(sorted[0], sorted[SUB_SCORE_COUNT - 1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Accept,
    Regenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: Decision,
    pub overall: f64,
    pub threshold: f64,
}

/// ACCEPT iff `overall >= threshold`.
pub fn render_verdict(eval: &EvaluationResult, threshold: f64) -> Verdict {
    let decision = if eval.overall >= threshold {
        Decision::Accept
    } else {
        Decision::Regenerate
    };
    Verdict {
        decision,
        overall: eval.overall,
        threshold,
    }
}

/// Suggestions are required exactly when some sub-score falls below the
/// threshold or an element is missing.
pub fn suggestions_required(sub_scores: &[f64], missing: &[String], threshold: f64) -> bool {
    sub_scores.iter().any(|s| *s < threshold) || !missing.is_empty()
}

/// Fallback text when the model omits suggestions that the gate needs.
pub fn synthesize_suggestions(eval: &EvaluationResult, threshold: f64) -> String {
    let weak: Vec<&str> = EvaluationResult::SUB_SCORE_NAMES
        .iter()
        .zip(eval.sub_scores())
        .filter(|(_, s)| *s < threshold)
        .map(|(n, _)| *n)
        .collect();
    let mut parts = Vec::new();
    if !eval.missing_elements.is_empty() {
        parts.push(format!(
            "Include the missing elements: {}.",
            eval.missing_elements.join(", ")
        ));
    }
    if !weak.is_empty() {
        parts.push(format!(
            "Improve {}.",
            weak.iter()
                .map(|n| n.replace('_', " "))
                .collect::<Vec<_>>()
                .join(", ")
        ));
    }
    parts.join(" ")
}

/// Turn a validated model reply into an [`EvaluationResult`], recomputing
/// `overall` locally and enforcing the suggestions rule.
pub fn finish_evaluation(reply: EvaluationReply, threshold: f64) -> Result<EvaluationResult> {
    let scores: Vec<f64> = reply.sub_scores().iter().map(|(_, v)| *v).collect();
    let overall = compute_overall(&scores)?;
    let missing: Vec<String> = reply
        .missing_elements
        .into_iter()
        .map(|m| m.trim().to_string())
        .filter(|m| !m.is_empty())
        .collect();
    let required = suggestions_required(&scores, &missing, threshold);
    let mut eval = EvaluationResult {
        aesthetic: reply.aesthetic,
        alignment: reply.alignment,
        missing_elements: missing,
        improvement_suggestions: String::new(),
        overall,
        switch_to_generator: reply.switch_to_generator,
    };
    if required {
        eval.improvement_suggestions = if reply.improvement_suggestions.trim().is_empty() {
            synthesize_suggestions(&eval, threshold)
        } else {
            reply.improvement_suggestions
        };
    }
    eval.validate()?;
    Ok(eval)
}

/// Score an image against the request and its analysis report.
pub async fn evaluate(
    gateway: &Gateway,
    image: &[u8],
    request: &GenerationRequest,
    report: &AnalysisReport,
    threshold: f64,
    trace: &CallTrace,
) -> Result<EvaluationResult> {
    let spec = StructuredCallSpec::new(ids::EVALUATE_IMAGE, SchemaId::Evaluation)
        .var("prompt", request.prompt.clone())
        .var(
            "analysis_report_json",
            serde_json::to_string(report).expect("report serializes"),
        )
        .attach(image.to_vec());
    let reply: EvaluationReply = gateway.chat_typed(spec, trace).await?;
    finish_evaluation(reply, threshold)
}
