//! Turns a raw request into a finalized [`AnalysisReport`].
//!
//! Three separate chat interactions: analyse the request, resolve the
//! ambiguities nobody answered, then summarise everything into a report.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::gateway::structured::{ResolutionsReply, SchemaId, SummaryReply, Violation};
use crate::gateway::templates::ids;
use crate::gateway::{CallTrace, Gateway, StructuredCallSpec};
use crate::session::{
    AmbiguousElement, AnalysisReport, ClarificationAnswer, CreativityLevel, DraftAnalysis,
    GenerationRequest, Resolution, ResolutionSource,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterpreterLimits {
    pub max_ambiguities: usize,
    pub max_questions: usize,
}

impl Default for InterpreterLimits {
    fn default() -> Self {
        InterpreterLimits {
            max_ambiguities: 8,
            max_questions: 3,
        }
    }
}

pub fn creativity_guidance(level: CreativityLevel) -> &'static str {
    match level {
        CreativityLevel::Low => {
            "Adhere strictly to the user's words. Do not invent subjects or details; leave aspects the user did not mention empty."
        }
        CreativityLevel::Medium => {
            "Fill unspecified aspects with moderate, conventional choices that support the user's intent."
        }
        CreativityLevel::High => {
            "Enrich the request imaginatively where the user gave little detail, while keeping every stated element."
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("domain types serialize")
}

/// Extract subjects, the eight aspects and the ambiguous elements.
pub async fn analyze_input(
    gateway: &Gateway,
    request: &GenerationRequest,
    reference: Option<&[u8]>,
    limits: InterpreterLimits,
    trace: &CallTrace,
) -> Result<DraftAnalysis> {
    request.validate()?;
    let level = request.creativity_level;
    let mut spec = StructuredCallSpec::new(ids::ANALYZE_INPUT, SchemaId::Draft)
        .var("user_prompt", request.prompt.clone())
        .var("creativity_level", level.as_str())
        .var("creativity_guidance", creativity_guidance(level))
        .var("max_ambiguities", limits.max_ambiguities.to_string())
        .var("max_questions", limits.max_questions.to_string())
        .var("has_reference", if reference.is_some() { "yes" } else { "" });
    if let Some(png) = reference {
        spec = spec.attach(png.to_vec());
    }
    let mut draft: DraftAnalysis = gateway.chat_typed(spec, trace).await?;
    draft.ambiguous_elements.truncate(limits.max_ambiguities);
    for a in &mut draft.ambiguous_elements {
        a.clarification_questions.retain(|q| !q.trim().is_empty());
        a.clarification_questions.truncate(limits.max_questions.max(1));
        a.resolution = Resolution::pending();
    }
    if reference.is_none() {
        draft.identified_elements.references = None;
    }
    Ok(draft)
}

/// Apply human answers to a draft. Fails without modifying anything if an
/// answer names an element that is not pending. A later answer for the same
/// element replaces an earlier one.
pub fn apply_answers(draft: &DraftAnalysis, answers: &[ClarificationAnswer]) -> Result<DraftAnalysis> {
    let mut next = draft.clone();
    for ans in answers {
        if ans.answer.trim().is_empty() {
            return Err(Error::validation(format!(
                "answer for `{}` is empty",
                ans.element
            )));
        }
        let wanted = ans.element.trim();
        let idx = draft
            .ambiguous_elements
            .iter()
            .position(|a| a.is_pending() && a.element.trim().eq_ignore_ascii_case(wanted))
            .ok_or_else(|| Error::UnknownElement(ans.element.clone()))?;
        next.ambiguous_elements[idx].resolution =
            Resolution::new(ResolutionSource::Human, ans.answer.clone());
    }
    Ok(next)
}

const ARTICLES: &[&str] = &["a", "an", "the"];

/// Restate an element using only the user's own words: the element as it
/// appears in the prompt, with its article when there is one.
pub fn literal_restatement(prompt: &str, element: &str) -> String {
    // ASCII folding keeps byte offsets valid for slicing the original.
    let lower = prompt.to_ascii_lowercase();
    let with_article = |start: usize, end: usize| -> String {
        let before = lower[..start].trim_end();
        let begin = ARTICLES
            .iter()
            .find(|a| {
                before.ends_with(*a)
                    && before[..before.len() - a.len()]
                        .chars()
                        .last()
                        .is_none_or(|c| !c.is_alphanumeric())
            })
            .map(|a| before.len() - a.len())
            .unwrap_or(start);
        prompt[begin..end].to_string()
    };
    let find_word = |needle: &str| -> Option<(usize, usize)> {
        let needle = needle.to_ascii_lowercase();
        if needle.is_empty() {
            return None;
        }
        let mut from = 0;
        while let Some(i) = lower[from..].find(&needle) {
            let s = from + i;
            let e = s + needle.len();
            let left_ok = lower[..s].chars().last().is_none_or(|c| !c.is_alphanumeric());
            let right_ok = lower[e..].chars().next().is_none_or(|c| !c.is_alphanumeric());
            if left_ok && right_ok {
                return Some((s, e));
            }
            from = s + needle.len().max(1);
        }
        None
    };
    if let Some((s, e)) = find_word(element.trim()) {
        return with_article(s, e);
    }
    let mut words: Vec<&str> = element
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.len() > 2)
        .collect();
    words.sort_by_key(|w| std::cmp::Reverse(w.len()));
    for w in words {
        if let Some((s, e)) = find_word(w) {
            return with_article(s, e);
        }
    }
    prompt.trim().to_string()
}

/// Resolve every pending ambiguity. Human answers win; the rest follow the
/// creativity level (literal restatement at LOW, a model fill otherwise).
pub async fn resolve_ambiguities(
    gateway: &Gateway,
    draft: &DraftAnalysis,
    request: &GenerationRequest,
    answers: &[ClarificationAnswer],
    trace: &CallTrace,
) -> Result<DraftAnalysis> {
    let mut resolved = apply_answers(draft, answers)?;
    if !resolved.has_pending() {
        return Ok(resolved);
    }
    let level = request.creativity_level;
    if level == CreativityLevel::Low {
        for a in resolved.ambiguous_elements.iter_mut().filter(|a| a.is_pending()) {
            let text = literal_restatement(&request.prompt, &a.element);
            a.resolution = Resolution::new(ResolutionSource::Literal, text);
        }
        return Ok(resolved);
    }

    let pending: Vec<&AmbiguousElement> = resolved.pending().collect();
    let wanted: Vec<String> = pending.iter().map(|a| a.element.trim().to_lowercase()).collect();
    let given: Vec<&ClarificationAnswer> = answers.iter().collect();
    let spec = StructuredCallSpec::new(ids::RESOLVE_AMBIGUITIES, SchemaId::Resolutions)
        .var("user_prompt", request.prompt.clone())
        .var("creativity_level", level.as_str())
        .var("creativity_guidance", creativity_guidance(level))
        .var("answers_json", to_json(&given))
        .var("pending_json", to_json(&pending))
        .check(move |v: &Value| {
            let reply: ResolutionsReply =
                serde_json::from_value(v.clone()).map_err(|e| Violation::format(e.to_string()))?;
            let got: HashSet<String> = reply
                .resolutions
                .iter()
                .map(|r| r.element.trim().to_lowercase())
                .collect();
            match wanted.iter().find(|w| !got.contains(*w)) {
                Some(missing) => Err(Violation::format(format!(
                    "no resolution given for pending element `{missing}`"
                ))),
                None => Ok(()),
            }
        });
    let reply: ResolutionsReply = gateway.chat_typed(spec, trace).await?;
    let fills: BTreeMap<String, String> = reply
        .resolutions
        .into_iter()
        .map(|r| (r.element.trim().to_lowercase(), r.answer))
        .collect();
    for a in resolved.ambiguous_elements.iter_mut().filter(|a| a.is_pending()) {
        let answer = fills
            .get(&a.element.trim().to_lowercase())
            .cloned()
            .ok_or_else(|| Error::state(format!("resolution for `{}` vanished", a.element)))?;
        a.resolution = Resolution::new(ResolutionSource::ModelFill, answer);
    }
    Ok(resolved)
}

/// Summarise a resolved draft into the report handed to the generation engine.
pub async fn finalize_report(
    gateway: &Gateway,
    resolved: &DraftAnalysis,
    request: &GenerationRequest,
    trace: &CallTrace,
) -> Result<AnalysisReport> {
    if let Some(p) = resolved.pending().next() {
        return Err(Error::state(format!(
            "cannot finalize: ambiguity `{}` is still PENDING",
            p.element
        )));
    }
    let level = request.creativity_level;
    let mut spec = StructuredCallSpec::new(ids::FINALIZE_REPORT, SchemaId::Summary)
        .var("user_prompt", request.prompt.clone())
        .var("creativity_level", level.as_str())
        .var("creativity_guidance", creativity_guidance(level))
        .var("draft_json", to_json(resolved));
    if level == CreativityLevel::Low {
        let names: Vec<String> = resolved
            .subject_names()
            .iter()
            .map(|n| n.to_lowercase())
            .collect();
        spec = spec.check(move |v: &Value| {
            let prompt = v["detailed_prompt"].as_str().unwrap_or_default().to_lowercase();
            match names.iter().find(|n| !prompt.contains(n.as_str())) {
                Some(n) => Err(Violation::format(format!(
                    "detailed_prompt must mention the main subject `{n}`"
                ))),
                None => Ok(()),
            }
        });
    }
    let summary: SummaryReply = gateway.chat_typed(spec, trace).await?;
    let report = AnalysisReport {
        identified_elements: resolved.identified_elements.clone(),
        creativity_fills: summary.creativity_fills,
        ambiguous_elements: resolved.ambiguous_elements.clone(),
        detailed_prompt: summary.detailed_prompt,
    };
    report.validate()?;
    Ok(report)
}
