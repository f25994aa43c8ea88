//! Deterministic offline backends.
//!
//! Every mock is a pure function of its inputs, its configuration and (for
//! the scripted variants) the order of calls it receives. The same mocks back
//! the test-suite, the `mock` config kind and the mock HTTP server.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use image::{DynamicImage, GrayImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::chat::{ChatBackend, ChatRequest};
use super::imaging::{GenerateParams, ImageEditor, ImageGenerator, SegmentOutcome, Segmenter};
use super::templates::{ids, task_marker};
use super::BackendSet;
use crate::artifact::{content_hash, decode_mask, decode_png, encode_mask, encode_png};
use crate::error::BackendError;
use crate::session::{
    AmbiguousElement, CreativityLevel, DraftAnalysis, EditMode, MainSubject, ResolutionSource,
};

/// Text between `label<<<` and the next `>>>`.
pub fn delimited<'a>(text: &'a str, label: &str) -> Option<&'a str> {
    let start = text.find(&format!("{label}<<<"))? + label.len() + 3;
    let len = text[start..].find(">>>")?;
    Some(&text[start..start + len])
}

fn line_value<'a>(text: &'a str, label: &str) -> Option<&'a str> {
    text.lines()
        .find_map(|l| l.trim().strip_prefix(label))
        .map(str::trim)
}

fn digest_u64(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

fn contains_word(haystack: &str, word: &str) -> bool {
    haystack
        .split(|c: char| !c.is_alphanumeric())
        .any(|w| w.eq_ignore_ascii_case(word))
}

// ---------------------------------------------------------------------------
// Heuristic chat

struct KnownAmbiguity {
    word: &'static str,
    reason: &'static str,
    questions: &'static [&'static str],
    fill: &'static str,
}

const KNOWN_AMBIGUITIES: &[KnownAmbiguity] = &[
    KnownAmbiguity {
        word: "plate",
        reason: "Type and style of plate are not specified",
        questions: &[
            "What type of plate are you imagining (e.g., Marble Plate, Plastic Plate)?",
            "Do you have a preference for the material or design?",
        ],
        fill: "Assume a simple white ceramic plate to make it versatile for presenting desserts",
    },
    KnownAmbiguity {
        word: "flag",
        reason: "The nation or design of the flag is not specified",
        questions: &["Which nation's flag is intended?"],
        fill: "Assume a plain light-blue flag without national symbols",
    },
    KnownAmbiguity {
        word: "table",
        reason: "Material and style of the table are not specified",
        questions: &["What kind of table do you picture (e.g., wooden kitchen table, glass desk)?"],
        fill: "Assume a light oak kitchen table",
    },
    KnownAmbiguity {
        word: "dog",
        reason: "The breed of the dog is not specified",
        questions: &["Which breed should the dog be?"],
        fill: "Assume a golden retriever",
    },
    KnownAmbiguity {
        word: "car",
        reason: "Make, model and color of the car are not specified",
        questions: &["What kind of car should it be?", "Which color?"],
        fill: "Assume a red compact hatchback",
    },
    KnownAmbiguity {
        word: "hat",
        reason: "The style of hat is not specified",
        questions: &["What style of hat (e.g., top hat, baseball cap)?"],
        fill: "Assume a classic black top hat",
    },
    KnownAmbiguity {
        word: "house",
        reason: "Architecture and size of the house are not specified",
        questions: &["What architectural style should the house have?"],
        fill: "Assume a small two-story timber house",
    },
    KnownAmbiguity {
        word: "mug",
        reason: "The material and design of the mug are not specified",
        questions: &["What should the mug look like?"],
        fill: "Assume a plain white porcelain mug",
    },
];

const SUBJECT_SEPARATORS: &[&str] = &[", ", " beside ", " next to ", " alongside ", " and "];
const SUBJECT_STOPS: &[&str] = &[
    " with ", " on ", " in ", " at ", " under ", " over ", " drifting ", " wearing ", " holding ",
    " sitting ", " standing ", " near ",
];
const ARTICLES: &[&str] = &["a ", "an ", "the ", "one ", "two ", "some "];

fn strip_article(s: &str) -> &str {
    let mut s = s;
    for lead in ["beside ", "next to ", "alongside ", "and "] {
        if s.to_ascii_lowercase().starts_with(lead) {
            s = s[lead.len()..].trim_start();
        }
    }
    let lower = s.to_ascii_lowercase();
    for a in ARTICLES {
        if lower.starts_with(a) {
            return s[a.len()..].trim_start();
        }
    }
    s
}

/// Naive noun-phrase split, good enough for deterministic fixtures.
pub fn heuristic_subjects(prompt: &str) -> Vec<MainSubject> {
    let text = prompt.trim().trim_end_matches(['.', '!', '?']);
    let mut clauses = vec![text.to_string()];
    for sep in SUBJECT_SEPARATORS {
        clauses = clauses
            .iter()
            .flat_map(|c| c.split(sep).map(str::to_string).collect::<Vec<_>>())
            .collect();
    }
    let mut out: Vec<MainSubject> = Vec::new();
    for clause in clauses {
        let clause = strip_article(clause.trim());
        let lower = clause.to_lowercase();
        let cut = SUBJECT_STOPS
            .iter()
            .filter_map(|s| lower.find(s))
            .min()
            .unwrap_or(clause.len());
        let name = clause[..cut].trim();
        let attributes = lower
            .find(" with ")
            .map(|i| clause[i + 6..].trim())
            .map(|rest| {
                let rl = rest.to_lowercase();
                let end = SUBJECT_STOPS
                    .iter()
                    .filter_map(|s| rl.find(s))
                    .min()
                    .unwrap_or(rest.len());
                rest[..end].trim().to_string()
            })
            .unwrap_or_default();
        if name.is_empty() || out.iter().any(|s| s.name.eq_ignore_ascii_case(name)) {
            continue;
        }
        out.push(MainSubject {
            name: name.to_string(),
            attributes,
        });
    }
    if out.is_empty() {
        out.push(MainSubject {
            name: text.to_string(),
            attributes: String::new(),
        });
    }
    out
}

pub fn heuristic_ambiguities(prompt: &str) -> Vec<AmbiguousElement> {
    KNOWN_AMBIGUITIES
        .iter()
        .filter(|k| contains_word(prompt, k.word))
        .map(|k| AmbiguousElement {
            element: k.word.to_string(),
            reason: k.reason.to_string(),
            clarification_questions: k.questions.iter().map(|q| q.to_string()).collect(),
            resolution: Default::default(),
        })
        .collect()
}

fn heuristic_fill(element: &str) -> String {
    KNOWN_AMBIGUITIES
        .iter()
        .find(|k| k.word.eq_ignore_ascii_case(element.trim()))
        .map(|k| k.fill.to_string())
        .unwrap_or_else(|| format!("Assume a simple, neutral {element} that fits the scene"))
}

fn fills_for(level: CreativityLevel, subject: &str) -> Value {
    let mut fills = json!({
        "background": "", "composition": "", "color_harmony": "", "lighting": "",
        "focus_sharpness": "", "emotional_impact": "", "uniqueness_creativity": "", "visual_style": ""
    });
    if level != CreativityLevel::Low {
        fills["background"] = json!(format!("A simple, uncluttered setting that keeps attention on the {subject}"));
        fills["composition"] = json!("Centered subject with balanced negative space");
        fills["lighting"] = json!("Soft, natural light from the side");
        fills["visual_style"] = json!("Clean photographic style");
    }
    if level == CreativityLevel::High {
        fills["color_harmony"] = json!("Warm complementary palette");
        fills["focus_sharpness"] = json!("Crisp focus on the subject, gentle background blur");
        fills["emotional_impact"] = json!("Inviting and cheerful");
        fills["uniqueness_creativity"] = json!("A subtle, playful detail that rewards a second look");
    }
    fills
}

/// How the mock evaluator picks the overall score it reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MockScoring {
    Constant { score: f64 },
    /// The n-th evaluation of a given prompt gets `scores[n]` (last value repeats).
    Sequence { scores: Vec<f64> },
    /// Derived from a hash of the image and prompt, mapped into `[min, max]`.
    Hash { min: f64, max: f64 },
}

impl Default for MockScoring {
    fn default() -> Self {
        MockScoring::Hash { min: 6.5, max: 9.5 }
    }
}

/// Rule-based stand-in for the chat model. Dispatches on the template marker.
pub struct HeuristicChat {
    id: String,
    scoring: MockScoring,
    seen: Mutex<HashMap<String, usize>>,
}

impl HeuristicChat {
    pub fn new(scoring: MockScoring) -> Self {
        HeuristicChat {
            id: "mock-chat".to_string(),
            scoring,
            seen: Mutex::new(HashMap::new()),
        }
    }

    fn score_for(&self, prompt: &str, images: &[&[u8]]) -> f64 {
        match &self.scoring {
            MockScoring::Constant { score } => *score,
            MockScoring::Sequence { scores } => {
                let mut seen = self.seen.lock().unwrap();
                let n = seen.entry(prompt.to_string()).or_insert(0);
                let s = scores
                    .get(*n)
                    .or(scores.last())
                    .copied()
                    .unwrap_or(5.0);
                *n += 1;
                s
            }
            MockScoring::Hash { min, max } => {
                let img = images.first().copied().unwrap_or_default();
                let h = digest_u64(&[img, prompt.as_bytes()]);
                let frac = (h % 1001) as f64 / 1000.0;
                let raw = min + frac * (max - min);
                (raw * 20.0).round() / 20.0
            }
        }
    }

    /// Produce a reply for a rendered request.
    pub fn reply(&self, request: &ChatRequest) -> Result<Value, BackendError> {
        let system = request.system_text();
        let user = request.first_user_text();
        let task = task_marker(&system).unwrap_or_default().to_string();
        let level: CreativityLevel = line_value(&user, "Creativity level:")
            .and_then(|l| l.parse().ok())
            .unwrap_or_default();
        let prompt = delimited(&user, "User prompt: ").unwrap_or_default();

        let reply = match task.as_str() {
            ids::ANALYZE_INPUT => {
                let subjects = heuristic_subjects(prompt);
                let references = if user.contains("A reference image is attached") {
                    json!("The attached reference shows the desired content.")
                } else {
                    Value::Null
                };
                json!({
                    "identified_elements": {"main_subjects": subjects, "references": references},
                    "creativity_fills": fills_for(level, &subjects[0].name),
                    "ambiguous_elements": heuristic_ambiguities(prompt),
                    "detailed_prompt": "",
                })
            }
            ids::RESOLVE_AMBIGUITIES => {
                let pending: Vec<AmbiguousElement> = delimited(&user, "Pending elements: ")
                    .and_then(|s| serde_json::from_str(s).ok())
                    .unwrap_or_default();
                let resolutions: Vec<Value> = pending
                    .iter()
                    .map(|a| json!({"element": a.element, "answer": heuristic_fill(&a.element)}))
                    .collect();
                json!({ "resolutions": resolutions })
            }
            ids::FINALIZE_REPORT => {
                let draft: Option<DraftAnalysis> = delimited(&user, "Resolved analysis: ")
                    .and_then(|s| serde_json::from_str(s).ok());
                let mut detailed = prompt.trim().trim_end_matches('.').to_string();
                detailed.push('.');
                let subject = draft
                    .as_ref()
                    .and_then(|d| d.identified_elements.main_subjects.first())
                    .map(|s| s.name.clone())
                    .unwrap_or_else(|| "subject".to_string());
                if let Some(d) = &draft {
                    for a in &d.ambiguous_elements {
                        match a.resolution.source {
                            ResolutionSource::Human => detailed
                                .push_str(&format!(" The {} is {}.", a.element, a.resolution.answer.trim())),
                            ResolutionSource::ModelFill => {
                                let text = a.resolution.answer.trim();
                                let text = text.strip_prefix("Assume ").unwrap_or(text);
                                detailed.push_str(&format!(" Show {}.", text.trim_end_matches('.')));
                            }
                            ResolutionSource::Literal | ResolutionSource::Pending => {}
                        }
                    }
                }
                let fills = fills_for(level, &subject);
                if level != CreativityLevel::Low {
                    for key in ["background", "lighting", "visual_style"] {
                        if let Some(s) = fills[key].as_str() {
                            detailed.push_str(&format!(" {s}."));
                        }
                    }
                }
                json!({"creativity_fills": fills, "detailed_prompt": detailed})
            }
            ids::IDENTIFY_TASK => {
                let available = line_value(&user, "Existing image available:") == Some("yes");
                let guidance = guidance_text(&user);
                match edit_intent(&guidance) {
                    Some(_) if available => json!({
                        "task_kind": "EDIT",
                        "reasoning": "The request changes a single object in the existing image, which the editing model handles while preserving the rest."
                    }),
                    _ => json!({
                        "task_kind": "GENERATE",
                        "reasoning": "The specific elements and overall atmosphere described suggest a complete new image creation rather than localized edits."
                    }),
                }
            }
            ids::PREPARE_PLAN => {
                let task = line_value(&user, "Selected task:").unwrap_or("GENERATE");
                let report: Value = delimited(&user, "Analysis report: ")
                    .and_then(|s| serde_json::from_str(s).ok())
                    .unwrap_or(Value::Null);
                let base = report["detailed_prompt"].as_str().unwrap_or(prompt).to_string();
                let guidance = guidance_text(&user);
                if task == "EDIT" {
                    let (mode, target) = edit_intent(&guidance)
                        .unwrap_or((EditMode::Replace, heuristic_subjects(prompt)[0].name.clone()));
                    let verb = match mode {
                        EditMode::Add => "Add",
                        EditMode::Replace => "Replace",
                        EditMode::Remove => "Remove",
                    };
                    json!({
                        "generating_prompt": format!("{verb} the {target}, keeping the rest of the image unchanged."),
                        "reasoning": "Local object change on the existing image.",
                        "confidence": 0.8,
                        "reference_role": "content",
                        "edit": {"mode": mode, "target_expression": target},
                    })
                } else {
                    let mut p = base;
                    for extra in [
                        delimited(&user, "Improvement suggestions from the evaluator: "),
                        delimited(&user, "User feedback: "),
                    ]
                    .into_iter()
                    .flatten()
                    {
                        p.push(' ');
                        p.push_str(extra.trim());
                    }
                    json!({
                        "generating_prompt": p,
                        "reasoning": "The prompt requires generating a new scene with detailed aesthetic elements, which aligns with the strengths of the prompt-guided generator.",
                        "confidence": 0.95,
                        "reference_role": "content",
                        "edit": null,
                    })
                }
            }
            ids::LOCATE_REGION | ids::INFER_REGION => {
                let (w, h) = image_size_from(&system).unwrap_or((64, 64));
                json!({"boxes": [{"x0": w / 4, "y0": h / 4, "x1": 3 * w / 4 - 1, "y1": 3 * h / 4 - 1}]})
            }
            ids::EVALUATE_IMAGE => {
                let original = delimited(&user, "Original prompt: ").unwrap_or_default();
                let score = self.score_for(original, &request.images());
                let report: Value = delimited(&user, "Analysis report: ")
                    .and_then(|s| serde_json::from_str(s).ok())
                    .unwrap_or(Value::Null);
                let names: Vec<String> = report["identified_elements"]["main_subjects"]
                    .as_array()
                    .map(|a| {
                        a.iter()
                            .filter_map(|s| s["name"].as_str().map(str::to_string))
                            .collect()
                    })
                    .unwrap_or_default();
                let missing: Vec<String> = if score < 7.0 {
                    names.last().cloned().into_iter().collect()
                } else {
                    Vec::new()
                };
                let suggestion = if names.is_empty() {
                    "Ensure the requested content is clearly visible and well composed.".to_string()
                } else {
                    format!(
                        "Ensure the {} are clearly visible and well composed.",
                        names.join(" and the ")
                    )
                };
                json!({
                    "aesthetic": {"composition": score, "color_harmony": score, "lighting_exposure": score,
                        "focus_sharpness": score, "emotional_impact": score, "uniqueness_creativity": score},
                    "alignment": {"main_subjects_presence": score, "spatial_accuracy": score,
                        "style_adherence": score, "background_representation": score},
                    "missing_elements": missing,
                    "improvement_suggestions": suggestion,
                    "overall": score,
                    "switch_to_generator": false,
                })
            }
            other => {
                return Err(BackendError::status(
                    &self.id,
                    400,
                    format!("mock chat has no rule for task `{other}`"),
                ))
            }
        };
        Ok(reply)
    }
}

fn guidance_text(user: &str) -> String {
    [
        delimited(user, "Improvement suggestions from the evaluator: "),
        delimited(user, "User feedback: "),
    ]
    .into_iter()
    .flatten()
    .collect::<Vec<_>>()
    .join(" ")
}

fn image_size_from(system: &str) -> Option<(u32, u32)> {
    let rest = &system[system.find("The image is ")? + 13..];
    let dims = rest.split_whitespace().next()?;
    let (w, h) = dims.split_once('x')?;
    Some((w.parse().ok()?, h.parse().ok()?))
}

/// "remove the collar from the dog" -> (REMOVE, "collar").
pub fn edit_intent(text: &str) -> Option<(EditMode, String)> {
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric() && c != '-')
        .filter(|w| !w.is_empty())
        .collect();
    let (pos, mode) = words.iter().enumerate().find_map(|(i, w)| match *w {
        "remove" => Some((i, EditMode::Remove)),
        "add" => Some((i, EditMode::Add)),
        "replace" => Some((i, EditMode::Replace)),
        _ => None,
    })?;
    const STOPS: &[&str] = &["from", "on", "in", "to", "with", "at", "of", "into", "by", "and"];
    let target: Vec<&str> = words[pos + 1..]
        .iter()
        .skip_while(|w| matches!(**w, "the" | "a" | "an"))
        .take_while(|w| !STOPS.contains(w))
        .take(4)
        .copied()
        .collect();
    if target.is_empty() {
        None
    } else {
        Some((mode, target.join(" ")))
    }
}

#[async_trait]
impl ChatBackend for HeuristicChat {
    fn id(&self) -> &str {
        &self.id
    }

    async fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.reply(request).map(|v| v.to_string())
    }
}

// ---------------------------------------------------------------------------
// Scripted chat

#[derive(Debug, Clone)]
pub enum Scripted {
    Json(Value),
    Text(String),
    Fail(BackendError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoggedChat {
    pub task: String,
    pub user_text: String,
    pub message_count: usize,
    pub image_count: usize,
}

/// Chat mock that replays queued replies per template, falling back to the
/// heuristic rules when a queue runs dry.
pub struct ScriptedChat {
    queues: Mutex<HashMap<String, VecDeque<Scripted>>>,
    fallback: Option<HeuristicChat>,
    log: Mutex<Vec<LoggedChat>>,
}

impl ScriptedChat {
    pub fn new() -> Self {
        ScriptedChat {
            queues: Mutex::new(HashMap::new()),
            fallback: None,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn with_fallback(scoring: MockScoring) -> Self {
        ScriptedChat {
            fallback: Some(HeuristicChat::new(scoring)),
            ..ScriptedChat::new()
        }
    }

    pub fn push(&self, task: &str, reply: Scripted) -> &Self {
        self.queues
            .lock()
            .unwrap()
            .entry(task.to_string())
            .or_default()
            .push_back(reply);
        self
    }

    pub fn push_json(&self, task: &str, v: Value) -> &Self {
        self.push(task, Scripted::Json(v))
    }

    pub fn calls(&self) -> Vec<LoggedChat> {
        self.log.lock().unwrap().clone()
    }

    pub fn calls_for(&self, task: &str) -> usize {
        self.log.lock().unwrap().iter().filter(|c| c.task == task).count()
    }
}

impl Default for ScriptedChat {
    fn default() -> Self {
        Self::new()
    }
}

#[async_trait]
impl ChatBackend for ScriptedChat {
    fn id(&self) -> &str {
        "scripted-chat"
    }

    async fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let system = request.system_text();
        let task = task_marker(&system).unwrap_or_default().to_string();
        self.log.lock().unwrap().push(LoggedChat {
            task: task.clone(),
            user_text: request.first_user_text(),
            message_count: request.messages.len(),
            image_count: request.images().len(),
        });
        let next = self
            .queues
            .lock()
            .unwrap()
            .get_mut(&task)
            .and_then(VecDeque::pop_front);
        match next {
            Some(Scripted::Json(v)) => Ok(v.to_string()),
            Some(Scripted::Text(t)) => Ok(t),
            Some(Scripted::Fail(e)) => Err(e),
            None => match &self.fallback {
                Some(h) => h.complete(request).await,
                None => Err(BackendError::transport(
                    "scripted-chat",
                    format!("no scripted reply left for `{task}`"),
                )),
            },
        }
    }
}

// ---------------------------------------------------------------------------
// Imaging mocks

/// Deterministic gradient image for a prompt and seed.
pub fn render_mock_image(prompt: &str, params: &GenerateParams) -> Vec<u8> {
    let h = digest_u64(&[prompt.as_bytes(), &params.seed.to_le_bytes()]);
    let [r0, g0, b0, ..] = h.to_le_bytes();
    let (w, ht) = (params.width.max(1), params.height.max(1));
    let img = RgbImage::from_fn(w, ht, |x, y| {
        Rgb([
            r0.wrapping_add((x * 128 / w) as u8),
            g0.wrapping_add((y * 128 / ht) as u8),
            b0 ^ (((x / 8 + y / 8) & 1) as u8 * 0x20),
        ])
    });
    encode_png(&DynamicImage::ImageRgb8(img)).expect("in-memory PNG encoding")
}

pub struct MockGenerator {
    id: String,
    capabilities: Vec<String>,
    failures: Mutex<VecDeque<BackendError>>,
    calls: AtomicUsize,
    prompts: Mutex<Vec<String>>,
}

impl MockGenerator {
    pub fn new(id: impl Into<String>, capabilities: Vec<String>) -> Self {
        MockGenerator {
            id: id.into(),
            capabilities,
            failures: Mutex::new(VecDeque::new()),
            calls: AtomicUsize::new(0),
            prompts: Mutex::new(Vec::new()),
        }
    }

    /// Queue errors returned (in order) before the mock starts succeeding.
    pub fn fail_next(&self, e: BackendError) {
        self.failures.lock().unwrap().push_back(e);
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }
}

#[async_trait]
impl ImageGenerator for MockGenerator {
    fn id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> &[String] {
        &self.capabilities
    }

    async fn generate(
        &self,
        prompt: &str,
        params: &GenerateParams,
        _key: Option<&str>,
    ) -> Result<Vec<u8>, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.prompts.lock().unwrap().push(prompt.to_string());
        if let Some(e) = self.failures.lock().unwrap().pop_front() {
            return Err(e);
        }
        Ok(render_mock_image(prompt, params))
    }
}

pub struct MockEditor {
    id: String,
    capabilities: Vec<String>,
    calls: AtomicUsize,
}

impl MockEditor {
    pub fn new(id: impl Into<String>, capabilities: Vec<String>) -> Self {
        MockEditor {
            id: id.into(),
            capabilities,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

/// Paint the masked region; pixels outside the mask are never touched, and an
/// empty mask returns the input bytes unchanged.
pub fn apply_mock_edit(prompt: &str, image: &[u8], mask: &[u8], mode: EditMode) -> Result<Vec<u8>, String> {
    let img = decode_png(image).map_err(|e| e.to_string())?.to_rgb8();
    let mask = decode_mask(mask).map_err(|e| e.to_string())?;
    if img.dimensions() != mask.dimensions() {
        return Err(format!(
            "mask {:?} does not match image {:?}",
            mask.dimensions(),
            img.dimensions()
        ));
    }
    if mask.pixels().all(|p| p.0[0] == 0) {
        return Ok(image.to_vec());
    }
    let fill = match mode {
        EditMode::Remove => {
            let (mut sum, mut n) = ([0u64; 3], 0u64);
            for (p, m) in img.pixels().zip(mask.pixels()) {
                if m.0[0] == 0 {
                    for c in 0..3 {
                        sum[c] += p.0[c] as u64;
                    }
                    n += 1;
                }
            }
            if n == 0 {
                Rgb([128, 128, 128])
            } else {
                Rgb([(sum[0] / n) as u8, (sum[1] / n) as u8, (sum[2] / n) as u8])
            }
        }
        EditMode::Add | EditMode::Replace => {
            let [r, g, b, ..] = digest_u64(&[prompt.as_bytes(), mode.as_str().as_bytes()]).to_le_bytes();
            Rgb([r, g, b])
        }
    };
    let mut out = img.clone();
    for (x, y, m) in mask.enumerate_pixels() {
        if m.0[0] != 0 {
            let current = *img.get_pixel(x, y);
            let value = if current == fill && mode != EditMode::Remove {
                Rgb([!fill.0[0], !fill.0[1], !fill.0[2]])
            } else {
                fill
            };
            out.put_pixel(x, y, value);
        }
    }
    encode_png(&DynamicImage::ImageRgb8(out)).map_err(|e| e.to_string())
}

#[async_trait]
impl ImageEditor for MockEditor {
    fn id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> &[String] {
        &self.capabilities
    }

    async fn edit(
        &self,
        prompt: &str,
        image: &[u8],
        mask: &[u8],
        mode: EditMode,
        _key: Option<&str>,
    ) -> Result<Vec<u8>, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        apply_mock_edit(prompt, image, mask, mode).map_err(|e| BackendError::status(&self.id, 400, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmenterFallback {
    #[default]
    NotFound,
    /// Centered box covering the middle half of each axis.
    CenterBox,
}

pub fn center_box_mask(width: u32, height: u32) -> GrayImage {
    GrayImage::from_fn(width, height, |x, y| {
        let inside = x >= width / 4 && x < 3 * width / 4 && y >= height / 4 && y < 3 * height / 4;
        Luma([if inside { 255 } else { 0 }])
    })
}

pub struct MockSegmenter {
    id: String,
    fixtures: Mutex<HashMap<(String, String), Vec<u8>>>,
    script: Mutex<VecDeque<Result<SegmentOutcome, BackendError>>>,
    fallback: SegmenterFallback,
    calls: Mutex<Vec<String>>,
}

impl MockSegmenter {
    pub fn new(fallback: SegmenterFallback) -> Self {
        MockSegmenter {
            id: "mock-segmenter".to_string(),
            fixtures: Mutex::new(HashMap::new()),
            script: Mutex::new(VecDeque::new()),
            fallback,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn add_fixture(&self, image: &[u8], expression: &str, mask: Vec<u8>) {
        self.fixtures
            .lock()
            .unwrap()
            .insert((content_hash(image), expression.trim().to_lowercase()), mask);
    }

    /// Queue outcomes that take precedence over fixtures, in order.
    pub fn push_outcome(&self, outcome: Result<SegmentOutcome, BackendError>) {
        self.script.lock().unwrap().push_back(outcome);
    }

    pub fn calls(&self) -> Vec<String> {
        self.calls.lock().unwrap().clone()
    }
}

#[async_trait]
impl Segmenter for MockSegmenter {
    fn id(&self) -> &str {
        &self.id
    }

    async fn segment(
        &self,
        image: &[u8],
        expression: &str,
        _key: Option<&str>,
    ) -> Result<SegmentOutcome, BackendError> {
        self.calls.lock().unwrap().push(expression.to_string());
        if let Some(o) = self.script.lock().unwrap().pop_front() {
            return o;
        }
        let key = (content_hash(image), expression.trim().to_lowercase());
        if let Some(mask) = self.fixtures.lock().unwrap().get(&key) {
            return Ok(SegmentOutcome::Mask(mask.clone()));
        }
        match self.fallback {
            SegmenterFallback::NotFound => Ok(SegmentOutcome::NotFound),
            SegmenterFallback::CenterBox => {
                let (w, h) = crate::artifact::png_dimensions(image)
                    .map_err(|e| BackendError::status(&self.id, 400, e.to_string()))?;
                let mask = encode_mask(&center_box_mask(w, h))
                    .map_err(|e| BackendError::status(&self.id, 500, e.to_string()))?;
                Ok(SegmentOutcome::Mask(mask))
            }
        }
    }
}

/// Handles to the concrete mocks, for assertions in tests.
#[derive(Clone)]
pub struct MockHandles {
    pub chat: Arc<ScriptedChat>,
    pub generator: Arc<MockGenerator>,
    pub editor: Arc<MockEditor>,
    pub segmenter: Arc<MockSegmenter>,
}

impl MockHandles {
    pub fn new(scoring: MockScoring, fallback: SegmenterFallback) -> Self {
        MockHandles {
            chat: Arc::new(ScriptedChat::with_fallback(scoring)),
            generator: Arc::new(MockGenerator::new(
                "mock-generator",
                vec!["generate".into(), "style".into(), "lighting".into(), "composition".into()],
            )),
            editor: Arc::new(MockEditor::new(
                "mock-editor",
                vec!["local_edit".into(), "add".into(), "replace".into(), "remove".into()],
            )),
            segmenter: Arc::new(MockSegmenter::new(fallback)),
        }
    }

    pub fn backend_set(&self) -> BackendSet {
        BackendSet {
            chat: self.chat.clone(),
            generator: self.generator.clone(),
            editor: self.editor.clone(),
            segmenter: self.segmenter.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artifact::png_dimensions;

    #[test]
    fn subjects_from_cupcake_prompt() {
        let s = heuristic_subjects(
            "A chocolate cupcake with vanilla frosting on a plate, beside a vanilla cupcake with chocolate frosting.",
        );
        let names: Vec<_> = s.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["chocolate cupcake", "vanilla cupcake"]);
        assert_eq!(s[0].attributes, "vanilla frosting");
        let amb = heuristic_ambiguities("A chocolate cupcake ... on a plate");
        assert_eq!(amb.len(), 1);
        assert_eq!(amb[0].element, "plate");
        assert_eq!(amb[0].reason, "Type and style of plate are not specified");
    }

    #[test]
    fn edit_intent_parsing() {
        assert_eq!(
            edit_intent("Please remove the collar from the dog"),
            Some((EditMode::Remove, "collar".to_string()))
        );
        assert_eq!(
            edit_intent("add a red balloon"),
            Some((EditMode::Add, "red balloon".to_string()))
        );
        assert_eq!(edit_intent("make the sky darker"), None);
    }

    #[test]
    fn generator_is_deterministic() {
        let p = GenerateParams { width: 64, height: 64, seed: 7 };
        let a = render_mock_image("a red cube", &p);
        let b = render_mock_image("a red cube", &p);
        assert_eq!(a, b);
        assert_eq!(png_dimensions(&a).unwrap(), (64, 64));
        let c = render_mock_image("a red cube", &GenerateParams { seed: 8, ..p });
        assert_ne!(a, c);
    }

    #[test]
    fn edit_respects_mask() {
        let p = GenerateParams { width: 32, height: 32, seed: 1 };
        let img = render_mock_image("x", &p);
        let empty = encode_mask(&GrayImage::new(32, 32)).unwrap();
        assert_eq!(apply_mock_edit("x", &img, &empty, EditMode::Remove).unwrap(), img);

        let half = GrayImage::from_fn(32, 32, |x, _| Luma([if x < 16 { 255 } else { 0 }]));
        let out = apply_mock_edit("x", &img, &encode_mask(&half).unwrap(), EditMode::Replace).unwrap();
        let (before, after) = (decode_png(&img).unwrap().to_rgb8(), decode_png(&out).unwrap().to_rgb8());
        for (x, y, m) in half.enumerate_pixels() {
            if m.0[0] == 0 {
                assert_eq!(before.get_pixel(x, y), after.get_pixel(x, y));
            }
        }
        assert!(half
            .enumerate_pixels()
            .any(|(x, y, m)| m.0[0] != 0 && before.get_pixel(x, y) != after.get_pixel(x, y)));
    }

    #[test]
    fn hash_scoring_stays_in_range() {
        let chat = HeuristicChat::new(MockScoring::Hash { min: 6.0, max: 9.0 });
        for i in 0..50u8 {
            let s = chat.score_for("p", &[&[i]]);
            assert!((6.0..=9.0).contains(&s), "{s}");
        }
    }
}
