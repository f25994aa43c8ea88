//! Acceptance suite. Runs every criterion, prints one PASS/FAIL/SKIP line
//! each, and exits non-zero if any failed.
//!
//! `cargo test -p t2i-agents-cli --test acceptance`

use std::future::Future;
use std::path::Path;
use std::pin::Pin;
use std::process::Command;
use std::time::{Duration, Instant};

use futures::stream::{self, StreamExt};
use image::{GrayImage, Luma};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

use t2i_agents::artifact::{decode_mask, encode_mask, PNG_MEDIA_TYPE};
use t2i_agents::event::{self, DonePayload, ErrorPayload, PlanPayload, VerdictPayload};
use t2i_agents::gateway::mock::{render_mock_image, MockHandles, MockScoring, Scripted, SegmenterFallback};
use t2i_agents::gateway::templates::ids;
use t2i_agents::gateway::{GenerateParams, SegmentOutcome, TemplateSet};
use t2i_agents::interpreter::{analyze_input, InterpreterLimits};
use t2i_agents::orchestrator::{regeneration_context, DEFAULT_MAX_REGEN, DEFAULT_THRESHOLD};
use t2i_agents::region::{extract_region, RegionRequest, RegionStage};
use t2i_agents::testkit::{answer, feedback_text, MockRig, RigOptions, ScriptedHandler};
use t2i_agents::*;

type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn rig(root: &Path, opts: RigOptions) -> Result<MockRig, String> {
    MockRig::new(root, opts).map_err(|e| e.to_string())
}

fn events_of(rig: &MockRig, id: &SessionId) -> Result<Vec<EventRecord>, String> {
    rig.store.read_events(id).map_err(|e| e.to_string())
}

fn plans(events: &[EventRecord]) -> Vec<PlanPayload> {
    events
        .iter()
        .filter(|e| e.kind == EventKind::Plan)
        .filter_map(|e| e.decode().ok())
        .collect()
}

// ---------------------------------------------------------------------------

async fn defaults() -> Check {
    let run = RunConfig::default();
    ensure!(run.threshold == 8.0, "threshold {}", run.threshold);
    ensure!(run.max_regen == 3, "max_regen {}", run.max_regen);
    ensure!(DEFAULT_THRESHOLD == 8.0 && DEFAULT_MAX_REGEN == 3, "constants drifted");
    let cfg = AppConfig::parse("{}").map_err(|e| e.to_string())?;
    ensure!(cfg.run.threshold == 8.0 && cfg.run.max_regen == 3, "empty config gives {:?}", cfg.run);
    Ok(())
}

const TRACE_SUGGESTION: &str = "Ensure the vanilla cupcake with chocolate frosting is included in the arrangement, \
and present both cupcakes on the plate as specified in the prompt.";

async fn below_threshold_verdict() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let rig = rig(dir.path(), RigOptions::default().constant(9.0).no_fsync())?;
    // Sub-scores shown in the trace, the rest filled so the mean is 7.65.
    rig.mocks.chat.push_json(
        ids::EVALUATE_IMAGE,
        json!({
            "aesthetic": {"composition": 7.5, "color_harmony": 8.5, "lighting_exposure": 8.0,
                "focus_sharpness": 8.0, "emotional_impact": 8.0, "uniqueness_creativity": 8.0},
            "alignment": {"main_subjects_presence": 6.0, "spatial_accuracy": 6.5,
                "style_adherence": 8.0, "background_representation": 8.0},
            "missing_elements": ["Vanilla cupcake with chocolate frosting", "Plate arrangement of both cupcakes"],
            "improvement_suggestions": TRACE_SUGGESTION
        }),
    );
    let prompt = "A chocolate cupcake with vanilla frosting on a plate, beside a vanilla cupcake with chocolate frosting";
    let r = rig
        .orchestrator
        .run_pipeline(GenerationRequest::new(prompt, CreativityLevel::Medium), &AutomaticHandler)
        .await
        .map_err(|e| e.to_string())?;
    let events = events_of(&rig, &r.session_id)?;
    let cut = events
        .iter()
        .position(|e| e.kind == EventKind::Verdict)
        .ok_or("no VERDICT event")?;
    let v: VerdictPayload = events[cut].decode().map_err(|e| e.to_string())?;
    ensure!((v.verdict.overall - 7.65).abs() < 1e-9, "overall {}", v.verdict.overall);
    ensure!(v.verdict.threshold == 8.0, "threshold {}", v.verdict.threshold);
    ensure!(v.verdict.decision == Decision::Regenerate, "decision {:?}", v.verdict.decision);

    let state = event::replay(&events[..=cut]).map_err(|e| e.to_string())?;
    let eval = &state.turns[0].evaluation;
    ensure!(
        render_verdict(eval, 8.0).decision == Decision::Regenerate,
        "render_verdict disagrees"
    );
    let ctx = regeneration_context(&state).map_err(|e| e.to_string())?;
    ensure!(
        ctx.improvement_suggestions.as_deref() == Some(TRACE_SUGGESTION),
        "context carries {:?}",
        ctx.improvement_suggestions
    );
    let p = plans(&events);
    ensure!(p.len() == 2, "expected a second plan, got {}", p.len());
    ensure!(
        p[1].plan.generating_prompt.contains(TRACE_SUGGESTION),
        "second plan prompt lacks the suggestion"
    );
    Ok(())
}

async fn loop_bound() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = StdRng::seed_from_u64(0x5eed_0001);
    let cases: Vec<(usize, u32, Vec<f64>)> = (0..1000)
        .map(|i| {
            let max_regen = rng.random_range(0..=5u32);
            let len = rng.random_range(1..=max_regen as usize + 2);
            let scores = (0..len)
                .map(|_| {
                    if rng.random_bool(0.3) {
                        rng.random_range(32..=40) as f64 / 4.0
                    } else {
                        rng.random_range(0..32) as f64 / 4.0
                    }
                })
                .collect();
            (i, max_regen, scores)
        })
        .collect();
    let root = dir.path().to_path_buf();
    let results: Vec<Check> = stream::iter(cases)
        .map(|(i, max_regen, scores)| {
            let root = root.join(format!("case-{i}"));
            async move {
                let opts = RigOptions::default().sequence(&scores).max_regen(max_regen).size(8, 8).no_fsync();
                let rig = rig(&root, opts)?;
                let r = rig
                    .orchestrator
                    .run_pipeline(
                        GenerationRequest::new(format!("case {i}: a red cube"), CreativityLevel::Low),
                        &AutomaticHandler,
                    )
                    .await
                    .map_err(|e| format!("case {i}: {e}"))?;
                // Scores past the end of the script repeat the last one.
                let first_pass = (0..=max_regen as usize)
                    .position(|n| scores.get(n).or(scores.last()).copied().unwrap() >= 8.0);
                let expected = first_pass.unwrap_or(usize::MAX).min(max_regen as usize) + 1;
                let calls = rig.mocks.generator.calls() + rig.mocks.editor.calls();
                ensure!(
                    calls == expected,
                    "case {i}: scores {scores:?}, max_regen {max_regen}: {calls} calls, expected {expected}"
                );
                ensure!(calls <= max_regen as usize + 1, "case {i}: exceeded the bound");
                ensure!(r.turns == expected, "case {i}: {} turns", r.turns);
                ensure!(r.accepted == first_pass.is_some_and(|f| f <= max_regen as usize), "case {i}: accepted flag");
                Ok(())
            }
        })
        .buffer_unordered(8)
        .collect()
        .await;
    results.into_iter().collect()
}

async fn exhaustion() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let rig = rig(dir.path(), RigOptions::default().constant(5.0).max_regen(3).no_fsync())?;
    let r = rig
        .orchestrator
        .run_pipeline(GenerationRequest::new("a red cube", CreativityLevel::Medium), &AutomaticHandler)
        .await
        .map_err(|e| e.to_string())?;
    ensure!(rig.mocks.generator.calls() == 4, "{} generator calls", rig.mocks.generator.calls());
    ensure!(!r.accepted, "accepted");
    let state = rig.store.replay_session(&r.session_id).map_err(|e| e.to_string())?;
    ensure!(state.turns.len() == 4, "{} turns", state.turns.len());
    ensure!(r.image == state.turns[3].image, "final image is not the 4th");
    ensure!(r.image != state.turns[2].image, "4th image equals the 3rd");
    Ok(())
}

async fn format_retry() -> Check {
    let request = GenerationRequest::new("a red cube on a table", CreativityLevel::Medium);
    for format_retries in 0..3u32 {
        let policy = RetryPolicy {
            format_retries,
            transport_retries: 0,
            backoff_ms: 0,
        };
        let mocks = MockHandles::new(MockScoring::default(), SegmenterFallback::NotFound);
        let gw = Gateway::new(mocks.backend_set(), policy, TemplateSet::builtin());
        if format_retries > 0 {
            mocks.chat.push(ids::ANALYZE_INPUT, Scripted::Text("Sure! {\"identified".into()));
            analyze_input(&gw, &request, None, InterpreterLimits::default(), &CallTrace::new())
                .await
                .map_err(|e| format!("malformed then valid: {e}"))?;
            ensure!(mocks.chat.calls().len() == 2, "{} calls for malformed then valid", mocks.chat.calls().len());
        }

        let mocks = MockHandles::new(MockScoring::default(), SegmenterFallback::NotFound);
        let gw = Gateway::new(mocks.backend_set(), policy, TemplateSet::builtin());
        for _ in 0..=format_retries {
            mocks.chat.push(ids::ANALYZE_INPUT, Scripted::Text("not json at all".into()));
        }
        match analyze_input(&gw, &request, None, InterpreterLimits::default(), &CallTrace::new()).await {
            Err(Error::Format { attempts, .. }) if attempts == format_retries + 1 => {}
            other => return Err(format!("retries {format_retries}: expected a format error, got {other:?}")),
        }
        ensure!(
            mocks.chat.calls().len() as u32 == format_retries + 1,
            "retries {format_retries}: {} calls",
            mocks.chat.calls().len()
        );
    }
    Ok(())
}

const CW: u32 = 48;
const CH: u32 = 32;

fn column_mask(col: u32) -> GrayImage {
    GrayImage::from_fn(CW, CH, |x, _| Luma([if x == col { 255 } else { 0 }]))
}

fn column_box(col: u32) -> Value {
    json!({"boxes": [{"x0": col, "y0": 0, "x1": col, "y1": CH - 1}]})
}

async fn cascade_fault_matrix() -> Check {
    use RegionStage::*;
    let stages = [(Segmentation, 2u32), (BoundingBoxes, 3), (InferredRegion, 4)];
    let image = render_mock_image("a cat on a sofa", &GenerateParams { width: CW, height: CH, seed: 3 });
    for bits in 0..8u8 {
        let ok = [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0];
        let mocks = MockHandles::new(MockScoring::default(), SegmenterFallback::NotFound);
        let seg = if ok[0] {
            SegmentOutcome::Mask(encode_mask(&column_mask(stages[0].1)).map_err(|e| e.to_string())?)
        } else {
            SegmentOutcome::NotFound
        };
        mocks.segmenter.push_outcome(Ok(seg));
        let boxes = |i: usize| if ok[i] { column_box(stages[i].1) } else { json!({"boxes": []}) };
        mocks.chat.push_json(ids::LOCATE_REGION, boxes(1));
        mocks.chat.push_json(ids::INFER_REGION, boxes(2));
        mocks.segmenter.push_outcome(Ok(SegmentOutcome::NotFound));
        let policy = RetryPolicy {
            backoff_ms: 0,
            ..RetryPolicy::default()
        };
        let gw = Gateway::new(mocks.backend_set(), policy, TemplateSet::builtin());
        let req = RegionRequest::new(image.clone(), "the cat").with_context("a cat on a sofa");
        let out = extract_region(&gw, &req, &CallTrace::new()).await;
        match ok.iter().position(|b| *b) {
            Some(i) => {
                let o = out.map_err(|e| format!("{bits:03b}: {e}"))?;
                ensure!(o.stage == stages[i].0, "{bits:03b}: stage {:?}", o.stage);
                let want: Vec<RegionStage> = stages[..=i].iter().map(|s| s.0).collect();
                ensure!(o.attempted == want, "{bits:03b}: attempted {:?}", o.attempted);
                let mask = decode_mask(&o.mask).map_err(|e| e.to_string())?;
                ensure!(mask == column_mask(stages[i].1), "{bits:03b}: wrong mask");
            }
            None => match out {
                Err(Error::RegionExtraction { attempted }) if attempted == [Segmentation, BoundingBoxes, InferredRegion] => {}
                other => return Err(format!("{bits:03b}: expected region extraction error, got {other:?}")),
            },
        }
    }

    // All stages failing inside a run keeps the previous image.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let opts = RigOptions {
        segmenter_fallback: SegmenterFallback::NotFound,
        ..RigOptions::default().constant(9.0).no_fsync()
    };
    let rig = rig(dir.path(), opts)?;
    for task in [ids::LOCATE_REGION, ids::INFER_REGION] {
        rig.mocks.chat.push_json(task, json!({"boxes": []}));
    }
    let handler = ScriptedHandler::new().feedback(feedback_text("remove the hat"));
    let req = GenerationRequest::new("a dog wearing a hat", CreativityLevel::Medium).interactive(true);
    let r = rig.orchestrator.run_pipeline(req, &handler).await.map_err(|e| e.to_string())?;
    let events = events_of(&rig, &r.session_id)?;
    let n = events.len();
    ensure!(
        events[n - 2].kind == EventKind::Error && events[n - 1].kind == EventKind::Done,
        "log does not end with ERROR, DONE"
    );
    let err: ErrorPayload = events[n - 2].decode().map_err(|e| e.to_string())?;
    ensure!(err.error == "region_extraction" && !err.fatal, "error payload {err:?}");
    let done: DonePayload = events[n - 1].decode().map_err(|e| e.to_string())?;
    let state = rig.store.replay_session(&r.session_id).map_err(|e| e.to_string())?;
    ensure!(done.image == state.turns[0].image, "fallback image is not the previous one");
    ensure!(rig.mocks.editor.calls() == 0, "editor was called");
    Ok(())
}

const WORDS: [&str; 8] = ["plate", "flag", "table", "dog", "car", "hat", "house", "mug"];

async fn human_precedence() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let rig = rig(dir.path(), RigOptions::default().constant(9.0).size(8, 8).no_fsync())?;
    let mut rng = StdRng::seed_from_u64(0x5eed_0002);
    let levels = [CreativityLevel::Low, CreativityLevel::Medium, CreativityLevel::High];
    let cases: Vec<(usize, Vec<&str>, Vec<bool>, CreativityLevel)> = (0..200)
        .map(|i| {
            let mut words = WORDS.to_vec();
            words.shuffle(&mut rng);
            words.truncate(rng.random_range(1..=WORDS.len()));
            let answered = words.iter().map(|_| rng.random_bool(0.5)).collect();
            (i, words, answered, levels[rng.random_range(0..3)])
        })
        .collect();
    let orch = rig.orchestrator.clone();
    let results: Vec<Check> = stream::iter(cases)
        .map(|(i, words, answered, level)| {
            let orch = orch.clone();
            async move {
                let prompt = format!("scene {i} with a {}", words.join(" and a "));
                let answers: Vec<ClarificationAnswer> = words
                    .iter()
                    .zip(&answered)
                    .filter(|(_, on)| **on)
                    .map(|(w, _)| answer(w, &format!("  a {w} exactly like #{i}, please ")))
                    .collect();

                let handler = ScriptedHandler::new().answers(answers.clone());
                let req = GenerationRequest::new(prompt.clone(), level).interactive(true);
                let r = orch.run_pipeline(req, &handler).await.map_err(|e| format!("case {i}: {e}"))?;
                let report = orch
                    .store()
                    .replay_session(&r.session_id)
                    .map_err(|e| e.to_string())?
                    .report
                    .ok_or("no report")?;
                for w in &words {
                    ensure!(
                        report.ambiguous_elements.iter().any(|a| &a.element == w),
                        "case {i}: `{w}` missing from the report"
                    );
                }
                for a in &report.ambiguous_elements {
                    let given = answers.iter().find(|x| x.element == a.element);
                    let res = &a.resolution;
                    match given {
                        Some(g) => ensure!(
                            res.source == ResolutionSource::Human && res.answer == g.answer,
                            "case {i}: `{}` answered but finalized as {:?} {:?}",
                            a.element,
                            res.source,
                            res.answer
                        ),
                        None if level == CreativityLevel::Low => ensure!(
                            res.source == ResolutionSource::Literal,
                            "case {i}: `{}` unanswered at LOW finalized as {:?}",
                            a.element,
                            res.source
                        ),
                        None => ensure!(
                            res.source == ResolutionSource::ModelFill && !res.answer.trim().is_empty(),
                            "case {i}: `{}` unanswered at {level:?} finalized as {:?}",
                            a.element,
                            res.source
                        ),
                    }
                }

                let quiet = ScriptedHandler::new().answers(answers);
                let r = orch
                    .run_pipeline(GenerationRequest::new(prompt, level), &quiet)
                    .await
                    .map_err(|e| format!("case {i}: {e}"))?;
                ensure!(
                    quiet.clarify_calls() == 0 && quiet.feedback_calls() == 0,
                    "case {i}: automatic mode consulted the handler"
                );
                let report = orch
                    .store()
                    .replay_session(&r.session_id)
                    .map_err(|e| e.to_string())?
                    .report
                    .ok_or("no report")?;
                ensure!(
                    report.ambiguous_elements.iter().all(|a| a.resolution.source != ResolutionSource::Human),
                    "case {i}: HUMAN resolution without a human"
                );
                Ok(())
            }
        })
        .buffer_unordered(8)
        .collect()
        .await;
    results.into_iter().collect()
}

async fn overall_arithmetic() -> Check {
    let mut rng = StdRng::seed_from_u64(0x5eed_0003);
    for case in 0..1000 {
        let mut scores = [0.0f64; 10];
        for s in &mut scores {
            *s = rng.random_range(0.0..=10.0);
        }
        let overall = compute_overall(&scores).map_err(|e| e.to_string())?;
        let mut total = 0.0;
        for s in scores {
            total += s;
        }
        let mean = total / 10.0;
        ensure!((overall - mean).abs() <= 1e-9, "case {case}: {overall} vs mean {mean}");
        let mut shuffled = scores;
        shuffled.shuffle(&mut rng);
        let again = compute_overall(&shuffled).map_err(|e| e.to_string())?;
        ensure!(again == overall, "case {case}: permutation changed {overall} to {again}");
        let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ensure!(lo <= overall && overall <= hi, "case {case}: {overall} outside [{lo}, {hi}]");
    }
    Ok(())
}

type Setup = Box<dyn Fn(&MockRig) -> Result<ScriptedHandler, String>>;

struct Scenario {
    name: &'static str,
    opts: RigOptions,
    request: GenerationRequest,
    setup: Setup,
    /// Park at every interaction point first, then answer through the
    /// submit calls, as the HTTP service does.
    suspend_first: bool,
}

fn scenarios() -> Vec<Scenario> {
    let base = || RigOptions::default().size(32, 32).no_fsync();
    let plain = |_: &MockRig| Ok(ScriptedHandler::new());
    vec![
        Scenario {
            name: "accept",
            opts: base().constant(9.0),
            request: GenerationRequest::new("a red cube", CreativityLevel::Medium),
            setup: Box::new(plain),
            suspend_first: false,
        },
        Scenario {
            name: "exhaustion",
            opts: base().constant(5.0),
            request: GenerationRequest::new("a red cube", CreativityLevel::High),
            setup: Box::new(plain),
            suspend_first: false,
        },
        Scenario {
            name: "sequence",
            opts: base().sequence(&[6.0, 7.9, 8.0]),
            request: GenerationRequest::new("a dog in a car", CreativityLevel::Low),
            setup: Box::new(plain),
            suspend_first: false,
        },
        Scenario {
            name: "clarification",
            opts: base().constant(9.0),
            request: GenerationRequest::new("an astronaut holding a flag", CreativityLevel::Medium).interactive(true),
            setup: Box::new(|_| Ok(ScriptedHandler::new().answers(vec![answer("flag", "a pirate flag")]))),
            suspend_first: false,
        },
        Scenario {
            name: "feedback",
            opts: base().constant(9.0),
            request: GenerationRequest::new("a lighthouse at dusk", CreativityLevel::Medium).interactive(true),
            setup: Box::new(|_| Ok(ScriptedHandler::new().feedback(feedback_text("make the sky darker")))),
            suspend_first: false,
        },
        Scenario {
            name: "edit cascade",
            opts: base().constant(9.0),
            request: GenerationRequest::new("a dog wearing a hat", CreativityLevel::Medium).interactive(true),
            setup: Box::new(|_| Ok(ScriptedHandler::new().feedback(feedback_text("remove the hat")))),
            suspend_first: false,
        },
        Scenario {
            name: "canvas mask",
            opts: base().constant(9.0),
            request: GenerationRequest::new("a quiet meadow", CreativityLevel::Medium).interactive(true),
            setup: Box::new(|rig| {
                let mask = GrayImage::from_fn(32, 32, |x, _| Luma([if x < 10 { 255 } else { 0 }]));
                let png = encode_mask(&mask).map_err(|e| e.to_string())?;
                let r = rig.store.store_artifact(&png, PNG_MEDIA_TYPE).map_err(|e| e.to_string())?;
                Ok(ScriptedHandler::new().feedback(Feedback {
                    text: Some("replace this area with flowers".into()),
                    canvas_mask: Some(r),
                    ..Feedback::default()
                }))
            }),
            suspend_first: false,
        },
        Scenario {
            name: "region failure",
            opts: RigOptions {
                segmenter_fallback: SegmenterFallback::NotFound,
                ..base().constant(9.0)
            },
            request: GenerationRequest::new("a dog wearing a hat", CreativityLevel::Medium).interactive(true),
            setup: Box::new(|rig| {
                for task in [ids::LOCATE_REGION, ids::INFER_REGION] {
                    rig.mocks.chat.push_json(task, json!({"boxes": []}));
                }
                Ok(ScriptedHandler::new().feedback(feedback_text("remove the hat")))
            }),
            suspend_first: false,
        },
        Scenario {
            name: "fatal failure",
            opts: base(),
            request: GenerationRequest::new("a red cube", CreativityLevel::Medium),
            setup: Box::new(|rig| {
                rig.mocks
                    .generator
                    .fail_next(BackendError::status("mock-generator", 400, "rejected"));
                Ok(ScriptedHandler::new())
            }),
            suspend_first: false,
        },
        Scenario {
            name: "suspended and resumed",
            opts: base().constant(5.0).max_regen(1),
            request: GenerationRequest::new("a cupcake on a plate", CreativityLevel::High).interactive(true),
            setup: Box::new(plain),
            suspend_first: true,
        },
    ]
}

async fn replay_equality() -> Check {
    for sc in scenarios() {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let rig = rig(dir.path(), sc.opts)?;
        let handler = (sc.setup)(&rig)?;
        let orch = &rig.orchestrator;
        let id = orch.create_session(sc.request, None).map_err(|e| e.to_string())?;
        let live = if sc.suspend_first {
            let o = orch.drive(&id, &SuspendingHandler).await.map_err(|e| e.to_string())?;
            ensure!(o == DriveOutcome::Suspended(SessionStatus::AwaitingClarification), "{}: {o:?}", sc.name);
            orch.submit_answers(&id, vec![answer("plate", "a blue plate")]).map_err(|e| e.to_string())?;
            let o = orch.drive(&id, &SuspendingHandler).await.map_err(|e| e.to_string())?;
            ensure!(o == DriveOutcome::Suspended(SessionStatus::AwaitingFeedback), "{}: {o:?}", sc.name);
            orch.submit_feedback(&id, feedback_text("more frosting")).map_err(|e| e.to_string())?;
            orch.drive_observed(&id, &handler).await.1
        } else {
            orch.drive_observed(&id, &handler).await.1
        };
        let live = live.ok_or_else(|| format!("{}: no live state", sc.name))?;
        ensure!(live.status.is_terminal(), "{}: ended in {:?}", sc.name, live.status);
        let replayed = rig.store.replay_session(&id).map_err(|e| format!("{}: {e}", sc.name))?;
        ensure!(replayed == live, "{}: replayed state differs from the live one", sc.name);
        replayed.check_invariants().map_err(|e| format!("{}: {e}", sc.name))?;
        // A fresh store over the same directory sees the same thing.
        let cold = Store::open(dir.path()).and_then(|s| s.replay_session(&id)).map_err(|e| e.to_string())?;
        ensure!(cold == live, "{}: cold replay differs", sc.name);
    }
    Ok(())
}

fn strip_timing(line: &str) -> Result<Value, String> {
    let rec: EventRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    Ok(rec.without_timing())
}

async fn batch_harness() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let prompts = dir.path().join("prompts.jsonl");
    let subjects = ["a red cube", "a dog wearing a hat", "a lighthouse at dusk", "a mug on a table", "two cats"];
    let text: String = (0..20)
        .map(|i| json!({"id": format!("p{i:02}"), "prompt": format!("{} #{i}", subjects[i % subjects.len()])}).to_string() + "\n")
        .collect();
    std::fs::write(&prompts, text).map_err(|e| e.to_string())?;
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"run": {"width": 256, "height": 256}, "retry": {"backoff_ms": 0}}"#)
        .map_err(|e| e.to_string())?;

    let bin = env!("CARGO_BIN_EXE_t2i-agents");
    let mut outs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = Command::new(bin)
            .args(["batch", "--prompts"])
            .arg(&prompts)
            .arg("--out")
            .arg(&out)
            .arg("--config")
            .arg(&config)
            .args(["--parallel", "4"])
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(o.status.success(), "batch run {run} failed: {}", String::from_utf8_lossy(&o.stderr));
        outs.push(out);
    }
    let a = std::fs::read_to_string(outs[0].join("results.jsonl")).map_err(|e| e.to_string())?;
    let b = std::fs::read_to_string(outs[1].join("results.jsonl")).map_err(|e| e.to_string())?;
    ensure!(a == b, "results differ between runs");
    let records: Vec<Value> = a.lines().map(serde_json::from_str).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    ensure!(records.len() == 20, "{} records", records.len());
    for (i, r) in records.iter().enumerate() {
        ensure!(r["prompt"].is_string(), "record {i}: prompt");
        ensure!(r["session_id"].is_string(), "record {i}: session_id");
        ensure!(r["accepted"].is_boolean(), "record {i}: accepted");
        ensure!(r["turns"].as_u64().is_some_and(|t| t >= 1), "record {i}: turns");
        ensure!(r["overall"].is_number(), "record {i}: overall");
        ensure!(r["id"] == format!("p{i:02}").as_str(), "record {i}: out of order");

        let sid = r["session_id"].as_str().unwrap();
        let log = |out: &Path| std::fs::read_to_string(out.join("data").join("sessions").join(sid).join("events.jsonl"));
        let (la, lb) = (log(&outs[0]).map_err(|e| e.to_string())?, log(&outs[1]).map_err(|e| e.to_string())?);
        let va: Vec<Value> = la.lines().map(strip_timing).collect::<Result<_, _>>()?;
        let vb: Vec<Value> = lb.lines().map(strip_timing).collect::<Result<_, _>>()?;
        ensure!(!va.is_empty() && va == vb, "session {sid}: event logs differ beyond timing");
    }
    Ok(())
}

const CUPCAKE: &str =
    "A chocolate cupcake with vanilla frosting on a plate, beside a vanilla cupcake with chocolate frosting.";

/// `Ok(None)` means skipped.
async fn live_smoke() -> Result<Option<()>, String> {
    let Ok(path) = std::env::var("T2I_LIVE_CONFIG") else {
        return Ok(None);
    };
    let config = AppConfig::load(Path::new(&path)).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (orch, _) = t2i_cli::build_orchestrator(&config, dir.path()).map_err(|e| e.to_string())?;
    let r = orch
        .run_pipeline(GenerationRequest::new(CUPCAKE, CreativityLevel::Medium), &AutomaticHandler)
        .await
        .map_err(|e| e.to_string())?;
    ensure!(r.turns <= config.run.max_regen as usize + 1, "{} turns", r.turns);
    let report = orch
        .store()
        .replay_session(&r.session_id)
        .map_err(|e| e.to_string())?
        .report
        .ok_or("no report")?;
    let plate = report
        .ambiguous_elements
        .iter()
        .find(|a| a.element.to_lowercase().contains("plate"))
        .ok_or("no plate ambiguity")?;
    ensure!(!plate.is_pending(), "plate left unresolved");
    Ok(Some(()))
}

// ---------------------------------------------------------------------------

type Criterion = (&'static str, Duration, Pin<Box<dyn Future<Output = Check>>>);

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let s = Duration::from_secs;
    let criteria: Vec<Criterion> = vec![
        ("defaults: threshold 8.0, max_regen 3", s(1), Box::pin(defaults())),
        ("below-threshold verdict: 7.65 < 8.0 regenerates with the suggestion forwarded", s(1), Box::pin(below_threshold_verdict())),
        ("loop bound: 1000 scripted score sequences", s(10), Box::pin(loop_bound())),
        ("exhaustion: constant 5.0 gives 4 generator calls and the 4th image", s(1), Box::pin(exhaustion())),
        ("format retry: malformed then valid, and the retry budget", s(1), Box::pin(format_retry())),
        ("region cascade fault matrix and previous-image fallback", s(5), Box::pin(cascade_fault_matrix())),
        ("human precedence: 200 ambiguity sets", s(10), Box::pin(human_precedence())),
        ("overall arithmetic: 1000 random 10-tuples", s(5), Box::pin(overall_arithmetic())),
        ("replay equality across scripted scenarios", s(10), Box::pin(replay_equality())),
        ("batch harness: 20 prompts, deterministic across runs", s(30), Box::pin(batch_harness())),
    ];

    let mut failed = 0;
    for (name, budget, fut) in criteria {
        let start = Instant::now();
        let result = rt.block_on(fut);
        let took = start.elapsed();
        let result = result.and_then(|()| {
            if took <= budget {
                Ok(())
            } else {
                Err(format!("took {took:.2?}, budget {budget:?}"))
            }
        });
        match result {
            Ok(()) => println!("PASS  {name}  ({took:.2?})"),
            Err(e) => {
                failed += 1;
                println!("FAIL  {name}  ({took:.2?}): {e}");
            }
        }
    }

    let name = "live smoke: cupcake prompt against real endpoints";
    let start = Instant::now();
    match rt.block_on(live_smoke()) {
        Ok(None) => println!("SKIP  {name}  (set T2I_LIVE_CONFIG to a config file to run)"),
        Ok(Some(())) => println!("PASS  {name}  ({:.2?})", start.elapsed()),
        Err(e) => {
            failed += 1;
            println!("FAIL  {name}: {e}");
        }
    }

    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
