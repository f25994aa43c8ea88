//! Task identification, plan preparation and execution.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::artifact::{ArtifactRef, PNG_MEDIA_TYPE};
use crate::error::{Error, Result};
use crate::gateway::structured::{PlanReply, ReferenceRole, SchemaId, TaskDecisionReply, Violation};
use crate::gateway::templates::ids;
use crate::gateway::{CallTrace, Gateway, GenerateParams, StructuredCallSpec};
use crate::region::{extract_region, RegionOutcome, RegionRequest};
use crate::session::{AnalysisReport, EditSpec, GenerationPlan, GenerationRequest, TaskKind};
use crate::store::Store;

pub const DEFAULT_WIDTH: u32 = 1024;
pub const DEFAULT_HEIGHT: u32 = 1024;

/// Everything the engine needs to plan one turn.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskContext {
    pub report: AnalysisReport,
    pub request: GenerationRequest,
    pub improvement_suggestions: Option<String>,
    pub user_feedback: Option<String>,
    pub previous_image: Option<ArtifactRef>,
    /// The evaluator judged the editor unable to deliver; use the generator.
    pub forced_generate: bool,
    /// Region drawn by the user on the previous image.
    pub canvas_mask: Option<ArtifactRef>,
}

impl TaskContext {
    pub fn first_turn(report: AnalysisReport, request: GenerationRequest) -> Self {
        TaskContext {
            report,
            request,
            improvement_suggestions: None,
            user_feedback: None,
            previous_image: None,
            forced_generate: false,
            canvas_mask: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.improvement_suggestions.is_some() && self.previous_image.is_none() {
            return Err(Error::validation(
                "improvement suggestions given without a previous image",
            ));
        }
        Ok(())
    }

    /// The image an edit would start from: the last generated one, else the
    /// user's reference.
    pub fn editable_image(&self) -> Option<&ArtifactRef> {
        self.previous_image
            .as_ref()
            .or(self.request.reference_image.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDecision {
    pub task_kind: TaskKind,
    pub reasoning: String,
}

fn capabilities_json(gateway: &Gateway) -> String {
    let b = gateway.backends();
    json!({
        "GENERATE": {"model": b.generator.id(), "capabilities": b.generator.capabilities()},
        "EDIT": {"model": b.editor.id(), "capabilities": b.editor.capabilities()},
    })
    .to_string()
}

fn report_json(report: &AnalysisReport) -> String {
    serde_json::to_string(report).expect("report serializes")
}

fn optional_vars(mut spec: StructuredCallSpec, ctx: &TaskContext) -> StructuredCallSpec {
    spec = spec
        .var(
            "improvement_suggestions",
            ctx.improvement_suggestions.clone().unwrap_or_default(),
        )
        .var("user_feedback", ctx.user_feedback.clone().unwrap_or_default());
    spec
}

/// Decide between generating a new image and editing an existing one.
pub async fn identify_task(gateway: &Gateway, ctx: &TaskContext, trace: &CallTrace) -> Result<TaskDecision> {
    ctx.validate()?;
    if ctx.forced_generate {
        return Ok(TaskDecision {
            task_kind: TaskKind::Generate,
            reasoning: "The evaluator found the editor unable to satisfy the request; switching to the generator.".into(),
        });
    }
    let has_image = ctx.editable_image().is_some();
    if has_image && ctx.canvas_mask.is_some() {
        return Ok(TaskDecision {
            task_kind: TaskKind::Edit,
            reasoning: "The user marked a region on the existing image for a local change.".into(),
        });
    }
    let spec = StructuredCallSpec::new(ids::IDENTIFY_TASK, SchemaId::TaskDecision)
        .var("user_prompt", ctx.request.prompt.clone())
        .var("analysis_report_json", report_json(&ctx.report))
        .var("image_available", if has_image { "yes" } else { "no" })
        .var("capabilities_json", capabilities_json(gateway));
    let reply: TaskDecisionReply = gateway.chat_typed(optional_vars(spec, ctx), trace).await?;
    if reply.task_kind == TaskKind::Edit && !has_image {
        return Ok(TaskDecision {
            task_kind: TaskKind::Generate,
            reasoning: format!("{} (no image to edit, generating instead)", reply.reasoning),
        });
    }
    Ok(TaskDecision {
        task_kind: reply.task_kind,
        reasoning: reply.reasoning,
    })
}

/// Write the backend inputs for the chosen task. For EDIT the mask is filled
/// in later by [`attach_mask`] unless the user drew one.
pub async fn prepare_plan(
    gateway: &Gateway,
    ctx: &TaskContext,
    task: TaskKind,
    trace: &CallTrace,
) -> Result<GenerationPlan> {
    ctx.validate()?;
    let b = gateway.backends();
    let model = match task {
        TaskKind::Generate => b.generator.id().to_string(),
        TaskKind::Edit => b.editor.id().to_string(),
    };
    let editable = ctx.editable_image().cloned();
    if task == TaskKind::Edit && editable.is_none() {
        return Err(Error::state("EDIT selected without an image to edit"));
    }
    let needs_target = task == TaskKind::Edit && ctx.canvas_mask.is_none();
    let reference_description = ctx
        .report
        .identified_elements
        .references
        .clone()
        .unwrap_or_default();
    let spec = StructuredCallSpec::new(ids::PREPARE_PLAN, SchemaId::Plan)
        .var("task_kind", serde_plain(task))
        .var("model_id", model.clone())
        .var("capabilities_json", capabilities_json(gateway))
        .var("user_prompt", ctx.request.prompt.clone())
        .var("analysis_report_json", report_json(&ctx.report))
        .var("reference_description", reference_description.clone());
    let spec = optional_vars(spec, ctx).check(move |v: &Value| {
        if task != TaskKind::Edit {
            return Ok(());
        }
        match v.get("edit") {
            Some(Value::Object(e)) => {
                let target = e.get("target_expression").and_then(Value::as_str).unwrap_or("");
                if needs_target && target.trim().is_empty() {
                    Err(Violation::format("edit.target_expression is empty"))
                } else {
                    Ok(())
                }
            }
            _ => Err(Violation::format("an EDIT plan needs an `edit` object")),
        }
    });
    let reply: PlanReply = gateway.chat_typed(spec, trace).await?;

    let mut generating_prompt = reply.generating_prompt.trim().to_string();
    let reference = ctx.request.reference_image.clone();
    let (content_ref, style_ref) = match (task, reply.reference_role) {
        (TaskKind::Edit, ReferenceRole::Style) => (editable.clone(), reference),
        (TaskKind::Edit, _) => (editable.clone(), None),
        (TaskKind::Generate, ReferenceRole::Content) => (reference, None),
        (TaskKind::Generate, ReferenceRole::Style) => (None, reference),
        (TaskKind::Generate, ReferenceRole::None) => (None, None),
    };
    if task == TaskKind::Generate && style_ref.is_some() && !reference_description.trim().is_empty() {
        // The generator takes text only, so the style reference travels as words.
        let desc = reference_description.trim();
        if !generating_prompt.contains(desc) {
            generating_prompt = format!("{generating_prompt} Style reference: {desc}");
        }
    }
    let edit_spec = match task {
        TaskKind::Generate => None,
        TaskKind::Edit => {
            let e = reply
                .edit
                .ok_or_else(|| Error::state("EDIT plan reply without edit"))?;
            Some(EditSpec {
                mode: e.mode,
                target_expression: e.target_expression.trim().to_string(),
                mask: ctx.canvas_mask.clone(),
            })
        }
    };
    let plan = GenerationPlan {
        task_kind: task,
        selected_model: model,
        generating_prompt,
        reference_content_image: content_ref,
        reference_style_image: style_ref,
        edit_spec,
        reasoning: reply.reasoning,
        confidence: reply.confidence,
    };
    plan.validate()?;
    Ok(plan)
}

fn serde_plain(task: TaskKind) -> &'static str {
    match task {
        TaskKind::Generate => "GENERATE",
        TaskKind::Edit => "EDIT",
    }
}

/// Resolve the edit mask for an EDIT plan through the region cascade and
/// store it. Returns the plan with `edit_spec.mask` set.
pub async fn attach_mask(
    gateway: &Gateway,
    store: &Store,
    plan: &GenerationPlan,
    ctx: &TaskContext,
    trace: &CallTrace,
) -> Result<(GenerationPlan, RegionOutcome)> {
    let spec = plan
        .edit_spec
        .as_ref()
        .ok_or_else(|| Error::state("attach_mask on a plan without edit_spec"))?;
    let image_ref = plan
        .reference_content_image
        .as_ref()
        .ok_or_else(|| Error::state("EDIT plan without an image"))?;
    let mut req = RegionRequest::new(store.load(image_ref)?, spec.target_expression.clone())
        .with_context(ctx.request.prompt.clone());
    if let Some(mask) = &spec.mask {
        req = req.with_canvas_mask(store.load(mask)?);
    }
    let outcome = extract_region(gateway, &req, trace).await?;
    let mask_ref = store.store_artifact(&outcome.mask, PNG_MEDIA_TYPE)?;
    let mut next = plan.clone();
    if let Some(e) = next.edit_spec.as_mut() {
        e.mask = Some(mask_ref);
    }
    Ok((next, outcome))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Execution {
    pub image: ArtifactRef,
    pub latency_ms: u64,
}

/// Run the plan on its backend and persist the resulting image.
pub async fn execute_plan(
    gateway: &Gateway,
    store: &Store,
    plan: &GenerationPlan,
    params: &GenerateParams,
    trace: &CallTrace,
) -> Result<Execution> {
    plan.validate()?;
    let started = Instant::now();
    let png = match plan.task_kind {
        TaskKind::Generate => gateway.generate(&plan.generating_prompt, params, trace).await?,
        TaskKind::Edit => {
            let spec = plan.edit_spec.as_ref().expect("validated");
            let mask_ref = spec
                .mask
                .as_ref()
                .ok_or_else(|| Error::state("EDIT plan executed before its mask was resolved"))?;
            let image = store.load(plan.reference_content_image.as_ref().expect("validated"))?;
            let mask = store.load(mask_ref)?;
            gateway
                .edit(&plan.generating_prompt, &image, &mask, spec.mode, trace)
                .await?
        }
    };
    let latency_ms = started.elapsed().as_millis() as u64;
    let image = store.store_artifact(&png, PNG_MEDIA_TYPE)?;
    Ok(Execution { image, latency_ms })
}
