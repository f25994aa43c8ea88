//! Stand-alone HTTP server speaking the chat and imaging wire contracts,
//! backed by the deterministic mocks. Lets the HTTP clients be exercised
//! end to end without real models.

use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};

use t2i_agents::artifact::{encode_mask, png_dimensions, MAX_IMAGE_BYTES, PNG_MEDIA_TYPE};
use t2i_agents::gateway::chat::{ChatMessage, ChatRequest};
use t2i_agents::gateway::imaging::{b64_decode, EditBody, GenerateBody, GenerateParams, SegmentBody};
use t2i_agents::gateway::mock::{apply_mock_edit, center_box_mask, render_mock_image, HeuristicChat, MockScoring, SegmenterFallback};

pub struct MockServer {
    chat: HeuristicChat,
    segmenter: SegmenterFallback,
}

impl MockServer {
    pub fn new(scoring: MockScoring, segmenter: SegmenterFallback) -> Arc<Self> {
        Arc::new(MockServer {
            chat: HeuristicChat::new(scoring),
            segmenter,
        })
    }
}

pub fn router(server: Arc<MockServer>) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/v1/chat/completions", post(chat))
        .route("/generate", post(generate))
        .route("/edit", post(edit))
        .route("/segment", post(segment))
        .layer(DefaultBodyLimit::max(MAX_IMAGE_BYTES * 3))
        .with_state(server)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({"error": {"message": message.into()}}))).into_response()
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, PNG_MEDIA_TYPE)], bytes).into_response()
}

async fn chat(State(s): State<Arc<MockServer>>, Json(body): Json<Value>) -> Response {
    let Some(raw) = body.get("messages").and_then(Value::as_array) else {
        return error(StatusCode::BAD_REQUEST, "missing messages");
    };
    let messages: Option<Vec<ChatMessage>> = raw.iter().map(ChatMessage::from_openai).collect();
    let Some(messages) = messages else {
        return error(StatusCode::BAD_REQUEST, "malformed message");
    };
    let request = ChatRequest {
        messages,
        idempotency_key: None,
    };
    match s.chat.reply(&request) {
        Ok(v) => Json(json!({
            "id": "mock-completion",
            "object": "chat.completion",
            "model": body.get("model").cloned().unwrap_or(Value::Null),
            "choices": [{
                "index": 0,
                "message": {"role": "assistant", "content": v.to_string()},
                "finish_reason": "stop"
            }]
        }))
        .into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn generate(Json(body): Json<GenerateBody>) -> Response {
    if body.width == 0 || body.height == 0 {
        return error(StatusCode::BAD_REQUEST, "width and height must be positive");
    }
    let params = GenerateParams {
        width: body.width,
        height: body.height,
        seed: body.seed,
    };
    png(render_mock_image(&body.prompt, &params))
}

async fn edit(Json(body): Json<EditBody>) -> Response {
    let (Ok(image), Ok(mask)) = (b64_decode(&body.image_b64), b64_decode(&body.mask_b64)) else {
        return error(StatusCode::BAD_REQUEST, "invalid base64");
    };
    match apply_mock_edit(&body.prompt, &image, &mask, body.mode) {
        Ok(out) => png(out),
        Err(e) => error(StatusCode::BAD_REQUEST, e),
    }
}

async fn segment(State(s): State<Arc<MockServer>>, Json(body): Json<SegmentBody>) -> Response {
    let Ok(image) = b64_decode(&body.image_b64) else {
        return error(StatusCode::BAD_REQUEST, "invalid base64");
    };
    let Ok((w, h)) = png_dimensions(&image) else {
        return error(StatusCode::BAD_REQUEST, "image is not a PNG");
    };
    match s.segmenter {
        SegmenterFallback::NotFound => error(StatusCode::NOT_FOUND, format!("nothing matches `{}`", body.expression)),
        SegmenterFallback::CenterBox => match encode_mask(&center_box_mask(w, h)) {
            Ok(m) => png(m),
            Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        },
    }
}
