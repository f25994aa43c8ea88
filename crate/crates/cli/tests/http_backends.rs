//! The HTTP chat and imaging clients against the mock backend server.

use t2i_agents::gateway::mock::{MockScoring, SegmenterFallback};
use t2i_agents::{AppConfig, AutomaticHandler, CreativityLevel, GenerationRequest};
use t2i_cli::build_orchestrator;
use t2i_cli::mock_backend::{router, MockServer};

async fn spawn_backend(score: f64) -> String {
    let app = router(MockServer::new(MockScoring::Constant { score }, SegmenterFallback::CenterBox));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}

fn config(url: &str) -> AppConfig {
    AppConfig::parse(&format!(
        r#"{{
            "backends": {{
                "chat": {{"kind": "openai", "url": "{url}", "model": "mock", "api_key_env": "T2I_TEST_UNSET_KEY"}},
                "generator": {{"kind": "http", "id": "gen", "url": "{url}", "capabilities": ["generate"]}},
                "editor": {{"kind": "http", "id": "edit", "url": "{url}", "capabilities": ["local_edit"]}},
                "segmenter": {{"kind": "http", "id": "seg", "url": "{url}"}}
            }},
            "run": {{"width": 48, "height": 32, "max_regen": 1}},
            "retry": {{"backoff_ms": 0}}
        }}"#
    ))
    .unwrap()
}

#[tokio::test]
async fn pipeline_runs_over_http_backends() {
    let url = spawn_backend(9.0).await;
    let dir = tempfile::tempdir().unwrap();
    let (orch, mocks) = build_orchestrator(&config(&url), dir.path()).unwrap();
    let r = orch
        .run_pipeline(GenerationRequest::new("a red cube", CreativityLevel::Medium), &AutomaticHandler)
        .await
        .unwrap();
    assert!(r.accepted);
    assert_eq!(r.turns, 1);
    assert_eq!(r.overall, 9.0);
    // Nothing went through the in-process mocks.
    assert_eq!(mocks.generator.calls(), 0);
    assert!(mocks.chat.calls().is_empty());
    let png = orch.store().load(&r.image).unwrap();
    assert_eq!(t2i_agents::artifact::png_dimensions(&png).unwrap(), (48, 32));
}

#[tokio::test]
async fn low_scores_exhaust_over_http_backends() {
    let url = spawn_backend(5.0).await;
    let dir = tempfile::tempdir().unwrap();
    let (orch, _) = build_orchestrator(&config(&url), dir.path()).unwrap();
    let r = orch
        .run_pipeline(GenerationRequest::new("a dog wearing a hat", CreativityLevel::High), &AutomaticHandler)
        .await
        .unwrap();
    assert!(!r.accepted);
    assert_eq!(r.turns, 2);
}
