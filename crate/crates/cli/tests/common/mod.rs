#![allow(dead_code)]

use std::time::Duration;

use serde_json::Value;
use t2i_agents::testkit::{MockRig, RigOptions};
use t2i_cli::api::{router, ApiOptions};

pub struct Server {
    pub dir: tempfile::TempDir,
    pub rig: MockRig,
    pub base: String,
    pub http: reqwest::Client,
}

pub async fn spawn_server(opts: RigOptions) -> Server {
    let dir = tempfile::tempdir().unwrap();
    let rig = MockRig::new(dir.path(), opts).unwrap();
    let app = router(rig.orchestrator.clone(), &ApiOptions::default());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    Server {
        dir,
        rig,
        base: format!("http://{addr}"),
        http: reqwest::Client::new(),
    }
}

impl Server {
    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub async fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        self.post_keyed(path, body, None).await
    }

    pub async fn post_keyed(&self, path: &str, body: &Value, key: Option<&str>) -> (u16, Value) {
        let mut req = self.http.post(self.url(path)).json(body);
        if let Some(k) = key {
            req = req.header("Idempotency-Key", k);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    pub async fn get(&self, path: &str) -> (u16, Value) {
        let resp = self.http.get(self.url(path)).send().await.unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    pub async fn create(&self, body: &Value) -> String {
        let (status, v) = self.post("/api/sessions", body).await;
        assert_eq!(status, 201, "{v}");
        v["session_id"].as_str().unwrap().to_string()
    }

    /// Poll until the session reports `status`.
    pub async fn wait_for(&self, id: &str, status: &str) -> Value {
        let deadline = tokio::time::Instant::now() + Duration::from_secs(10);
        loop {
            let (code, v) = self.get(&format!("/api/sessions/{id}")).await;
            assert_eq!(code, 200);
            if v["status"] == status {
                return v;
            }
            assert!(tokio::time::Instant::now() < deadline, "timed out waiting for {status}; last {}", v["status"]);
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
    }

    /// Read the event stream until the server closes it.
    pub async fn sse(&self, id: &str, last_event_id: Option<u64>) -> Vec<SseEvent> {
        let mut req = self.http.get(self.url(&format!("/api/sessions/{id}/events")));
        if let Some(n) = last_event_id {
            req = req.header("Last-Event-ID", n.to_string());
        }
        let mut resp = req.send().await.unwrap();
        assert_eq!(resp.status().as_u16(), 200);
        let ct = resp.headers()["content-type"].to_str().unwrap().to_string();
        assert!(ct.starts_with("text/event-stream"), "{ct}");
        let mut text = String::new();
        let read = async {
            while let Some(chunk) = resp.chunk().await.unwrap() {
                text.push_str(std::str::from_utf8(&chunk).unwrap());
            }
        };
        tokio::time::timeout(Duration::from_secs(10), read).await.expect("stream should close after DONE");
        parse_sse(&text)
    }
}

#[derive(Debug, Clone)]
pub struct SseEvent {
    pub id: u64,
    pub event: String,
    pub data: Value,
}

pub fn parse_sse(text: &str) -> Vec<SseEvent> {
    let mut out = Vec::new();
    for block in text.split("\n\n") {
        let (mut id, mut event, mut data) = (None, None, String::new());
        for line in block.lines() {
            if let Some(v) = line.strip_prefix("id:") {
                id = v.trim().parse().ok();
            } else if let Some(v) = line.strip_prefix("event:") {
                event = Some(v.trim().to_string());
            } else if let Some(v) = line.strip_prefix("data:") {
                data.push_str(v.strip_prefix(' ').unwrap_or(v));
            }
        }
        if let (Some(id), Some(event)) = (id, event) {
            out.push(SseEvent {
                id,
                event,
                data: serde_json::from_str(&data).unwrap(),
            });
        }
    }
    out
}

pub fn png_bytes(img: &image::DynamicImage) -> Vec<u8> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png).unwrap();
    buf.into_inner()
}
