#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use perfsieve::synthetic::LabeledPost;
use perfsieve::Label;
use perfsieve_service::AppState;
use serde_json::{json, Value};
use tower::ServiceExt;

pub struct Reply {
    pub status: StatusCode,
    pub text: String,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.text).unwrap_or_else(|e| panic!("not JSON ({e}): {}", self.text))
    }
}

pub struct Client {
    pub app: Router,
    pub state: Arc<AppState>,
}

impl Client {
    pub fn new(data_dir: &std::path::Path) -> Self {
        let state = AppState::new(data_dir);
        Self { app: perfsieve_service::router(state.clone()), state }
    }

    pub async fn send(&self, method: &str, uri: &str, body: Option<Value>, headers: &[(&str, &str)]) -> Reply {
        let mut req = Request::builder().method(method).uri(uri);
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        let body = match body {
            Some(v) => {
                req = req.header("content-type", "application/json");
                Body::from(v.to_string())
            }
            None => Body::empty(),
        };
        let resp = self.app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        Reply { status, text: String::from_utf8(bytes.to_vec()).unwrap() }
    }

    pub async fn get(&self, uri: &str) -> Reply {
        self.send("GET", uri, None, &[]).await
    }

    pub async fn post(&self, uri: &str, body: Value) -> Reply {
        self.send("POST", uri, Some(body), &[]).await
    }

    /// Polls a job until it finishes.
    pub async fn wait_job(&self, id: &str) -> Value {
        let start = Instant::now();
        loop {
            let job = self.get(&format!("/jobs/{id}")).await.json();
            if job["state"] == "done" || job["state"] == "failed" {
                return job;
            }
            assert!(start.elapsed() < Duration::from_secs(120), "job {id} did not finish");
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
    }

    pub async fn label(&self, project: &str, token: &str, key: &str, body: Value) -> Reply {
        let auth = format!("Bearer {token}");
        self.send(
            "POST",
            &format!("/projects/{project}/labels"),
            Some(body),
            &[("authorization", auth.as_str()), ("idempotency-key", key)],
        )
        .await
    }
}

/// Simplified JSONL dump of synthetic posts.
pub fn jsonl(posts: &[LabeledPost]) -> String {
    posts
        .iter()
        .map(|p| {
            json!({
                "id": p.post.id,
                "kind": "question",
                "tags": p.post.tags,
                "body_html": p.post.body_html,
            })
            .to_string()
                + "\n"
        })
        .collect()
}

pub fn truth(posts: &[LabeledPost]) -> BTreeMap<u64, Label> {
    posts.iter().map(|p| (p.post.id, p.label)).collect()
}

pub fn tokens() -> Value {
    json!({ "alice": "tok-alice", "bob": "tok-bob" })
}

pub fn token_of(annotator: &str) -> &'static str {
    match annotator {
        "alice" => "tok-alice",
        "bob" => "tok-bob",
        other => panic!("unknown annotator {other}"),
    }
}
