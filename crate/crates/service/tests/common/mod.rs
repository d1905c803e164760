//! Scripted planner endpoint for exercising the external policy.

#![allow(dead_code)]

use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

#[derive(Clone)]
struct Script {
    replies: Arc<Vec<String>>,
    delay: Duration,
    seen: Arc<Mutex<Vec<Value>>>,
}

async fn answer(State(s): State<Script>, Json(body): Json<Value>) -> Json<Value> {
    let n = {
        let mut seen = s.seen.lock().unwrap();
        seen.push(body);
        seen.len() - 1
    };
    if !s.delay.is_zero() {
        std::thread::sleep(s.delay);
    }
    // The last reply repeats once the script runs out.
    let text = s.replies.get(n).or(s.replies.last()).cloned().unwrap_or_default();
    Json(json!({ "text": text }))
}

pub struct MockPlanner {
    pub url: String,
    pub seen: Arc<Mutex<Vec<Value>>>,
}

/// Serves `replies` in order on an ephemeral local port from a background
/// thread that lives as long as the test process.
pub fn mock_planner(replies: &[&str], delay: Duration) -> MockPlanner {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let url = format!("http://{}/plan", listener.local_addr().unwrap());
    let script = Script {
        replies: Arc::new(replies.iter().map(|s| s.to_string()).collect()),
        delay,
        seen: Arc::new(Mutex::new(Vec::new())),
    };
    let seen = script.seen.clone();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            let app = Router::new().route("/plan", post(answer)).with_state(script);
            axum::serve(listener, app).await.unwrap();
        });
    });
    MockPlanner { url, seen }
}

/// An address nothing listens on.
pub fn dead_endpoint() -> String {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    format!("http://{addr}/plan")
}
