mod common;

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use lap_core::grid::{build_grid_layout, GridLayout};
use lap_core::synth::SynthConfig;
use lap_service::config::Config;
use lap_service::corpus::write_synthetic_corpus;
use lap_service::scene_file::{parse_layout, parse_scene};
use lap_service::server::router;
use lap_service::session::SessionStore;
use serde_json::{json, Value};
use tower::ServiceExt;

fn scene_text(seed: u64) -> String {
    let dir = tempfile::tempdir().unwrap();
    let paths = write_synthetic_corpus(dir.path(), 1, seed, &SynthConfig::default()).unwrap();
    std::fs::read_to_string(&paths[0]).unwrap()
}

fn app(cfg: Config) -> Router {
    router(Arc::new(SessionStore::new(cfg)))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, String) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, text) = call(app, method, uri, body.map(|b| b.to_string())).await;
    (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
}

async fn create(app: &Router, scene: &str) -> (String, GridLayout) {
    let (status, text) = call(app, "POST", "/sessions", Some(scene.to_string())).await;
    assert_eq!(status, StatusCode::CREATED, "{text}");
    let v: Value = serde_json::from_str(&text).unwrap();
    (v["id"].as_str().unwrap().to_string(), serde_json::from_value(v["state"].clone()).unwrap())
}

fn layout(v: &Value) -> GridLayout {
    serde_json::from_value(v.clone()).unwrap()
}

#[tokio::test(flavor = "multi_thread")]
async fn act_state_and_undo() {
    let app = app(Config::default());
    let (id, initial) = create(&app, &scene_text(1)).await;
    let (_, listed) = call_json(&app, "GET", "/sessions", None).await;
    assert_eq!(listed["sessions"], json!([id]));

    let (status, r) = call_json(&app, "POST", &format!("/sessions/{id}/actions"), Some(json!({ "text": "SELECT obj_0\nMOVE [1,0,0]" }))).await;
    assert_eq!(status, StatusCode::OK);
    let moved = layout(&r["state"]);
    let mut expected = initial.clone();
    expected.objects[0].pos[0] += 1;
    assert_eq!(moved, expected);
    assert_eq!(r["applied"], "SELECT obj_0\nMOVE [1, 0, 0]");

    let (_, state) = call_json(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(layout(&state), moved);

    let (status, undone) = call_json(&app, "POST", &format!("/sessions/{id}/undo"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(layout(&undone["state"]), initial);
    // Undo with an empty history is a no-op.
    let (_, again) = call_json(&app, "POST", &format!("/sessions/{id}/undo"), None).await;
    assert_eq!(layout(&again["state"]), initial);
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_lines_come_back_as_diagnostics() {
    let app = app(Config::default());
    let (id, initial) = create(&app, &scene_text(2)).await;
    let text = "SELECT obj_0\nMOVE [0, 0, 2]\nWIGGLE obj_0\nSELECT obj_99\nMOVE [1, 0, 0]";
    let (status, r) = call_json(&app, "POST", &format!("/sessions/{id}/actions"), Some(json!({ "text": text }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(r["diagnostics"].as_array().unwrap().len(), 1);
    assert_eq!(r["diagnostics"][0]["line"], 3);
    assert!(!r["violations"].as_array().unwrap().is_empty());
    assert_eq!(layout(&r["state"]).objects[0].pos[2], initial.objects[0].pos[2] + 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_sessions_and_bad_bodies() {
    let app = app(Config::default());
    for (method, uri, body) in [
        ("GET", "/sessions/nope/state", None),
        ("POST", "/sessions/nope/undo", None),
        ("POST", "/sessions/nope/actions", Some(json!({ "text": "STOP" }))),
        ("GET", "/sessions/nope/export?format=grid", None),
    ] {
        let (status, v) = call_json(&app, method, uri, body).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert!(v["error"].as_str().unwrap().contains("nope"));
    }

    let mut bad: Value = serde_json::from_str(&scene_text(3)).unwrap();
    bad["boxes"][1]["size"] = json!([1.0, "tall", 1.0]);
    let (status, v) = call_json(&app, "POST", "/sessions", Some(bad)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("boxes[1].size"), "{v}");

    let (id, _) = create(&app, &scene_text(3)).await;
    let (status, _) = call_json(&app, "GET", &format!("/sessions/{id}/export?format=pdf"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, v) = call_json(&app, "POST", &format!("/sessions/{id}/refine"), Some(json!({ "policy": "external" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{v}");
}

#[tokio::test(flavor = "multi_thread")]
async fn exports_round_trip() {
    let app = app(Config::default());
    let (id, _) = create(&app, &scene_text(4)).await;
    call_json(&app, "POST", &format!("/sessions/{id}/actions"), Some(json!({ "text": "SELECT obj_1\nROTATE_Y [2]\nMOVE [3, 0, -1]" }))).await;
    let (_, state) = call_json(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    let state = layout(&state);

    let (status, grid) = call(&app, "GET", &format!("/sessions/{id}/export?format=grid"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(parse_layout(&grid).unwrap(), state);

    // The camera export re-canonicalizes to the same layout up to a global
    // grid shift.
    let (_, camera) = call(&app, "GET", &format!("/sessions/{id}/export?format=camera"), None).await;
    let scene = parse_scene(&camera).unwrap();
    let back = build_grid_layout(&scene.boxes, &scene.intrinsics, state.config.delta, state.config.n_theta).unwrap();
    let shift = [0, 1, 2].map(|k| back.objects[0].pos[k] - state.objects[0].pos[k]);
    for (a, b) in back.objects.iter().zip(&state.objects) {
        assert_eq!((a.id, a.size, a.yaw_idx), (b.id, b.size, b.yaw_idx));
        assert_eq!([0, 1, 2].map(|k| a.pos[k] - b.pos[k]), shift);
    }

    let (_, mesh) = call(&app, "GET", &format!("/sessions/{id}/export?format=mesh"), None).await;
    assert_eq!(mesh.lines().filter(|l| l.starts_with("v ")).count(), 8 * state.len());
    assert_eq!(mesh.lines().filter(|l| l.starts_with("f ")).count(), 12 * state.len());
}

#[tokio::test(flavor = "multi_thread")]
async fn rule_refinement_and_settling_clear_violations() {
    let app = app(Config::default());
    let (id, _) = create(&app, &scene_text(5)).await;
    // Lift the first object off its support.
    call_json(&app, "POST", &format!("/sessions/{id}/actions"), Some(json!({ "text": "SELECT obj_0\nMOVE [0, 12, 0]" }))).await;
    let (_, before) = call_json(&app, "GET", &format!("/sessions/{id}/metrics"), None).await;
    let floating_svr = before["SVR"].as_f64().unwrap();

    let (status, r) = call_json(&app, "POST", &format!("/sessions/{id}/refine"), Some(json!({ "policy": "rule", "rounds": 4 }))).await;
    assert_eq!(status, StatusCode::OK, "{r}");
    assert_eq!(r["converged"], true);
    let (_, m) = call_json(&app, "GET", &format!("/sessions/{id}/metrics"), None).await;
    assert_eq!(m["SVR"], 0.0);
    assert_eq!(m["# Collisions"], 0.0);
    assert!(m["SVR"].as_f64().unwrap() <= floating_svr);

    // Settling after another lift lands everything back on its supports.
    call_json(&app, "POST", &format!("/sessions/{id}/actions"), Some(json!({ "text": "SELECT obj_1\nMOVE [0, 7, 0]" }))).await;
    let scene: Value = serde_json::from_str(&scene_text(5)).unwrap();
    let contacts = scene["contacts"].as_str().unwrap().to_string();
    let (status, r) = call_json(&app, "POST", &format!("/sessions/{id}/assemble"), Some(json!({ "contacts": contacts }))).await;
    assert_eq!(status, StatusCode::OK);
    assert!(r["diagnostics"].as_array().unwrap().is_empty());
    let (_, m) = call_json(&app, "GET", &format!("/sessions/{id}/metrics"), None).await;
    assert_eq!(m["SVR"], 0.0);
}

#[tokio::test(flavor = "multi_thread")]
async fn external_failures_return_the_partial_trajectory() {
    let mock = common::mock_planner(&["SELECT obj_0\nMOVE [1, 0, 0]", ""], Duration::ZERO);
    let mut cfg = Config::default();
    cfg.refine.endpoint = Some(mock.url.clone());
    let app = app(cfg);
    let (id, initial) = create(&app, &scene_text(6)).await;
    let (status, r) = call_json(&app, "POST", &format!("/sessions/{id}/refine"), Some(json!({ "policy": "external" }))).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(r["partial"]["rounds_used"], 1);
    // The completed round stays in the session.
    let (_, state) = call_json(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(layout(&state).objects[0].pos[0], initial.objects[0].pos[0] + 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_edits_to_one_session_are_serialized() {
    let app = app(Config::default());
    let (id, initial) = create(&app, &scene_text(7)).await;
    let mut tasks = Vec::new();
    for _ in 0..24 {
        let app = app.clone();
        let uri = format!("/sessions/{id}/actions");
        tasks.push(tokio::spawn(async move {
            call_json(&app, "POST", &uri, Some(json!({ "text": "SELECT obj_0\nMOVE [1, 0, 0]" }))).await.0
        }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    let (_, state) = call_json(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(layout(&state).objects[0].pos[0], initial.objects[0].pos[0] + 24);
    for _ in 0..24 {
        call_json(&app, "POST", &format!("/sessions/{id}/undo"), None).await;
    }
    let (_, state) = call_json(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(layout(&state), initial);
}
