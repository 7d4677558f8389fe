use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::{Body, Bytes};
use axum::http::{Request, StatusCode};
use axum::Router;
use conceptkit::editor::{EditKind, EditStatus, EditTransaction};
use conceptkit::provider::{Capability, MockErrorKind, MockReply, MockRule};
use conceptkit::{RasterImage, SessionId, TxId};
use conceptkit_server::{router, App, Job, ServerConfig, Store};
use futures::StreamExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn config(dir: &std::path::Path, rules: Vec<MockRule>) -> ServerConfig {
    let mut cfg = ServerConfig {
        data_dir: dir.to_path_buf(),
        ..ServerConfig::default()
    };
    cfg.provider.image_size = 96;
    cfg.provider.mock_rules = rules;
    cfg
}

async fn call(r: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Bytes) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = r.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap())
}

async fn json_of(r: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(r, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn wait_idle(r: &Router, id: &str) -> Value {
    let start = Instant::now();
    loop {
        let (_, s) = json_of(r, "GET", &format!("/sessions/{id}"), None).await;
        if s["job"].is_null() {
            return s;
        }
        assert!(start.elapsed() < Duration::from_secs(30), "job did not finish: {s}");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

fn sketch() -> Value {
    json!({
        "canvas": { "width": 256, "height": 256 },
        "strokes": [{
            "points": [{ "x": 20.0, "y": 200.0, "t": 0 }, { "x": 230.0, "y": 200.0, "t": 40 }, { "x": 200.0, "y": 120.0, "t": 90 }],
            "width": 4.0,
            "color": [0, 0, 0]
        }]
    })
}

async fn decomposed(r: &Router) -> String {
    let (s, v) = json_of(r, "POST", "/sessions", None).await;
    assert_eq!(s, StatusCode::CREATED);
    let id = v["session_id"].as_str().unwrap().to_owned();
    let (s, _) = call(r, "PUT", &format!("/sessions/{id}/sketch"), Some(sketch())).await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = call(r, "POST", &format!("/sessions/{id}/brief"), Some(json!({ "transcript": "a pink pickup truck" }))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let v = wait_idle(r, &id).await;
    assert_eq!(v["state"], "Generated");
    assert_eq!(v["candidates"].as_array().unwrap().len(), 3);
    let (s, _) = call(r, "POST", &format!("/sessions/{id}/select"), Some(json!({ "index": 0 }))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let v = wait_idle(r, &id).await;
    assert_eq!(v["state"], "Decomposed", "{v}");
    id
}

async fn events(r: &Router, id: &str) -> Vec<Value> {
    let (_, body) = call(r, "GET", &format!("/sessions/{id}/events?follow=false"), None).await;
    String::from_utf8(body.to_vec())
        .unwrap()
        .lines()
        .filter_map(|l| l.strip_prefix("data: "))
        .map(|d| serde_json::from_str(d).unwrap())
        .collect()
}

#[tokio::test(flavor = "multi_thread")]
async fn pickup_walkthrough() {
    let dir = tempfile::tempdir().unwrap();
    let r = router(App::open(config(dir.path(), vec![])).unwrap());
    let id = decomposed(&r).await;

    let (s, chart) = json_of(&r, "GET", &format!("/sessions/{id}/chart"), None).await;
    assert_eq!(s, StatusCode::OK);
    let chart: conceptkit::mapping::FunctionChart = serde_json::from_value(chart).unwrap();
    assert!(!chart.components.is_empty());
    assert!(chart.check_shape());
    assert_eq!(chart.find("wheel size").unwrap().0, "wheel");

    let (s, v) = json_of(
        &r,
        "POST",
        &format!("/sessions/{id}/edits"),
        Some(json!({ "kind": "recommendation", "function": "wheel size", "chosen": "20 inches" })),
    )
    .await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");
    let v = wait_idle(&r, &id).await;
    assert_eq!(v["state"], "Editing");
    assert_eq!(v["version"], 2);
    assert_eq!(v["transactions"][0]["prompt"], "change wheel size from 19 inches to 20 inches");

    let (s, png) = call(&r, "GET", &format!("/sessions/{id}/image?version=2"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(RasterImage::from_png(&png).unwrap().content_hash(), v["image_hash"].as_str().unwrap());
    let (s, v1) = call(&r, "GET", &format!("/sessions/{id}/image?version=1"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_ne!(v1, png);
    let (s, _) = call(&r, "GET", &format!("/sessions/{id}/image?version=3"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let evs = events(&r, &id).await;
    let kinds: Vec<&str> = evs.iter().map(|e| e["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["RefinementDone", "CandidatesReady", "SegmentationReady", "ChartReady", "EditApplied"]);
    let seqs: Vec<u64> = evs.iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs, [1, 2, 3, 4, 5]);
    let (_, chart) = json_of(&r, "GET", &format!("/sessions/{id}/chart"), None).await;
    let chart: conceptkit::mapping::FunctionChart = serde_json::from_value(chart).unwrap();
    assert_eq!(chart.find("wheel size").unwrap().1.current, "20 inches");

    let (s, _) = call(&r, "GET", &format!("/sessions/{id}/overlay"), None).await;
    assert_eq!(s, StatusCode::OK);
    let (_, regions) = json_of(&r, "GET", &format!("/sessions/{id}/regions"), None).await;
    assert_eq!(regions["legend"]["entries"].as_array().unwrap().len(), 5);
}

#[tokio::test(flavor = "multi_thread")]
async fn error_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let delay = MockRule {
        reply: MockReply::Default,
        ..MockRule::text(Capability::Inpaint, "")
    }
    .delayed(1500);
    let r = router(App::open(config(dir.path(), vec![delay])).unwrap());

    let (s, v) = json_of(&r, "GET", "/sessions/nope", None).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::NOT_FOUND, Some("NotFound")));

    let (_, v) = json_of(&r, "POST", "/sessions", None).await;
    let fresh = v["session_id"].as_str().unwrap().to_owned();
    let (s, _) = call(&r, "POST", &format!("/sessions/{fresh}/select"), Some(json!({ "index": 0 }))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = call(&r, "POST", &format!("/sessions/{fresh}/select"), Some(json!({ "idx": "x" }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&r, "POST", &format!("/sessions/{fresh}/brief"), Some(json!({}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&r, "GET", &format!("/sessions/{fresh}/chart"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let bad_sketch = json!({ "canvas": { "width": 10, "height": 10 }, "strokes": [{ "points": [{ "x": 50.0, "y": 1.0, "t": 0 }, { "x": 1.0, "y": 1.0, "t": 1 }], "width": 2.0, "color": [0, 0, 0] }] });
    let (s, _) = call(&r, "PUT", &format!("/sessions/{fresh}/sketch"), Some(bad_sketch)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let id = decomposed(&r).await;
    let (s, _) = call(&r, "PUT", &format!("/sessions/{id}/sketch"), Some(sketch())).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let edit = json!({ "kind": "recommendation", "function": "wheel size", "chosen": "20 inches" });
    let (s, _) = call(&r, "POST", &format!("/sessions/{id}/edits"), Some(json!({ "kind": "recommendation", "function": "wheel size", "chosen": "19 inches" }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&r, "POST", &format!("/sessions/{id}/edits"), Some(edit.clone())).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let (s, v) = json_of(&r, "POST", &format!("/sessions/{id}/edits"), Some(edit)).await;
    assert_eq!(s, StatusCode::CONFLICT, "{v}");
    let v = wait_idle(&r, &id).await;
    assert_eq!(v["transactions"].as_array().unwrap().len(), 1);
    assert_eq!(v["transactions"][0]["status"], "Applied");
}

#[tokio::test(flavor = "multi_thread")]
async fn transcription_failure_is_502() {
    let dir = tempfile::tempdir().unwrap();
    let rule = MockRule::error(Capability::Transcribe, MockErrorKind::ContentPolicy);
    let r = router(App::open(config(dir.path(), vec![rule])).unwrap());
    let (_, v) = json_of(&r, "POST", "/sessions", None).await;
    let id = v["session_id"].as_str().unwrap();
    let (s, v) = json_of(&r, "POST", &format!("/sessions/{id}/brief"), Some(json!({ "audio_base64": "aGVsbG8=" }))).await;
    assert_eq!(s, StatusCode::BAD_GATEWAY);
    assert_eq!(v["error"], "ContentPolicyRejection");
}

#[tokio::test(flavor = "multi_thread")]
async fn sketch_edit_and_audio_brief() {
    let dir = tempfile::tempdir().unwrap();
    let r = router(App::open(config(dir.path(), vec![])).unwrap());
    let (_, v) = json_of(&r, "POST", "/sessions", None).await;
    let id = v["session_id"].as_str().unwrap().to_owned();
    // "a pink pickup truck"
    let audio = "YSBwaW5rIHBpY2t1cCB0cnVjaw==";
    let (s, v) = json_of(&r, "POST", &format!("/sessions/{id}/brief"), Some(json!({ "audio_base64": audio, "candidates": 2 }))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    assert_eq!(v["transcript"], "a pink pickup truck");
    wait_idle(&r, &id).await;
    call(&r, "POST", &format!("/sessions/{id}/select"), Some(json!({ "index": 1 }))).await;
    wait_idle(&r, &id).await;
    let edit = json!({
        "kind": "sketch",
        "component": "wheel",
        "transcript": "spoked rims",
        "strokes": []
    });
    let (s, _) = call(&r, "POST", &format!("/sessions/{id}/edits"), Some(edit)).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let v = wait_idle(&r, &id).await;
    assert_eq!(v["transactions"][0]["kind"], "Sketch");
    assert_eq!(v["transactions"][0]["status"], "Applied");
    assert_eq!(v["version"], 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn restart_fails_interrupted_edit() {
    let dir = tempfile::tempdir().unwrap();
    let id = {
        let r = router(App::open(config(dir.path(), vec![])).unwrap());
        decomposed(&r).await
    };
    let store = Store::open(dir.path()).unwrap();
    let sid = SessionId::new(id.clone());
    let mut doc = store.load(&sid).unwrap().unwrap();
    let hash_v1 = doc.versions[0].clone();
    let tx = TxId("interrupted".into());
    doc.transactions.push(EditTransaction::pending(tx.clone(), EditKind::Recommendation, "wheel", 1));
    doc.job = Some(Job::Edit { tx });
    store.save(&doc).unwrap();

    let app = App::open(config(dir.path(), vec![])).unwrap();
    let r = router(Arc::clone(&app));
    let v = wait_idle(&r, &id).await;
    assert_eq!(v["state"], "Decomposed");
    assert_eq!(v["version"], 1);
    assert_eq!(v["image_hash"], hash_v1.as_str());
    assert_eq!(v["transactions"][0]["status"], "Failed");
    let doc = store.load(&sid).unwrap().unwrap();
    assert_eq!(doc.transactions[0].status, EditStatus::Failed);
    let evs = events(&r, &id).await;
    assert_eq!(evs.last().unwrap()["kind"], "EditRejected");
    assert_eq!(evs.len(), 5);
}

#[tokio::test(flavor = "multi_thread")]
async fn live_subscribers_see_identical_order() {
    let dir = tempfile::tempdir().unwrap();
    let r = router(App::open(config(dir.path(), vec![])).unwrap());
    let (_, v) = json_of(&r, "POST", "/sessions", None).await;
    let id = v["session_id"].as_str().unwrap().to_owned();

    let subscribe = |r: Router, id: String| async move {
        let req = Request::get(format!("/sessions/{id}/events")).body(Body::empty()).unwrap();
        let mut body = r.oneshot(req).await.unwrap().into_body().into_data_stream();
        let mut seqs = Vec::new();
        let mut buf = String::new();
        while seqs.len() < 4 {
            let chunk = tokio::time::timeout(Duration::from_secs(30), body.next()).await.unwrap().unwrap().unwrap();
            buf.push_str(std::str::from_utf8(&chunk).unwrap());
            while let Some(end) = buf.find("\n\n") {
                let frame: String = buf.drain(..end + 2).collect();
                if let Some(id) = frame.lines().find_map(|l| l.strip_prefix("id: ")) {
                    seqs.push(id.parse::<u64>().unwrap());
                }
            }
        }
        seqs
    };
    let a = tokio::spawn(subscribe(r.clone(), id.clone()));
    let b = tokio::spawn(subscribe(r.clone(), id.clone()));
    tokio::time::sleep(Duration::from_millis(50)).await;
    call(&r, "POST", &format!("/sessions/{id}/brief"), Some(json!({ "transcript": "a robot dog" }))).await;
    wait_idle(&r, &id).await;
    call(&r, "POST", &format!("/sessions/{id}/select"), Some(json!({ "index": 0 }))).await;
    let (a, b) = (a.await.unwrap(), b.await.unwrap());
    assert_eq!(a, [1, 2, 3, 4]);
    assert_eq!(a, b);
}
