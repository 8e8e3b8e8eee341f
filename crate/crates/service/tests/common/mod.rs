#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use roboguard_core::Scenario;
use roboguard_service::{router, AppState, LiveOptions, LiveSim, Pace, RunClock, Store};
use serde_json::Value;
use tower::ServiceExt;

pub const EPOCH: &str = "2026-01-01T00:00:00.000Z";

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::load(&fixture(name)).expect("scenario fixture loads")
}

pub fn options(pace: Pace, enforce_roles: bool) -> LiveOptions {
    LiveOptions {
        pace,
        slice: 0.05,
        enforce_roles,
        clock: RunClock::new(EPOCH.parse().unwrap()),
    }
}

pub struct Harness {
    pub app: Router,
    pub store: Arc<Store>,
    pub live: LiveSim,
}

pub fn harness(s: &Scenario, pace: Pace, enforce_roles: bool) -> Harness {
    let store = Arc::new(Store::in_memory());
    let live = LiveSim::spawn(s.prepare(None).unwrap(), store.clone(), options(pace, enforce_roles)).unwrap();
    let app = router(AppState {
        store: store.clone(),
        live: live.handle(),
    });
    Harness { app, store, live }
}

pub async fn call(
    app: &Router,
    method: Method,
    uri: &str,
    role: Option<&str>,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(r) = role {
        req = req.header("x-role", r);
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

pub async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Method::GET, uri, None, None).await
}

/// Id of the first CN of `cn_type` in a `/cns` listing.
pub fn cn_of_type(cns: &Value, cn_type: &str) -> String {
    cns.as_array()
        .unwrap()
        .iter()
        .find(|c| c["cn_type"] == cn_type)
        .unwrap_or_else(|| panic!("no {cn_type} listed"))["cn_id"]
        .as_str()
        .unwrap()
        .to_string()
}
