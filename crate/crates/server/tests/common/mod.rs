#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use neglect_core::domain::FovPoint;
use neglect_core::subject_sim::SimulatedSubject;
use neglect_core::SpawnPoint;
use neglect_server::{router, App, Created, Next, Stimulus};
use serde_json::Value;
use tower::ServiceExt;

pub struct Reply {
    pub status: StatusCode,
    pub content_type: Option<String>,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }

    pub fn parse<T: serde::de::DeserializeOwned>(&self) -> T {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }
}

pub fn app() -> Router {
    router(Arc::new(App::new(None)))
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<&Value>) -> Reply {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(serde_json::to_vec(b).unwrap()))).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let content_type = res.headers().get("content-type").map(|v| v.to_str().unwrap().to_string());
    let body = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, content_type, body }
}

pub async fn get(app: &Router, uri: &str) -> Reply {
    call(app, Method::GET, uri, None).await
}

pub async fn post(app: &Router, uri: &str, body: &Value) -> Reply {
    call(app, Method::POST, uri, Some(body)).await
}

pub async fn create(app: &Router, body: Value) -> Created {
    let r = post(app, "/api/v1/sessions", &body).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&r.body));
    r.parse()
}

pub fn spawn_of(s: &Stimulus) -> SpawnPoint {
    SpawnPoint { id: s.spawn_id, pos: FovPoint::new(s.azimuth_deg, s.elevation_deg), scene: s.scene }
}

pub fn answer(subject: &SimulatedSubject, s: &Stimulus) -> Value {
    let m = subject.measure(&spawn_of(s), s.trial);
    serde_json::json!({ "spawn_id": s.spawn_id, "raw_time_s": m.raw_time_s, "found": m.found })
}

/// Answers one stimulus through the API.
pub async fn step(app: &Router, id: &str, subject: &SimulatedSubject, s: &Stimulus) -> Next {
    let r = post(app, &format!("/api/v1/sessions/{id}/response"), &answer(subject, s)).await;
    assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.body));
    r.parse()
}

/// Runs a session to completion, returning the served spawn ids.
pub async fn drive(app: &Router, id: &str, first: Stimulus, subject: &SimulatedSubject) -> Vec<u32> {
    let mut served = vec![first.spawn_id];
    let mut current = first;
    loop {
        let next = step(app, id, subject, &current).await;
        match next.stimulus {
            Some(s) => {
                served.push(s.spawn_id);
                current = s;
            }
            None => {
                assert!(next.finished);
                return served;
            }
        }
    }
}
