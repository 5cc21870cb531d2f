//! The HTTP scoring client against a local stub service.

mod common;

use std::sync::atomic::Ordering;
use std::time::Duration;

use common::stub_server;
use skintone_audit::imaging::RasterImage;
use skintone_audit::model::{Classifier, ModelError, RemoteClassifier, RemoteConfig};

fn client(endpoint: &str) -> RemoteClassifier {
    let mut c = RemoteConfig::new(endpoint);
    c.base_backoff = Duration::from_millis(5);
    c.max_backoff = Duration::from_millis(20);
    c.timeout = Duration::from_secs(5);
    RemoteClassifier::new(c)
}

fn img() -> RasterImage {
    RasterImage::filled(8, 8, [120, 90, 70])
}

#[test]
fn score_is_echoed() {
    let s = stub_server(|_, _| (200, r#"{"score": 0.42}"#.into()));
    assert_eq!(client(&s.endpoint).score(&img()).unwrap().value(), 0.42);
}

#[test]
fn no_face_sentinel() {
    let s = stub_server(|_, _| (200, r#"{"error": "no_face"}"#.into()));
    assert!(matches!(client(&s.endpoint).score(&img()), Err(ModelError::NoFace)));
}

#[test]
fn out_of_range_score_is_malformed() {
    let s = stub_server(|_, _| (200, r#"{"score": 1.3}"#.into()));
    assert!(matches!(client(&s.endpoint).score(&img()), Err(ModelError::MalformedReply(_))));
    assert_eq!(s.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn body_carries_base64_png() {
    let s = stub_server(|_, body| {
        let v: serde_json::Value = serde_json::from_str(body).unwrap();
        let ok = v["image"].as_str().is_some_and(|b| b.starts_with("iVBORw0KGgo"));
        (200, format!(r#"{{"score": {}}}"#, if ok { 0.9 } else { 0.1 }))
    });
    assert_eq!(client(&s.endpoint).score(&img()).unwrap().value(), 0.9);
}

#[test]
fn transient_failures_are_retried() {
    let s = stub_server(|i, _| match i {
        0 => (503, "{}".into()),
        1 => (429, "{}".into()),
        _ => (200, r#"{"score": 0.25}"#.into()),
    });
    assert_eq!(client(&s.endpoint).score(&img()).unwrap().value(), 0.25);
    assert_eq!(s.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn retries_are_bounded() {
    let s = stub_server(|_, _| (500, "{}".into()));
    let c = client(&s.endpoint);
    assert!(matches!(c.score(&img()), Err(ModelError::Transport(_))));
    assert_eq!(s.hits.load(Ordering::SeqCst), c.config().max_attempts as usize);
}

#[test]
fn unreachable_endpoint_is_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let r = client(&format!("http://{addr}/score")).score(&img());
    assert!(matches!(r, Err(ModelError::Transport(_))));
}
