mod common;

use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use axum::Router;
use post_core::{post_score, LandmarkSet, Point2};
use post_pipeline::service::{router, AppState, Interpretation, ServiceConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tower::ServiceExt;

const BOUNDARY: &str = "post-test-boundary";

fn app(config: ServiceConfig) -> Router {
    router(AppState::new(common::scorer(), config))
}

fn multipart(bytes: &[u8]) -> Body {
    let mut body = Vec::new();
    body.extend_from_slice(
        format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"fixture.png\"\r\nContent-Type: image/png\r\n\r\n")
            .as_bytes(),
    );
    body.extend_from_slice(bytes);
    body.extend_from_slice(format!("\r\n--{BOUNDARY}--\r\n").as_bytes());
    Body::from(body)
}

fn score_request(bytes: &[u8], token: Option<&str>) -> Request<Body> {
    let mut b = Request::post("/api/v1/score").header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}"));
    if let Some(t) = token {
        b = b.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    b.body(multipart(bytes)).unwrap()
}

fn recompute_request(body: impl Into<Body>) -> Request<Body> {
    Request::post("/api/v1/recompute")
        .header(header::CONTENT_TYPE, "application/json")
        .body(body.into())
        .unwrap()
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn without_timings(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timings_ms");
    v
}

fn landmarks_json(lm: &LandmarkSet<f64>) -> String {
    serde_json::json!({ "landmarks": lm }).to_string()
}

#[tokio::test]
async fn health_lists_model_hashes() {
    let f = common::fixture();
    let (status, body) = call(&app(ServiceConfig::default()), Request::get("/api/v1/health").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["models"]["detector"], f.detector.weights_sha256());
    assert_eq!(body["models"]["landmarks"], f.landmarks.weights_sha256());
}

#[tokio::test]
async fn score_returns_schema_valid_and_repeatable_json() {
    let f = common::fixture();
    let app = app(ServiceConfig::default());
    let (status, a) = call(&app, score_request(&f.png, None)).await;
    assert_eq!(status, StatusCode::OK, "{a}");
    for key in ["image_id", "box", "landmarks", "confidence", "post", "models", "timings_ms", "frames"] {
        assert!(a.get(key).is_some(), "missing {key}");
    }
    for key in ["A", "B", "Bp", "C", "Cp"] {
        assert_eq!(a["landmarks"][key].as_array().unwrap().len(), 2);
        assert!(a["confidence"][key].is_number());
    }
    for key in ["ratio_left", "ratio_right", "score"] {
        assert!(a["post"][key].as_f64().unwrap() > 0.0);
    }
    assert_eq!(a["image_id"], "fixture.png");
    let (_, b) = call(&app, score_request(&f.png, None)).await;
    assert_eq!(without_timings(a), without_timings(b));
}

#[tokio::test]
async fn bearer_token_is_enforced() {
    let f = common::fixture();
    let app = app(ServiceConfig {
        token: Some("s3cret".into()),
        ..ServiceConfig::default()
    });
    let (status, body) = call(&app, score_request(&f.png, None)).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_eq!(body["error"], "Unauthorized");
    let (status, _) = call(&app, score_request(&f.png, Some("wrong"))).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = call(&app, score_request(&f.png, Some("s3cret"))).await;
    assert_eq!(status, StatusCode::OK);
    let mut req = recompute_request(landmarks_json(&f.record.landmarks));
    req.headers_mut().insert(header::AUTHORIZATION, "Bearer s3cret".parse().unwrap());
    assert_eq!(call(&app, req).await.0, StatusCode::OK);
}

#[tokio::test]
async fn blank_image_is_unprocessable() {
    let blank = image::RgbImage::from_pixel(96, 96, image::Rgb([128, 128, 128]));
    let (status, body) = call(&app(ServiceConfig::default()), score_request(&common::png_bytes(&blank), None)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "NoDetection");
    assert!(body["detail"].is_string());
}

#[tokio::test]
async fn malformed_uploads_are_bad_requests() {
    let app = app(ServiceConfig::default());
    let (status, body) = call(&app, score_request(b"definitely not a png", None)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "InvalidImage");
    let req = Request::post("/api/v1/score")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from("{}"))
        .unwrap();
    assert_eq!(call(&app, req).await.0, StatusCode::BAD_REQUEST);
    let empty = format!("--{BOUNDARY}--\r\n");
    let req = Request::post("/api/v1/score")
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(empty))
        .unwrap();
    assert_eq!(call(&app, req).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn oversized_upload_is_rejected() {
    let f = common::fixture();
    let app = app(ServiceConfig {
        max_body_bytes: 1024,
        ..ServiceConfig::default()
    });
    let (status, _) = call(&app, score_request(&vec![0u8; 4096], None)).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    assert!(f.png.len() > 1024);
}

#[tokio::test]
async fn recompute_symmetric_and_degenerate() {
    let app = app(ServiceConfig::default());
    let body = r#"{"landmarks": {"A": [0, 0], "B": [-1, -1], "Bp": [1, -1], "C": [-1, -2], "Cp": [1, -2]}}"#;
    let (status, v) = call(&app, recompute_request(body)).await;
    assert_eq!(status, StatusCode::OK);
    assert!((v["score"].as_f64().unwrap() - 2f64.sqrt()).abs() < 1e-12);
    assert!(v.get("interpretation").is_none());

    let degenerate = r#"{"landmarks": {"A": [0, 0], "B": [-1, -1], "Bp": [1, -1], "C": [-1, -1], "Cp": [1, -2]}}"#;
    let (status, v) = call(&app, recompute_request(degenerate)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "DegenerateGeometry");

    for bad in ["", "{", r#"{"landmarks": {"A": [0, 0]}}"#, r#"{"landmarks": {"A": [0, 0], "B": [-1, -1], "Bp": [1, -1], "C": [-1, -2], "Cp": [1, -2], "frame": "crop"}}"#] {
        let (status, v) = call(&app, recompute_request(bad)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{bad}");
        assert!(v["detail"].is_string());
    }
}

#[tokio::test]
async fn recompute_of_a_report_is_idempotent() {
    let f = common::fixture();
    let app = app(ServiceConfig::default());
    let (_, report) = call(&app, score_request(&f.png, None)).await;
    let body = serde_json::json!({"landmarks": report["landmarks"]}).to_string();
    let (status, v) = call(&app, recompute_request(body)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v, report["post"]);
}

#[tokio::test]
async fn wire_result_equals_in_process_bit_for_bit() {
    let app = app(ServiceConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..200 {
        let pts: [Point2<f64>; 5] =
            std::array::from_fn(|_| Point2::new(rng.random_range(-500.0..2500.0), rng.random_range(-500.0..2500.0)));
        let lm = LandmarkSet::from_points(pts, post_core::Frame::Original);
        let (status, v) = call(&app, recompute_request(landmarks_json(&lm))).await;
        let local = serde_json::to_value(post_score(&lm).unwrap()).unwrap();
        assert_eq!(status, StatusCode::OK);
        assert_eq!(v.to_string(), local.to_string());
    }
}

#[tokio::test]
async fn interpretation_table_is_applied() {
    let app = app(ServiceConfig {
        interpretations: vec![Interpretation {
            min: 1.0,
            max: 2.0,
            text: "moderate".into(),
        }],
        ..ServiceConfig::default()
    });
    let body = r#"{"landmarks": {"A": [0, 0], "B": [-1, -1], "Bp": [1, -1], "C": [-1, -2], "Cp": [1, -2]}}"#;
    let (_, v) = call(&app, recompute_request(body)).await;
    assert_eq!(v["interpretation"], "moderate");
}
