use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use fdtkit::dataio::{compute_climatology, deseasonalize, standardize};
use fdtkit::emulator::{train_lag_bank, BankOptions, EmulatorSpec};
use fdtkit::synth::{make_truth_system, simulate, TruthSpec};
use fdtkit_service::{router, ServiceState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn state() -> Arc<ServiceState> {
    let sys = make_truth_system(&TruthSpec {
        mesh_level: 1,
        ..TruthSpec::default()
    })
    .unwrap();
    let data = simulate(&sys, 3, 240, 100, 1).unwrap();
    let anoms = deseasonalize(&data, &compute_climatology(&data)).unwrap();
    let anoms = standardize(&anoms, &[0, 1]).unwrap();
    let opts = BankOptions {
        emulator: EmulatorSpec::Linear { ridge: 1e-2 },
        train_members: vec![0, 1],
        validation_members: vec![2],
        max_train_pairs: None,
        max_validation_pairs: None,
        parallel_lags: 1,
        seed: 42,
    };
    let bank = train_lag_bank(&anoms, &[1, 2, 3, 6], &opts).unwrap();
    let state = ServiceState::new(
        BTreeMap::from([("synth".to_string(), anoms)]),
        BTreeMap::from([("linear".to_string(), bank)]),
        5,
        42,
    )
    .unwrap();
    Arc::new(state)
}

async fn call(state: &Arc<ServiceState>, req: Request<Body>) -> (StatusCode, Value) {
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn get(state: &Arc<ServiceState>, uri: &str) -> (StatusCode, Value) {
    call(state, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(state: &Arc<ServiceState>, body: &Value) -> (StatusCode, Value) {
    let req = Request::post("/api/scenario")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    call(state, req).await
}

fn without_timing(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timing");
    v
}

#[tokio::test]
async fn health_and_meta() {
    let s = state();
    let (status, body) = get(&s, "/api/health").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    let (_, meta) = get(&s, "/api/meta").await;
    assert_eq!(meta["datasets"].as_array().unwrap().len(), 1);
    assert_eq!(meta["banks"].as_array().unwrap().len(), 1);
    assert_eq!(meta["nodes"], 42);
    let names: Vec<&str> = meta["presets"].as_array().unwrap().iter().map(|p| p["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["NEP", "SEP", "SEA"]);
    let (_, again) = get(&s, "/api/meta").await;
    assert_eq!(meta, again);
}

#[tokio::test]
async fn field_lookup_and_range_errors() {
    let s = state();
    let (status, body) = get(&s, "/api/field?dataset=synth&member=1&time=5&channel=y").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["values"].as_array().unwrap().len(), 42);
    assert_eq!(body["lat"].as_array().unwrap().len(), 42);
    let (status, body) = get(&s, "/api/field?dataset=synth&member=0&time=240&channel=y").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "not_found");
    assert!(body["error"]["message"].as_str().unwrap().contains("240"));
    let (status, _) = get(&s, "/api/field?dataset=nope&member=0&time=0&channel=y").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, body) = get(&s, "/api/field?member=zero&time=0&channel=y").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"]["message"].is_string());
}

#[tokio::test]
async fn unknown_route_is_structured() {
    let (status, body) = get(&state(), "/api/nothing").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "not_found");
}

#[tokio::test]
async fn zero_amplitude_scenario() {
    let s = state();
    let (status, body) = post(&s, &json!({"regions": ["NEP"], "amplitudes": {"x": 0.0}, "samples": 200})).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert!(body["total"]["y"].as_array().unwrap().iter().all(|v| v.as_f64() == Some(0.0)));
    let median = body["ood"]["median_sample"].as_f64().unwrap();
    assert!((median - 1.0).abs() < 0.25, "median OOD score {median}");
    assert!(body["timing"]["total_ms"].as_f64().unwrap() >= 0.0);
    assert!(body.get("contributions").is_none());
}

#[tokio::test]
async fn scenario_is_deterministic_and_contributions_on_request() {
    let s = state();
    let req = json!({"regions": ["NEP", {"name": "box", "lat_min": -10, "lat_max": 10, "lon_min": 350, "lon_max": 20}],
                     "amplitudes": {"x": -2.0}, "samples": 150, "seed": 7, "rule": "interp-linear",
                     "include_contributions": true});
    let (status, a) = post(&s, &req).await;
    assert_eq!(status, StatusCode::OK, "{a}");
    let (_, b) = post(&s, &req).await;
    assert_eq!(without_timing(a.clone()), without_timing(b));
    assert_eq!(a["contributions"].as_array().unwrap().len(), 4);
    assert_eq!(a["total"]["y"].as_array().unwrap().len(), 42);
    assert!(a["ood"]["mean_input"].as_f64().unwrap().is_finite());
}

#[tokio::test]
async fn concurrent_requests_agree() {
    let s = state();
    let req = json!({"regions": ["SEP"], "amplitudes": {"x": 1.0}, "samples": 100});
    let (a, b) = tokio::join!(post(&s, &req), post(&s, &req));
    assert_eq!(without_timing(a.1), without_timing(b.1));
}

#[tokio::test]
async fn schema_violations_list_fields() {
    let s = state();
    let (status, body) = post(&s, &json!({"regions": ["NEP"], "amplitudes": {"x": 1.0}, "colour": 3})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["fields"][0]["field"], "colour");
    let (status, body) = post(&s, &json!({"amplitudes": {"x": 1.0}})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["fields"][0]["field"], "regions");
    let (status, body) = post(&s, &json!({"regions": ["XYZ", {"lat_min": 50, "lat_max": 10, "lon_min": 0, "lon_max": 10}],
                                          "samples": 0})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let fields: Vec<&str> = body["error"]["fields"].as_array().unwrap().iter().map(|f| f["field"].as_str().unwrap()).collect();
    assert!(fields.contains(&"regions[0]") && fields.contains(&"samples"), "{fields:?}");
    assert!(fields.iter().any(|f| f.starts_with("regions[1].")), "{fields:?}");
    let (status, body) = post(&s, &json!({"regions": ["NEP"], "amplitudes": {"y": 1.0}})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"]["message"].as_str().unwrap().contains("y"));
    let (status, _) = post(&s, &json!({"regions": ["NEP"], "bank": "missing"})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let req = Request::post("/api/scenario")
        .header("content-type", "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    let (status, body) = call(&s, req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(!body["error"]["message"].as_str().unwrap().is_empty());
}

#[tokio::test]
async fn ood_background_scatter() {
    let (status, body) = get(&state(), "/api/ood/background").await;
    assert_eq!(status, StatusCode::OK);
    let pts = body["points"].as_array().unwrap();
    assert_eq!(pts.len(), 720);
    assert_eq!(pts[0].as_array().unwrap().len(), 2);
    assert_eq!(body["components"], 5);
}

#[tokio::test]
async fn static_bundle_is_served() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<p>console</p>").unwrap();
    let mut s = Arc::try_unwrap(state()).ok().unwrap();
    s.static_dir = Some(dir.path().to_path_buf());
    let app = router(Arc::new(s));
    let resp = app.clone().oneshot(Request::get("/index.html").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&bytes[..], b"<p>console</p>");
    let resp = app.oneshot(Request::get("/api/missing").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let body: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(body["error"]["code"], "not_found");
}
