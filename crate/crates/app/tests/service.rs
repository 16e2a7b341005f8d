mod common;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use chartforge::service::{router, Manifest, ServiceState};
use chartforge_core::mesh::{parse_obj, write_obj};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn state() -> ServiceState {
    ServiceState { model: common::tiny_model(), refine_steps: 0 }
}

async fn call(method: &str, path: &str, body: String) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(path).header("content-type", "application/json").body(Body::from(body)).unwrap();
    let resp = router(state()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

#[tokio::test]
async fn manifest_describes_the_model() {
    let (status, body) = call("GET", "/manifest", String::new()).await;
    assert_eq!(status, StatusCode::OK);
    let m: Manifest = serde_json::from_value(body).unwrap();
    let model = common::tiny_model();
    assert_eq!(m.attributes, vec!["bulge".to_string()]);
    assert_eq!((m.d, m.n, m.charts), (4, 8, 4));
    assert_eq!(m.model_hash, model.hash);
    assert_eq!(m.model_hash.len(), 64);
}

#[tokio::test]
async fn out_of_range_request_is_a_400_range_error() {
    let (status, body) = call("POST", "/generate", json!({ "r": [1.2] }).to_string()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "RangeError");
    assert!(body["message"].as_str().unwrap().contains("1.2"));
}

#[tokio::test]
async fn malformed_bodies_are_parse_errors() {
    for body in ["{", r#"{"r": "x"}"#, r#"{"r": [0.0], "extra": 1}"#] {
        let (status, v) = call("POST", "/generate", body.into()).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert_eq!(v["code"], "ParseError", "{body}");
    }
}

#[tokio::test]
async fn concurrent_generates_agree() {
    let body = json!({ "r": [0.25], "seed": 11 }).to_string();
    let calls = (0..4).map(|_| call("POST", "/generate", body.clone()));
    let results = futures_join(calls.collect()).await;
    for (status, v) in &results {
        assert_eq!(*status, StatusCode::OK);
        assert_eq!(v["obj"], results[0].1["obj"]);
        assert_eq!(v["seed"], 11);
    }
    let expected = common::tiny_model().generate(&[0.25], 11).unwrap();
    let served = parse_obj(results[0].1["obj"].as_str().unwrap()).unwrap();
    assert_eq!(served.faces(), expected.mesh.faces());
}

async fn futures_join<F: std::future::Future<Output = (StatusCode, Value)> + Send + 'static>(futs: Vec<F>) -> Vec<(StatusCode, Value)> {
    let handles: Vec<_> = futs.into_iter().map(tokio::spawn).collect();
    let mut out = Vec::new();
    for h in handles {
        out.push(h.await.unwrap());
    }
    out
}

#[tokio::test]
async fn invert_edit_and_transfer_round_trip_meshes() {
    let model = common::tiny_model();
    let obj = write_obj(&model.generate(&[-0.3], 5).unwrap().mesh);

    let (status, inv) = call("POST", "/invert", json!({ "obj": obj }).to_string()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(inv["r"].as_array().unwrap().len(), 1);
    assert_eq!(inv["z"].as_array().unwrap().len(), 4);
    assert!(inv["residual"].as_f64().unwrap() >= 0.0);

    let (status, edit) = call("POST", "/edit", json!({ "obj": obj, "attribute": "bulge", "value": 0.5, "steps": 3 }).to_string()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(edit["frames"].as_array().unwrap().len(), 3);

    let (status, t) = call("POST", "/transfer", json!({ "refObj": obj, "targetObj": obj, "attribute": "bulge" }).to_string()).await;
    assert_eq!(status, StatusCode::OK);
    parse_obj(t["obj"].as_str().unwrap()).unwrap();

    let (status, err) = call("POST", "/edit", json!({ "obj": obj, "attribute": "wings", "value": 0.5 }).to_string()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], "ConfigError");

    let foreign = write_obj(&chartforge_core::mesh::fixtures::icosphere(1));
    let (status, err) = call("POST", "/invert", json!({ "obj": foreign }).to_string()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], "ConnectivityError");
}
