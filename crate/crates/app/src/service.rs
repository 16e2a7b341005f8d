//! JSON-over-HTTP inference service over one immutable model snapshot.
//!
//! Every failure answers 400 with `{"code", "message"}`, where `code` is the
//! stable error name of the failing operation.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use chartforge_core::mesh::{parse_obj, write_obj};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::pipeline::Model;

#[derive(Clone)]
pub struct ServiceState {
    pub model: Arc<Model>,
    /// Refinement steps after the encoder; 0 keeps encoder-only inversion.
    pub refine_steps: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Manifest {
    pub attributes: Vec<String>,
    pub d: usize,
    pub n: usize,
    pub charts: usize,
    pub model_hash: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateRequest {
    r: Vec<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InvertRequest {
    obj: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EditRequest {
    obj: String,
    attribute: String,
    value: f64,
    steps: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct TransferRequest {
    ref_obj: String,
    target_obj: String,
    attribute: String,
}

fn respond(result: Result<serde_json::Value>) -> Response {
    match result {
        Ok(v) => (StatusCode::OK, [(header::CONTENT_TYPE, "application/json")], v.to_string()).into_response(),
        Err(e) => {
            let body = json!({ "code": e.code(), "message": e.to_string() });
            (StatusCode::BAD_REQUEST, [(header::CONTENT_TYPE, "application/json")], body.to_string()).into_response()
        }
    }
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T> {
    Ok(serde_json::from_slice(body)?)
}

/// Run a model call off the async executor.
async fn compute(state: ServiceState, f: impl FnOnce(&ServiceState) -> Result<serde_json::Value> + Send + 'static) -> Response {
    let joined = tokio::task::spawn_blocking(move || f(&state)).await;
    respond(joined.unwrap_or_else(|e| Err(Error::Io(std::io::Error::other(e.to_string())))))
}

pub fn manifest(model: &Model) -> Manifest {
    Manifest {
        attributes: model.attributes().to_vec(),
        d: model.latent_dim(),
        n: model.bundle.net.n,
        charts: model.bundle.net.charts,
        model_hash: model.hash.clone(),
    }
}

async fn get_manifest(State(state): State<ServiceState>) -> Response {
    respond(serde_json::to_value(manifest(&state.model)).map_err(Error::from))
}

async fn post_generate(State(state): State<ServiceState>, body: Bytes) -> Response {
    compute(state, move |s| {
        let req: GenerateRequest = parse(&body)?;
        let seed = req.seed.unwrap_or(0);
        let g = s.model.generate(&req.r, seed)?;
        Ok(json!({ "obj": write_obj(&g.mesh), "r": g.r, "seed": g.seed }))
    })
    .await
}

async fn post_invert(State(state): State<ServiceState>, body: Bytes) -> Response {
    compute(state, move |s| {
        let req: InvertRequest = parse(&body)?;
        let inv = s.model.invert(&parse_obj(&req.obj)?, s.refine_steps)?;
        Ok(json!({ "r": inv.r, "z": inv.z, "residual": inv.residual, "obj": write_obj(&inv.mesh) }))
    })
    .await
}

async fn post_edit(State(state): State<ServiceState>, body: Bytes) -> Response {
    compute(state, move |s| {
        let req: EditRequest = parse(&body)?;
        let j = s.model.attribute_index(&req.attribute)?;
        let frames = s.model.edit(&parse_obj(&req.obj)?, j, req.value, req.steps.unwrap_or(2), s.refine_steps)?;
        Ok(json!({ "frames": frames.iter().map(write_obj).collect::<Vec<_>>() }))
    })
    .await
}

async fn post_transfer(State(state): State<ServiceState>, body: Bytes) -> Response {
    compute(state, move |s| {
        let req: TransferRequest = parse(&body)?;
        let j = s.model.attribute_index(&req.attribute)?;
        let mesh = s.model.transfer(&parse_obj(&req.ref_obj)?, &parse_obj(&req.target_obj)?, j, s.refine_steps)?;
        Ok(json!({ "obj": write_obj(&mesh) }))
    })
    .await
}

pub fn router(state: ServiceState) -> Router {
    Router::new()
        .route("/manifest", get(get_manifest))
        .route("/generate", post(post_generate))
        .route("/invert", post(post_invert))
        .route("/edit", post(post_edit))
        .route("/transfer", post(post_transfer))
        .with_state(state)
}

/// Bind and serve until the process is stopped.
pub async fn serve(state: ServiceState, port: u16) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    axum::serve(listener, router(state)).await?;
    Ok(())
}
