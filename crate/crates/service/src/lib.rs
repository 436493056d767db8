//! HTTP API over an immutable workspace: the graph, its analytics, cached
//! hypothesis checks, and a stateless what-if selection endpoint.

mod config;
mod workspace;

use std::collections::BTreeSet;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, CorsLayer};
use xling_core::graph::{BloodType, LanguageRecord, TransferBin, TransferEdge};
use xling_core::selection::{compose_config, PretrainConfig, SelectionMode, SelectionRequest, DEFAULT_PRETRAIN_BUDGET};

pub use config::{ServiceConfig, DEFAULT_BIND};
pub use workspace::{Workspace, CONFIGS_FILE, GRAPH_FILE, HYPOTHESES_FILE, RESULTS_FILE};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] xling_core::Error),
    #[error("workspace: {0}")]
    Workspace(String),
    #[error("config: {0}")]
    Config(String),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server: {0}")]
    Serve(#[source] std::io::Error),
}

/// Error body: `{"code": ..., "message": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
}

struct Failure(StatusCode, ApiError);

impl Failure {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Failure(
            status,
            ApiError {
                code: code.to_owned(),
                message: message.into(),
            },
        )
    }

    fn bad_query(message: impl Into<String>) -> Self {
        Failure::new(StatusCode::BAD_REQUEST, "bad_query", message)
    }
}

impl From<xling_core::Error> for Failure {
    fn from(e: xling_core::Error) -> Self {
        use xling_core::Error as E;
        let (status, code) = match &e {
            E::Infeasible(_) => (StatusCode::UNPROCESSABLE_ENTITY, "infeasible"),
            E::Io { .. } | E::Utf8 { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
            _ => (StatusCode::BAD_REQUEST, "invalid_request"),
        };
        Failure::new(status, code, e.to_string())
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type Shared = Arc<Workspace>;
type Params = Query<Vec<(String, String)>>;

pub fn router(workspace: Arc<Workspace>) -> Router {
    Router::new()
        .route("/graph", get(graph))
        .route("/languages", get(languages))
        .route("/edges", get(edges))
        .route("/analytics", get(analytics))
        .route("/hypotheses", get(hypotheses))
        .route("/whatif", post(whatif))
        .fallback(|| async { Failure::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(workspace)
}

/// [`router`] plus CORS for `cors_origin`.
pub fn app(workspace: Arc<Workspace>, cors_origin: Option<&str>) -> Result<Router, ServiceError> {
    let router = router(workspace);
    let Some(origin) = cors_origin else {
        return Ok(router);
    };
    let allow = if origin == "*" {
        AllowOrigin::any()
    } else {
        let value =
            HeaderValue::from_str(origin).map_err(|_| ServiceError::Config(format!("bad cors_origin '{origin}'")))?;
        AllowOrigin::exact(value)
    };
    Ok(router.layer(
        CorsLayer::new()
            .allow_origin(allow)
            .allow_methods([Method::GET, Method::POST])
            .allow_headers([header::CONTENT_TYPE]),
    ))
}

/// Loads the configured workspace and serves until the process ends.
pub async fn serve(config: &ServiceConfig) -> Result<(), ServiceError> {
    let workspace = Arc::new(Workspace::load(&config.workspace_dir)?);
    let app = app(workspace, config.cors_origin.as_deref())?;
    let listener = tokio::net::TcpListener::bind(&config.bind)
        .await
        .map_err(|source| ServiceError::Bind {
            addr: config.bind.clone(),
            source,
        })?;
    axum::serve(listener, app).await.map_err(ServiceError::Serve)
}

fn query(q: Result<Params, axum::extract::rejection::QueryRejection>) -> Result<Vec<(String, String)>, Failure> {
    q.map(|Query(v)| v).map_err(|e| Failure::bad_query(e.body_text()))
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, Failure> {
    value
        .parse()
        .map_err(|_| Failure::bad_query(format!("bad value '{value}' for '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, Failure> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Failure::bad_query(format!("'{key}' must be true or false"))),
    }
}

async fn graph(State(ws): State<Shared>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], ws.graph_json.clone()).into_response()
}

async fn languages(
    State(ws): State<Shared>,
    q: Result<Params, axum::extract::rejection::QueryRejection>,
) -> Result<Json<Vec<LanguageRecord>>, Failure> {
    let (mut family, mut script, mut blood, mut feature, mut value) = (None, None, None, None, None);
    for (k, v) in query(q)? {
        match k.as_str() {
            "family" => family = Some(v),
            "script" => script = Some(v),
            "blood_type" => blood = Some(parse::<BloodType>(&k, &v)?),
            "wals_feature" => feature = Some(v),
            "value" => value = Some(v),
            _ => return Err(Failure::bad_query(format!("unknown filter '{k}'"))),
        }
    }
    if feature.is_some() != value.is_some() {
        return Err(Failure::bad_query("wals_feature and value go together"));
    }
    let out = ws
        .graph
        .nodes
        .values()
        .filter(|n| family.as_ref().is_none_or(|f| &n.meta.family == f))
        .filter(|n| script.as_ref().is_none_or(|s| &n.meta.script == s))
        .filter(|n| blood.is_none_or(|b| n.blood_type == b))
        .filter(|n| match (&feature, &value) {
            (Some(f), Some(v)) => n.meta.wals.get(f) == Some(v),
            _ => true,
        })
        .map(LanguageRecord::from)
        .collect();
    Ok(Json(out))
}

async fn edges(
    State(ws): State<Shared>,
    q: Result<Params, axum::extract::rejection::QueryRejection>,
) -> Result<Json<Vec<TransferEdge>>, Failure> {
    let (mut source, mut target, mut bin) = (None, None, None);
    let (mut min_ft, mut max_ft) = (f64::NEG_INFINITY, f64::INFINITY);
    let (mut shared_script, mut shared_family) = (None, None);
    for (k, v) in query(q)? {
        match k.as_str() {
            "source" => source = Some(v),
            "target" => target = Some(v),
            "bin" => bin = Some(parse::<TransferBin>(&k, &v)?),
            "min_ft" => min_ft = parse(&k, &v)?,
            "max_ft" => max_ft = parse(&k, &v)?,
            "shared_script" => shared_script = Some(parse_bool(&k, &v)?),
            "shared_family" => shared_family = Some(parse_bool(&k, &v)?),
            _ => return Err(Failure::bad_query(format!("unknown filter '{k}'"))),
        }
    }
    let g = &ws.graph;
    let out = g
        .edges
        .values()
        .filter(|e| source.as_ref().is_none_or(|s| &e.source == s))
        .filter(|e| target.as_ref().is_none_or(|t| &e.target == t))
        .filter(|e| bin.is_none_or(|b| e.bin == b))
        .filter(|e| e.ft >= min_ft && e.ft <= max_ft)
        .filter(|e| shared_script.is_none_or(|want| g.shares_script(&e.source, &e.target) == want))
        .filter(|e| shared_family.is_none_or(|want| g.shares_family(&e.source, &e.target) == want))
        .cloned()
        .collect();
    Ok(Json(out))
}

async fn analytics(State(ws): State<Shared>) -> Response {
    Json(&ws.analytics).into_response()
}

async fn hypotheses(State(ws): State<Shared>) -> Response {
    Json(&ws.hypotheses).into_response()
}

/// Body of `POST /whatif`. Unlisted fields are rejected.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    #[serde(default = "default_k")]
    pub k: usize,
    pub mode: SelectionMode,
    #[serde(default = "default_min_families")]
    pub min_families: usize,
    /// Languages held out of the donor pool; they become the recipients.
    #[serde(default)]
    pub exclude: Vec<String>,
    #[serde(default)]
    pub force_include: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub budget_chars: Option<u64>,
    #[serde(default)]
    pub id: Option<String>,
}

fn default_k() -> usize {
    SelectionRequest::default().k
}

fn default_min_families() -> usize {
    SelectionRequest::default().min_families
}

impl WhatIfRequest {
    pub fn selection(&self) -> SelectionRequest {
        SelectionRequest {
            k: self.k,
            mode: self.mode,
            min_families: self.min_families,
            excluded: self.exclude.iter().cloned().collect::<BTreeSet<_>>(),
            force_include: self.force_include.clone(),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResponse {
    pub config: PretrainConfig,
    /// Summed donation of the chosen donors.
    pub donation_sum: f64,
}

/// What `POST /whatif` computes, without HTTP.
pub fn what_if(ws: &Workspace, req: &WhatIfRequest) -> Result<WhatIfResponse, xling_core::Error> {
    let id = req.id.clone().unwrap_or_else(|| format!("whatif-{}", req.mode));
    let config = compose_config(
        &ws.graph,
        &id,
        &req.selection(),
        req.budget_chars.unwrap_or(DEFAULT_PRETRAIN_BUDGET),
    )?;
    let donation_sum = config.donation_sum(&ws.graph, false)?;
    Ok(WhatIfResponse { config, donation_sum })
}

async fn whatif(State(ws): State<Shared>, body: Bytes) -> Result<Json<WhatIfResponse>, Failure> {
    let req: WhatIfRequest = serde_json::from_slice(&body)
        .map_err(|e| Failure::new(StatusCode::BAD_REQUEST, "malformed_body", e.to_string()))?;
    Ok(Json(what_if(&ws, &req)?))
}
