//! HTTP and WebSocket playground service under `/v1`.
//!
//! Uploaded banks and logs, and computed rasters, live in a
//! content-addressed directory keyed by the SHA-256 of their bytes.
//! Rasters are served as little-endian float32 bodies with the JSON header
//! in the `x-raster-header` response header.

use crate::config::LabConfig;
use crate::dynamics::{step_response, Command, DynParams, Mode, StepResponse};
use crate::error::Error;
use crate::geometry::Pose;
use crate::io::{f32_bytes, write_atomic, RasterHeader};
use crate::planner::{
    log_quality, quality_heatmap, quality_samples, solve_time_field, ExpertPolicy, FieldCache, SpeedModel,
};
use crate::policy::{Policy, ReplayPolicy};
use crate::sensitivity::{d_belief, ActionBank, BeliefDistance};
use crate::world::{
    derive_seed, log::logs_to_jsonl, log::parse_logs, run_episode, Episode, Outcome, RunOptions, TaskSet,
    TrajectoryLog,
};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::PathBuf;
use std::sync::Arc;
use tower_http::cors::{AllowOrigin, CorsLayer};

/// Directory of immutable blobs named by their SHA-256.
#[derive(Clone, Debug)]
pub struct Store {
    dir: PathBuf,
}

impl Store {
    pub fn open(dir: &std::path::Path) -> crate::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Store { dir: dir.to_path_buf() })
    }

    fn path(&self, kind: &str, id: &str, ext: &str) -> PathBuf {
        self.dir.join(kind).join(format!("{id}.{ext}"))
    }

    fn valid_id(id: &str) -> bool {
        id.len() == 64 && id.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
    }

    pub fn put(&self, kind: &str, ext: &str, bytes: &[u8]) -> crate::Result<String> {
        let id = hex::encode(Sha256::digest(bytes));
        let path = self.path(kind, &id, ext);
        if !path.exists() {
            std::fs::create_dir_all(path.parent().expect("store path has a parent"))?;
            write_atomic(&path, bytes)?;
        }
        Ok(id)
    }

    pub fn get(&self, kind: &str, ext: &str, id: &str) -> crate::Result<Option<Vec<u8>>> {
        if !Self::valid_id(id) {
            return Ok(None);
        }
        let path = self.path(kind, id, ext);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(std::fs::read(path)?))
    }

    /// Stores a raster; the id covers header and values.
    pub fn put_raster(&self, header: &RasterHeader, values: &[f64]) -> crate::Result<String> {
        let head = serde_json::to_vec(header)?;
        let body = f32_bytes(values);
        let mut h = Sha256::new();
        h.update(&head);
        h.update(&body);
        let id = hex::encode(h.finalize());
        let path = self.path("raster", &id, "f32");
        if !path.exists() {
            std::fs::create_dir_all(path.parent().expect("store path has a parent"))?;
            write_atomic(&self.path("raster", &id, "json"), &head)?;
            write_atomic(&path, &body)?;
        }
        Ok(id)
    }

    pub fn get_raster(&self, id: &str) -> crate::Result<Option<(Vec<u8>, Vec<u8>)>> {
        match (self.get("raster", "json", id)?, self.get("raster", "f32", id)?) {
            (Some(h), Some(b)) => Ok(Some((h, b))),
            _ => Ok(None),
        }
    }
}

pub struct AppState {
    pub cfg: LabConfig,
    pub tasks: TaskSet,
    pub store: Store,
    pub cache: Arc<FieldCache>,
}

impl AppState {
    pub fn new(cfg: LabConfig, tasks: TaskSet, store_dir: &std::path::Path) -> crate::Result<Self> {
        cfg.validate()?;
        Ok(AppState { cfg, tasks, store: Store::open(store_dir)?, cache: Arc::new(FieldCache::default()) })
    }
}

type Shared = Arc<AppState>;

/// Error body `{"error": {"kind", "message"}}` with a matching status.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, kind: "schema", message: message.into() }
    }

    fn not_found(what: &str, id: &str) -> Self {
        ApiError { status: StatusCode::NOT_FOUND, kind: "not_found", message: format!("unknown {what} `{id}`") }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Infeasible(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError { status, kind: e.kind(), message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": { "kind": self.kind, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// JSON body extractor that reports malformed input as 400.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(ApiJson(v)),
            Err(r) => Err(ApiError::bad_request(r.body_text())),
        }
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> crate::Result<T> + Send + 'static) -> ApiResult<T> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, kind: "internal", message: e.to_string() }),
    }
}

fn raster_response(header: Vec<u8>, body: Vec<u8>) -> Response {
    let mut headers = HeaderMap::new();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream"));
    if let Ok(v) = HeaderValue::from_bytes(&header) {
        headers.insert("x-raster-header", v);
    }
    (headers, body).into_response()
}

pub fn router(state: AppState, cors_origin: Option<String>) -> Router {
    let cors = match cors_origin.and_then(|o| HeaderValue::from_str(&o).ok()) {
        Some(o) => CorsLayer::new().allow_origin(AllowOrigin::exact(o)),
        None => CorsLayer::new().allow_origin(AllowOrigin::any()),
    }
    .allow_methods(tower_http::cors::Any)
    .allow_headers(tower_http::cors::Any)
    .expose_headers([header::HeaderName::from_static("x-raster-header")]);
    let v1 = Router::new()
        .route("/health", get(|| async { Json(serde_json::json!({ "status": "ok" })) }))
        .route("/step-response", post(step_response_handler))
        .route("/trajectory", post(trajectory_handler))
        .route("/dbelief", post(dbelief_handler))
        .route("/banks", post(put_bank))
        .route("/banks/{id}", get(get_bank))
        .route("/logs", post(put_log))
        .route("/logs/{id}", get(get_log))
        .route("/maps", get(list_maps))
        .route("/maps/{id}", get(map_raster))
        .route("/maps/{id}/episodes", get(map_episodes))
        .route("/fields/{map}/{goal}", get(field_raster))
        .route("/replay/{log}", get(replay_handler))
        .route("/heatmap", post(heatmap_handler))
        .route("/rasters/{id}", get(get_raster));
    Router::new().nest("/v1", v1).layer(cors).with_state(Arc::new(state))
}

/// Binds `host:port` and serves until the process is stopped.
pub async fn serve(state: AppState, host: &str, port: u16, cors_origin: Option<String>) -> crate::Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, cors_origin)).await?;
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepResponseRequest {
    #[serde(default)]
    pub params: Option<DynParams>,
    /// Action id held from rest.
    pub action: usize,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default)]
    pub mode: Option<Mode>,
}

fn default_duration() -> f64 {
    10.0
}

async fn step_response_handler(
    State(s): State<Shared>,
    ApiJson(req): ApiJson<StepResponseRequest>,
) -> ApiResult<Json<StepResponse>> {
    let params = req.params.unwrap_or(s.cfg.world.dynamics);
    params.validate()?;
    let cmd = Command::from_index(req.action, &params)?;
    let mode = req.mode.unwrap_or(s.cfg.world.mode);
    Ok(Json(step_response(&cmd, &params, mode, req.duration)?))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryPolicy {
    #[default]
    Expert,
    Replay,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRequest {
    #[serde(default)]
    pub params: Option<DynParams>,
    #[serde(default)]
    pub mode: Option<Mode>,
    pub map_id: String,
    /// Episode of the served task set; otherwise `start` and `goal`.
    #[serde(default)]
    pub episode_id: Option<String>,
    #[serde(default)]
    pub start: Option<Pose>,
    #[serde(default)]
    pub goal: Option<[f64; 2]>,
    #[serde(default)]
    pub policy: TrajectoryPolicy,
    #[serde(default)]
    pub actions: Vec<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrajectoryResponse {
    pub log_id: String,
    pub outcome: Outcome,
    pub success: bool,
    pub t: Vec<f64>,
    /// `[x, y, theta]` at every decision step plus the final pose.
    pub poses: Vec<[f64; 3]>,
    pub actions: Vec<usize>,
    /// Planning quality `M(t)`.
    pub m: Vec<f64>,
    pub goal: [f64; 2],
}

fn run_trajectory(s: &AppState, req: TrajectoryRequest) -> crate::Result<(TrajectoryResponse, Vec<u8>)> {
    let grid = s.tasks.map(&req.map_id).map_err(|_| Error::Parse(format!("unknown map `{}`", req.map_id)))?;
    let episode = match (&req.episode_id, req.start, req.goal) {
        (Some(id), _, _) => s
            .tasks
            .episodes
            .iter()
            .find(|e| &e.id == id && e.map_id == req.map_id)
            .cloned()
            .ok_or_else(|| Error::Parse(format!("unknown episode `{id}`")))?,
        (None, Some(start), Some(goal)) => Episode::from_world("adhoc", req.map_id.clone(), start, goal),
        _ => return Err(Error::InvalidParams("give episode_id or start and goal".into())),
    };
    episode.validate(grid)?;
    let mut world = s.cfg.world.clone();
    if let Some(p) = req.params {
        p.validate()?;
        world.dynamics = p;
    }
    if let Some(m) = req.mode {
        world.mode = m;
    }
    let mut policy: Box<dyn Policy> = match req.policy {
        TrajectoryPolicy::Expert => Box::new(ExpertPolicy::new(s.cfg.expert.clone(), s.cache.clone())?),
        TrajectoryPolicy::Replay => Box::new(ReplayPolicy::new(req.actions.clone(), world.dynamics)?),
    };
    let seed = derive_seed(req.seed.unwrap_or(s.cfg.seed), 0);
    let mut opts = RunOptions::new(s.cfg.harness.clone(), seed);
    let log = run_episode(grid, &episode, &world, policy.as_mut(), &mut opts)?;
    let m = log_quality(&log, grid, &s.cache, &s.cfg.expert)?;
    let bytes = log.to_jsonl()?;
    let mut poses: Vec<[f64; 3]> = log.steps.iter().map(|st| [st.state.x, st.state.y, st.state.theta]).collect();
    let f = log.end.final_state;
    poses.push([f.x, f.y, f.theta]);
    let mut t: Vec<f64> = log.steps.iter().map(|st| st.time).collect();
    t.push(log.end.episode_time);
    Ok((
        TrajectoryResponse {
            log_id: String::new(),
            outcome: log.end.outcome,
            success: log.success(),
            t,
            poses,
            actions: log.steps.iter().map(|st| st.command.index).collect(),
            m,
            goal: episode.goal_world(),
        },
        bytes,
    ))
}

async fn trajectory_handler(
    State(s): State<Shared>,
    ApiJson(req): ApiJson<TrajectoryRequest>,
) -> ApiResult<Json<TrajectoryResponse>> {
    if s.tasks.maps.get(&req.map_id).is_none() {
        return Err(ApiError::not_found("map", &req.map_id));
    }
    let st = s.clone();
    let (mut resp, bytes) = blocking(move || run_trajectory(&st, req)).await?;
    resp.log_id = s.store.put("log", "jsonl", &bytes)?;
    Ok(Json(resp))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbeliefRequest {
    #[serde(default)]
    pub params: Option<DynParams>,
    pub corrupted: DynParams,
    /// Uploaded bank; a seeded random bank otherwise.
    #[serde(default)]
    pub bank_id: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub mode: Option<Mode>,
}

async fn dbelief_handler(
    State(s): State<Shared>,
    ApiJson(req): ApiJson<DbeliefRequest>,
) -> ApiResult<Json<BeliefDistance>> {
    let bank = match &req.bank_id {
        Some(id) => {
            let bytes = s.store.get("bank", "json", id)?.ok_or_else(|| ApiError::not_found("bank", id))?;
            serde_json::from_slice::<ActionBank>(&bytes).map_err(Error::from)?
        }
        None => ActionBank::random(s.cfg.bank.k, s.cfg.bank.horizon, req.seed.unwrap_or(s.cfg.seed))?,
    };
    let nominal = req.params.unwrap_or(s.cfg.world.dynamics);
    let mode = req.mode.unwrap_or(s.cfg.world.mode);
    let corrupted = req.corrupted;
    Ok(Json(blocking(move || d_belief(&nominal, &corrupted, &bank, mode)).await?))
}

async fn put_bank(State(s): State<Shared>, ApiJson(bank): ApiJson<ActionBank>) -> ApiResult<Json<serde_json::Value>> {
    bank.validate()?;
    let id = s.store.put("bank", "json", &serde_json::to_vec(&bank).map_err(Error::from)?)?;
    Ok(Json(serde_json::json!({ "id": id, "k": bank.sequences.len(), "horizon": bank.horizon })))
}

async fn get_bank(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    let bytes = s.store.get("bank", "json", &id)?.ok_or_else(|| ApiError::not_found("bank", &id))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

/// Accepts trajectory logs as JSON lines.
async fn put_log(State(s): State<Shared>, body: axum::body::Bytes) -> ApiResult<Json<serde_json::Value>> {
    let logs = parse_logs(std::io::Cursor::new(&body[..]))?;
    if logs.is_empty() {
        return Err(Error::Empty("logs").into());
    }
    let id = s.store.put("log", "jsonl", &logs_to_jsonl(&logs)?)?;
    Ok(Json(serde_json::json!({ "id": id, "episodes": logs.len() })))
}

fn load_logs(s: &AppState, id: &str) -> ApiResult<Vec<TrajectoryLog>> {
    let bytes = s.store.get("log", "jsonl", id)?.ok_or_else(|| ApiError::not_found("log", id))?;
    Ok(parse_logs(std::io::Cursor::new(bytes))?)
}

async fn get_log(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    let bytes = s.store.get("log", "jsonl", &id)?.ok_or_else(|| ApiError::not_found("log", &id))?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], bytes).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MapInfo {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: [f64; 2],
    pub free_fraction: f64,
    pub episodes: usize,
}

async fn list_maps(State(s): State<Shared>) -> Json<Vec<MapInfo>> {
    Json(
        s.tasks
            .maps
            .iter()
            .map(|(id, g)| MapInfo {
                id: id.clone(),
                width: g.width(),
                height: g.height(),
                resolution: g.resolution(),
                origin: g.origin(),
                free_fraction: g.free_fraction(),
                episodes: s.tasks.episodes.iter().filter(|e| &e.map_id == id).count(),
            })
            .collect(),
    )
}

async fn map_raster(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    let g = s.tasks.maps.get(&id).ok_or_else(|| ApiError::not_found("map", &id))?;
    let mut h = RasterHeader::new(g.width(), g.height(), g.resolution(), g.origin());
    h.label = Some("occupied".into());
    let values: Vec<f64> = g.cells().iter().map(|&o| f64::from(u8::from(o))).collect();
    Ok(raster_response(serde_json::to_vec(&h).map_err(Error::from)?, f32_bytes(&values)))
}

async fn map_episodes(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Vec<Episode>>> {
    if !s.tasks.maps.contains_key(&id) {
        return Err(ApiError::not_found("map", &id));
    }
    Ok(Json(s.tasks.episodes.iter().filter(|e| e.map_id == id).cloned().collect()))
}

#[derive(Debug, Default, Deserialize)]
pub struct FieldQuery {
    /// Constant speed instead of slowing near walls.
    #[serde(default)]
    pub uniform: bool,
}

/// `goal` is `x,y` in meters.
async fn field_raster(
    State(s): State<Shared>,
    Path((map, goal)): Path<(String, String)>,
    Query(q): Query<FieldQuery>,
) -> ApiResult<Response> {
    let grid = s.tasks.maps.get(&map).ok_or_else(|| ApiError::not_found("map", &map))?.clone();
    let parsed: Vec<f64> = goal.split(',').filter_map(|v| v.trim().parse().ok()).collect();
    if parsed.len() != 2 {
        return Err(ApiError::bad_request(format!("goal `{goal}` is not x,y")));
    }
    let goal = [parsed[0], parsed[1]];
    let v_max = s.cfg.expert.dynamics.v_max;
    let model = if q.uniform {
        SpeedModel::Uniform { v_max }
    } else {
        s.cfg.expert.speed_model()
    };
    let field = blocking(move || solve_time_field(&grid, goal, model)).await?;
    Ok(raster_response(serde_json::to_vec(&field.header()).map_err(Error::from)?, field.to_f32_bytes()))
}

#[derive(Debug, Deserialize)]
pub struct ReplayQuery {
    /// Frames per second; the playground uses 3.
    #[serde(default = "default_fps")]
    pub fps: f64,
    /// Episode within the log.
    #[serde(default)]
    pub episode: usize,
    /// First step to stream.
    #[serde(default)]
    pub from: usize,
}

fn default_fps() -> f64 {
    3.0
}

/// Streams the header, one frame per step, then the end record, each as
/// the same JSON object as a log line.
async fn replay_handler(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<ReplayQuery>,
    ws: WebSocketUpgrade,
) -> ApiResult<Response> {
    if !(q.fps > 0.0 && q.fps <= 1000.0) {
        return Err(ApiError::bad_request("fps must be in (0, 1000]"));
    }
    let logs = load_logs(&s, &id)?;
    let log = logs.into_iter().nth(q.episode).ok_or_else(|| ApiError::not_found("episode", &q.episode.to_string()))?;
    Ok(ws.on_upgrade(move |socket| replay_session(socket, log, q)))
}

async fn replay_session(mut socket: WebSocket, log: TrajectoryLog, q: ReplayQuery) {
    let period = std::time::Duration::from_secs_f64(1.0 / q.fps);
    let records = log.records();
    let last = records.len() - 1;
    for (k, rec) in records.iter().enumerate() {
        // the header always goes out; steps before `from` are skipped
        if k > 0 && k < last && k - 1 < q.from {
            continue;
        }
        let Ok(text) = serde_json::to_string(rec) else { return };
        if socket.send(Message::Text(text.into())).await.is_err() {
            return;
        }
        if k > 0 && k < last {
            tokio::time::sleep(period).await;
        }
    }
    let _ = socket.send(Message::Close(None)).await;
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatmapRequest {
    pub log_ids: Vec<String>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub resolution: Option<f64>,
    /// Needed when the logs span several maps.
    #[serde(default)]
    pub map_id: Option<String>,
}

fn default_sigma() -> f64 {
    0.5
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HeatmapResponse {
    pub map_id: String,
    pub samples: usize,
    pub header: RasterHeader,
    pub positive_id: String,
    pub negative_id: String,
}

async fn heatmap_handler(
    State(s): State<Shared>,
    ApiJson(req): ApiJson<HeatmapRequest>,
) -> ApiResult<Json<HeatmapResponse>> {
    if req.log_ids.is_empty() {
        return Err(ApiError::bad_request("log_ids is empty"));
    }
    let mut logs = Vec::new();
    for id in &req.log_ids {
        logs.extend(load_logs(&s, id)?);
    }
    if let Some(m) = &req.map_id {
        logs.retain(|l| &l.header.episode.map_id == m);
    }
    let Some(first) = logs.first().map(|l| l.header.episode.map_id.clone()) else {
        return Err(ApiError::bad_request("no log on the requested map"));
    };
    if logs.iter().any(|l| l.header.episode.map_id != first) {
        return Err(ApiError::bad_request("logs span several maps; set map_id"));
    }
    let grid = s.tasks.maps.get(&first).ok_or_else(|| ApiError::not_found("map", &first))?.clone();
    let st = s.clone();
    let (sigma, resolution) = (req.sigma, req.resolution);
    let hm = blocking(move || {
        let mut samples = Vec::new();
        for l in &logs {
            let m = log_quality(l, &grid, &st.cache, &st.cfg.expert)?;
            samples.extend(quality_samples(l, &m));
        }
        let res = resolution.unwrap_or(grid.resolution());
        let b = grid.bounds();
        let w = (((b[2] - b[0]) / res).round() as usize).max(1);
        let h = (((b[3] - b[1]) / res).round() as usize).max(1);
        Ok((samples.len(), quality_heatmap(&samples, w, h, res, [b[0], b[1]], sigma)?))
    })
    .await?;
    let (samples, hm) = hm;
    let mut pos_h = hm.header.clone();
    pos_h.label = Some("quality_density_positive".into());
    let mut neg_h = hm.header.clone();
    neg_h.label = Some("quality_density_negative".into());
    Ok(Json(HeatmapResponse {
        map_id: first,
        samples,
        header: hm.header,
        positive_id: s.store.put_raster(&pos_h, &hm.positive)?,
        negative_id: s.store.put_raster(&neg_h, &hm.negative)?,
    }))
}

async fn get_raster(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    let (h, b) = s.store.get_raster(&id)?.ok_or_else(|| ApiError::not_found("raster", &id))?;
    Ok(raster_response(h, b))
}
