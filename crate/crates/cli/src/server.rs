//! HTTP + WebSocket front end for a loaded model.
//!
//! | route | request | response |
//! |---|---|---|
//! | `POST /session` | PNG body | `{"session_id", "height", "width"}` |
//! | `POST /synthesize` | `{"session_id" or "image_png_base64", "pose": {x,y,z,yaw,pitch,roll}}` | PNG, `X-Inference-Ms`, `X-Model-Variant`, `X-Out-Of-Distribution`, `X-Out-Of-Range` |
//! | `GET /stats` | | pose bounds and model info |
//! | `GET /stream?session=ID` | WebSocket, text `{"seq", "pose"}` | text frames, see [`StreamFrame`] |
//!
//! Poses are relative to the session's source camera. Inference is
//! single-flight per model; the stream keeps only the newest unprocessed
//! pose, so delivered frames are an in-order subsequence of the poses sent.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use futures_util::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, watch, Mutex};
use viewsynth_core::checkpoint::{Synthesis, ViewSynthesizer};
use viewsynth_core::pose::COMPONENTS;
use viewsynth_core::{Error, Image, Pose6D, PoseStats};

pub struct AppState {
    model: Arc<dyn ViewSynthesizer>,
    sessions: RwLock<HashMap<String, Arc<Image>>>,
    next_id: AtomicU64,
    inference: Mutex<()>,
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Resolution { .. } | Error::Shape(_) | Error::NonFinitePose(_) | Error::Codec(_) | Error::Parse(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(model: Arc<dyn ViewSynthesizer>) -> Router {
    let state = Arc::new(AppState {
        model,
        sessions: RwLock::new(HashMap::new()),
        next_id: AtomicU64::new(1),
        inference: Mutex::new(()),
    });
    Router::new()
        .route("/session", post(create_session))
        .route("/synthesize", post(synthesize))
        .route("/stats", get(stats))
        .route("/stream", get(stream))
        .with_state(state)
}

/// Binds `addr` and serves until the future is dropped.
pub async fn serve(model: Arc<dyn ViewSynthesizer>, addr: SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(model)).await?;
    Ok(())
}

/// Serves on an ephemeral local port in the background; returns the address.
pub async fn spawn_local(model: Arc<dyn ViewSynthesizer>) -> anyhow::Result<SocketAddr> {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    tokio::spawn(async move { axum::serve(listener, router(model)).await });
    Ok(addr)
}

impl AppState {
    fn session(&self, id: &str) -> ApiResult<Arc<Image>> {
        self.sessions
            .read()
            .expect("session lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown session `{id}`")))
    }

    async fn infer(&self, img: Arc<Image>, pose: Pose6D) -> ApiResult<(Synthesis, f64)> {
        pose.validate()?;
        let _flight = self.inference.lock().await;
        let model = self.model.clone();
        let (out, ms) = tokio::task::spawn_blocking(move || {
            let t = Instant::now();
            let out = model.synthesize(&img, &pose);
            (out, t.elapsed().as_secs_f64() * 1e3)
        })
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        Ok((out?, ms))
    }
}

#[derive(Serialize, Deserialize)]
pub struct SessionResponse {
    pub session_id: String,
    pub height: usize,
    pub width: usize,
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<SessionResponse>> {
    let img = Image::decode_png(&body)?;
    state.model.check_resolution(&img)?;
    let id = format!("{:012x}", state.next_id.fetch_add(1, Ordering::Relaxed));
    let (height, width) = (img.height(), img.width());
    state.sessions.write().expect("session lock").insert(id.clone(), Arc::new(img));
    Ok(Json(SessionResponse { session_id: id, height, width }))
}

#[derive(Serialize, Deserialize)]
pub struct SynthesisRequest {
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub image_png_base64: Option<String>,
    pub pose: Pose6D,
}

fn out_of_range_names(s: &Synthesis) -> Vec<&'static str> {
    s.out_of_range.iter().map(|&i| COMPONENTS[i]).collect()
}

async fn synthesize(State(state): State<Arc<AppState>>, Json(req): Json<SynthesisRequest>) -> ApiResult<Response> {
    let img = match (&req.session_id, &req.image_png_base64) {
        (Some(id), _) => state.session(id)?,
        (None, Some(b)) => {
            let bytes = B64.decode(b).map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
            Arc::new(Image::decode_png(&bytes)?)
        }
        (None, None) => return Err(ApiError(StatusCode::BAD_REQUEST, "need session_id or image_png_base64".into())),
    };
    let (out, ms) = state.infer(img, req.pose).await?;
    let png = out.image.encode_png()?;
    let mut headers = HeaderMap::new();
    let text = |s: String| HeaderValue::from_str(&s).unwrap_or_else(|_| HeaderValue::from_static("?"));
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    headers.insert("x-inference-ms", text(format!("{ms:.3}")));
    headers.insert("x-model-variant", text(state.model.variant_id()));
    headers.insert("x-out-of-distribution", text((!out.out_of_range.is_empty()).to_string()));
    headers.insert("x-out-of-range", text(out_of_range_names(&out).join(",")));
    Ok((headers, png).into_response())
}

#[derive(Serialize, Deserialize)]
pub struct ModelInfo {
    pub variant: String,
    pub height: usize,
    pub width: usize,
}

#[derive(Serialize, Deserialize)]
pub struct StatsResponse {
    pub pose_stats: PoseStats,
    pub components: Vec<String>,
    pub model: ModelInfo,
}

async fn stats(State(state): State<Arc<AppState>>) -> Json<StatsResponse> {
    let (height, width) = state.model.resolution();
    Json(StatsResponse {
        pose_stats: *state.model.pose_stats(),
        components: COMPONENTS.iter().map(|s| s.to_string()).collect(),
        model: ModelInfo { variant: state.model.variant_id(), height, width },
    })
}

#[derive(Deserialize)]
struct StreamQuery {
    session: String,
}

/// Client message on `/stream`. Without `seq` the server numbers messages
/// in arrival order.
#[derive(Serialize, Deserialize)]
pub struct StreamPose {
    #[serde(default)]
    pub seq: Option<u64>,
    pub pose: Pose6D,
}

/// Server message on `/stream`: either a frame or an `error`.
#[derive(Serialize, Deserialize, Debug)]
pub struct StreamFrame {
    #[serde(default)]
    pub seq: Option<u64>,
    #[serde(default)]
    pub pose: Option<Pose6D>,
    #[serde(default)]
    pub inference_ms: Option<f64>,
    #[serde(default)]
    pub out_of_distribution: bool,
    #[serde(default)]
    pub out_of_range: Vec<String>,
    #[serde(default)]
    pub image_png_base64: Option<String>,
    #[serde(default)]
    pub error: Option<String>,
}

impl StreamFrame {
    fn error(seq: Option<u64>, msg: String) -> Self {
        Self {
            seq,
            pose: None,
            inference_ms: None,
            out_of_distribution: false,
            out_of_range: Vec::new(),
            image_png_base64: None,
            error: Some(msg),
        }
    }
}

async fn stream(
    State(state): State<Arc<AppState>>,
    Query(q): Query<StreamQuery>,
    ws: WebSocketUpgrade,
) -> ApiResult<Response> {
    let img = state.session(&q.session)?;
    Ok(ws.on_upgrade(move |socket| run_stream(socket, state, img)))
}

async fn run_stream(socket: WebSocket, state: Arc<AppState>, img: Arc<Image>) {
    let (mut sink, mut incoming) = socket.split();
    let (latest_tx, mut latest) = watch::channel::<Option<(u64, Pose6D)>>(None);
    let (err_tx, mut errors) = mpsc::unbounded_channel::<StreamFrame>();
    tokio::spawn(async move {
        let mut arrival = 0u64;
        while let Some(Ok(msg)) = incoming.next().await {
            match msg {
                Message::Text(t) => match serde_json::from_str::<StreamPose>(&t) {
                    Ok(p) => {
                        let seq = p.seq.unwrap_or(arrival);
                        arrival += 1;
                        latest_tx.send_replace(Some((seq, p.pose)));
                    }
                    Err(e) => {
                        let _ = err_tx.send(StreamFrame::error(None, format!("bad pose message: {e}")));
                    }
                },
                Message::Close(_) => break,
                _ => {}
            }
        }
    });
    loop {
        let frame = tokio::select! {
            changed = latest.changed() => {
                if changed.is_err() {
                    break;
                }
                let Some((seq, pose)) = *latest.borrow_and_update() else { continue };
                match state.infer(img.clone(), pose).await.and_then(|(out, ms)| Ok((out.image.encode_png()?, out, ms))) {
                    Ok((png, out, ms)) => StreamFrame {
                        seq: Some(seq),
                        pose: Some(pose),
                        inference_ms: Some(ms),
                        out_of_distribution: !out.out_of_range.is_empty(),
                        out_of_range: out_of_range_names(&out).iter().map(|s| s.to_string()).collect(),
                        image_png_base64: Some(B64.encode(png)),
                        error: None,
                    },
                    Err(ApiError(_, msg)) => StreamFrame::error(Some(seq), msg),
                }
            }
            Some(err) = errors.recv() => err,
        };
        let text = serde_json::to_string(&frame).expect("frame serialises");
        if sink.send(Message::Text(text.into())).await.is_err() {
            break;
        }
    }
}
