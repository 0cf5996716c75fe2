//! HTTP/1.1 JSON surface of the hub.
//!
//! Every route except `GET /healthz` and the static console under `/ui/`
//! requires `Authorization: Bearer <token>`. Errors are returned as
//! `{"error": code, "message": text}` with a status derived from the error's
//! class.

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::path::{Component, Path as FsPath, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Redirect, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::oneshot;

use crate::error::{ErrorClass, HubError, Result};
use crate::hub::Hub;
use crate::kernel::SubscriptionFilter;
use crate::model::{validate_descriptor, DescriptorDraft, DeviceId};
use crate::rules::RuleSpec;
use crate::telemetry::{render_csv, Metric, YearMonth};

const EMBEDDED_UI: &str = include_str!("../ui/index.html");

pub fn status_of(class: ErrorClass) -> StatusCode {
    match class {
        ErrorClass::Precondition => StatusCode::BAD_REQUEST,
        ErrorClass::NotFound => StatusCode::NOT_FOUND,
        ErrorClass::Conflict => StatusCode::CONFLICT,
        ErrorClass::Upstream => StatusCode::BAD_GATEWAY,
        ErrorClass::Unavailable => StatusCode::SERVICE_UNAVAILABLE,
    }
}

/// A [`HubError`] on its way out as an HTTP response.
#[derive(Debug)]
pub struct ApiError(pub HubError);

impl From<HubError> for ApiError {
    fn from(e: HubError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.0.code(), "message": self.0.to_string() });
        if let HubError::InvalidDescriptor(violations) = &self.0 {
            body["violations"] = json!(violations);
        }
        (status_of(self.0.class()), Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

struct Ctx {
    hub: Arc<Hub>,
    token: String,
    ui_dir: Option<PathBuf>,
}

/// Runs hub work on the blocking pool; long polls and file IO live here.
async fn blocking<T, F>(ctx: &Ctx, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Hub) -> Result<T> + Send + 'static,
{
    let hub = ctx.hub.clone();
    tokio::task::spawn_blocking(move || f(&hub))
        .await
        .map_err(|e| HubError::Io(std::io::Error::other(e.to_string())))?
        .map_err(ApiError)
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError(HubError::InvalidArgument(format!("invalid JSON body: {e}"))))
}

fn query_num<T: std::str::FromStr>(
    q: &HashMap<String, String>,
    key: &str,
    default: T,
) -> ApiResult<T> {
    match q.get(key) {
        None => Ok(default),
        Some(v) => v.parse().map_err(|_| {
            ApiError(HubError::InvalidArgument(format!(
                "`{key}` must be a non-negative integer"
            )))
        }),
    }
}

fn query_req<'a>(q: &'a HashMap<String, String>, key: &str) -> ApiResult<&'a str> {
    q.get(key).map(String::as_str).ok_or_else(|| {
        ApiError(HubError::InvalidArgument(format!(
            "missing query parameter `{key}`"
        )))
    })
}

/// Ids that fail the charset check can never have been registered.
fn device_id(raw: &str) -> ApiResult<DeviceId> {
    raw.parse()
        .map_err(|_| ApiError(HubError::UnknownDevice(raw.to_owned())))
}

/// Builds the full router for `hub`.
pub fn router(hub: Arc<Hub>) -> Router {
    let ctx = Arc::new(Ctx {
        token: hub.config().auth_token.clone(),
        ui_dir: hub.config().ui_dir.clone(),
        hub,
    });
    let api = Router::new()
        .route("/watch", post(watch))
        .route("/events", get(events))
        .route("/devices", get(list_devices).post(register_device))
        .route("/devices/{id}", get(get_device).delete(disconnect_device))
        .route("/devices/{id}/capabilities", get(capabilities))
        .route("/devices/{id}/image", post(image))
        .route("/blobs/{id}", get(blob))
        .route("/email", post(email))
        .route("/upload", post(upload))
        .route("/streams/{name}", get(read_stream).post(append_stream))
        .route("/rules", get(list_rules).post(create_rule))
        .route(
            "/rules/{id}",
            get(get_rule).delete(delete_rule).patch(patch_rule),
        )
        .route("/rules/{id}/log", get(rule_log))
        .route("/telemetry/{metric}/monthly", get(monthly))
        .route("/sim/door", post(sim_door))
        .route("/sim/sample", post(sim_sample))
        .route_layer(middleware::from_fn_with_state(ctx.clone(), require_token));
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/ui", get(|| async { Redirect::permanent("/ui/") }))
        .route("/ui/", get(ui_asset))
        .route("/ui/{*path}", get(ui_asset))
        .merge(api)
        .with_state(ctx)
}

async fn require_token(
    State(ctx): State<Arc<Ctx>>,
    headers: HeaderMap,
    req: Request,
    next: Next,
) -> Response {
    let presented = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .unwrap_or("");
    if !ctx.token.is_empty() && constant_time_eq(presented.as_bytes(), ctx.token.as_bytes()) {
        return next.run(req).await;
    }
    let mut resp = (
        StatusCode::UNAUTHORIZED,
        Json(json!({"error": "unauthorized", "message": "missing or wrong bearer token"})),
    )
        .into_response();
    resp.headers_mut()
        .insert(header::WWW_AUTHENTICATE, HeaderValue::from_static("Bearer"));
    resp
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct WatchBody {
    device_id: Option<DeviceId>,
    event_name: Option<String>,
}

async fn watch(State(ctx): State<Arc<Ctx>>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let req: WatchBody = if body.iter().all(u8::is_ascii_whitespace) {
        WatchBody::default()
    } else {
        parse_body(&body)?
    };
    let filter = SubscriptionFilter {
        device_id: req.device_id,
        event_name: req.event_name,
    };
    let id = blocking(&ctx, move |hub| hub.app().watch_event(filter)).await?;
    Ok(Json(json!({ "subscriptionId": id })))
}

async fn events(
    State(ctx): State<Arc<Ctx>>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<serde_json::Value>> {
    let sub = query_req(&q, "sub")?.to_owned();
    let timeout_ms = query_num(&q, "timeoutMs", 0u64)?;
    let max = query_num(&q, "max", crate::kernel::MAX_POLL_BATCH)?;
    let polled = blocking(&ctx, move |hub| {
        hub.app().get_new_event(&sub, timeout_ms, max)
    })
    .await?;
    Ok(Json(
        json!({ "events": polled.events, "overflowed": polled.overflowed }),
    ))
}

async fn list_devices(State(ctx): State<Arc<Ctx>>) -> ApiResult<Response> {
    let devices = blocking(&ctx, |hub| hub.app().list_devices()).await?;
    Ok(Json(devices).into_response())
}

async fn get_device(State(ctx): State<Arc<Ctx>>, Path(id): Path<String>) -> ApiResult<Response> {
    let id = device_id(&id)?;
    let dev = blocking(&ctx, move |hub| hub.kernel().device(&id)).await?;
    Ok(Json(dev).into_response())
}

async fn register_device(State(ctx): State<Arc<Ctx>>, body: Bytes) -> ApiResult<Response> {
    let draft: DescriptorDraft = parse_body(&body)?;
    let desc = validate_descriptor(&draft)
        .map_err(|v| HubError::InvalidDescriptor(v.iter().map(ToString::to_string).collect()))?;
    let dev = blocking(&ctx, move |hub| {
        let id = desc.id.clone();
        hub.kernel().register_device(desc)?;
        hub.kernel().device(&id)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(dev)).into_response())
}

async fn disconnect_device(
    State(ctx): State<Arc<Ctx>>,
    Path(id): Path<String>,
) -> ApiResult<StatusCode> {
    let id = device_id(&id)?;
    blocking(&ctx, move |hub| hub.kernel().disconnect_device(&id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn capabilities(State(ctx): State<Arc<Ctx>>, Path(id): Path<String>) -> ApiResult<Response> {
    let id = device_id(&id)?;
    let caps = blocking(&ctx, move |hub| hub.app().capabilities(&id)).await?;
    Ok(Json(caps).into_response())
}

async fn image(State(ctx): State<Arc<Ctx>>, Path(id): Path<String>) -> ApiResult<Response> {
    let id = device_id(&id)?;
    let blob = blocking(&ctx, move |hub| hub.app().get_image(&id)).await?;
    Ok(Json(blob).into_response())
}

async fn blob(State(ctx): State<Arc<Ctx>>, Path(id): Path<String>) -> ApiResult<Response> {
    let (blob, bytes) = blocking(&ctx, move |hub| hub.app().blob(&id)).await?;
    let mime = HeaderValue::from_str(&blob.mime)
        .unwrap_or(HeaderValue::from_static("application/octet-stream"));
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct EmailBody {
    to: String,
    subject: String,
    body: String,
    image_id: String,
}

async fn email(State(ctx): State<Arc<Ctx>>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let req: EmailBody = parse_body(&body)?;
    let id = blocking(&ctx, move |hub| {
        hub.app()
            .send_email_with_image(&req.to, &req.subject, &req.body, &req.image_id)
    })
    .await?;
    Ok(Json(json!({ "messageId": id })))
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct UploadBody {
    image_id: String,
    container: String,
    name: String,
}

async fn upload(State(ctx): State<Arc<Ctx>>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let req: UploadBody = parse_body(&body)?;
    let url = blocking(&ctx, move |hub| {
        hub.app()
            .upload_picture(&req.image_id, &req.container, &req.name)
    })
    .await?;
    Ok(Json(json!({ "url": url })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AppendBody {
    text: String,
}

async fn append_stream(
    State(ctx): State<Arc<Ctx>>,
    Path(name): Path<String>,
    body: Bytes,
) -> ApiResult<Json<serde_json::Value>> {
    let req: AppendBody = parse_body(&body)?;
    let offset = blocking(&ctx, move |hub| {
        hub.app().add_file_data_stream(&name, &req.text)
    })
    .await?;
    Ok(Json(json!({ "offset": offset })))
}

async fn read_stream(
    State(ctx): State<Arc<Ctx>>,
    Path(name): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let from = query_num(&q, "from", 0u64)?;
    let lines = blocking(&ctx, move |hub| hub.app().read_stream(&name, from)).await?;
    let text: String = lines.iter().map(|l| l.render() + "\n").collect();
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response())
}

async fn list_rules(State(ctx): State<Arc<Ctx>>) -> ApiResult<Response> {
    let rules = blocking(&ctx, |hub| Ok(hub.engine().list_rules())).await?;
    Ok(Json(rules).into_response())
}

async fn create_rule(State(ctx): State<Arc<Ctx>>, body: Bytes) -> ApiResult<Response> {
    let spec: RuleSpec = parse_body(&body)?;
    let id = blocking(&ctx, move |hub| hub.engine().create_rule(spec)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "ruleId": id }))).into_response())
}

async fn get_rule(State(ctx): State<Arc<Ctx>>, Path(id): Path<String>) -> ApiResult<Response> {
    let rule = blocking(&ctx, move |hub| hub.engine().rule(&id)).await?;
    Ok(Json(rule).into_response())
}

async fn delete_rule(State(ctx): State<Arc<Ctx>>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    blocking(&ctx, move |hub| hub.engine().delete_rule(&id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatchRule {
    enabled: bool,
}

async fn patch_rule(
    State(ctx): State<Arc<Ctx>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let req: PatchRule = parse_body(&body)?;
    let rule = blocking(&ctx, move |hub| hub.engine().set_enabled(&id, req.enabled)).await?;
    Ok(Json(rule).into_response())
}

async fn rule_log(
    State(ctx): State<Arc<Ctx>>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let limit = query_num(&q, "limit", 100usize)?;
    let log = blocking(&ctx, move |hub| hub.engine().fire_log(&id, limit)).await?;
    Ok(Json(log).into_response())
}

async fn monthly(
    State(ctx): State<Arc<Ctx>>,
    Path(metric): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let metric: Metric = metric.parse()?;
    let from: YearMonth = query_req(&q, "from")?.parse()?;
    let to: YearMonth = query_req(&q, "to")?.parse()?;
    let csv = match q.get("format").map(String::as_str) {
        None | Some("json") => false,
        Some("csv") => true,
        Some(other) => {
            return Err(HubError::InvalidArgument(format!("unknown format `{other}`")).into())
        }
    };
    let rows = blocking(&ctx, move |hub| {
        hub.telemetry().monthly_averages(metric, from, to)
    })
    .await?;
    Ok(if csv {
        (
            [(header::CONTENT_TYPE, "text/csv; charset=utf-8")],
            render_csv(&rows),
        )
            .into_response()
    } else {
        Json(rows).into_response()
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SimDoorBody {
    pub device_id: DeviceId,
    pub open: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SimSampleBody {
    pub device_id: DeviceId,
    pub value: f64,
}

/// Returns `{"event": EventRecord}`, or `{"event": null}` when the door was
/// already in the requested state.
async fn sim_door(State(ctx): State<Arc<Ctx>>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let req: SimDoorBody = parse_body(&body)?;
    let rec = blocking(&ctx, move |hub| {
        hub.sim().set_door(&req.device_id, req.open)
    })
    .await?;
    Ok(Json(json!({ "event": rec })))
}

async fn sim_sample(
    State(ctx): State<Arc<Ctx>>,
    body: Bytes,
) -> ApiResult<Json<serde_json::Value>> {
    let req: SimSampleBody = parse_body(&body)?;
    let rec = blocking(&ctx, move |hub| {
        hub.sim().emit_sample(&req.device_id, req.value)
    })
    .await?;
    Ok(Json(json!({ "event": rec })))
}

async fn ui_asset(State(ctx): State<Arc<Ctx>>, path: Option<Path<String>>) -> Response {
    let rel = path.map(|Path(p)| p).unwrap_or_default();
    let rel = if rel.is_empty() {
        "index.html".to_owned()
    } else {
        rel
    };
    let not_found = || (StatusCode::NOT_FOUND, "not found").into_response();
    let Some(dir) = &ctx.ui_dir else {
        return if rel == "index.html" {
            (
                [(header::CONTENT_TYPE, "text/html; charset=utf-8")],
                EMBEDDED_UI,
            )
                .into_response()
        } else {
            not_found()
        };
    };
    let rel = FsPath::new(&rel);
    if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return not_found();
    }
    match tokio::fs::read(dir.join(rel)).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, mime_for(rel))], bytes).into_response(),
        Err(_) => not_found(),
    }
}

fn mime_for(path: &FsPath) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript; charset=utf-8",
        Some("css") => "text/css; charset=utf-8",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("ico") => "image/x-icon",
        _ => "application/octet-stream",
    }
}

/// Serves `hub` on `listener` until `shutdown` resolves.
pub async fn serve(
    hub: Arc<Hub>,
    listener: tokio::net::TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(hub))
        .with_graceful_shutdown(shutdown)
        .await
}

/// A server running on its own runtime thread. Dropping the handle stops it.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    /// Binds `listen` (use port 0 for an ephemeral port) and starts serving.
    pub fn spawn(hub: Arc<Hub>, listen: &str) -> Result<Self> {
        let std_listener = std::net::TcpListener::bind(listen)?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let thread = std::thread::Builder::new()
            .name("http".into())
            .spawn(move || {
                let rt = tokio::runtime::Builder::new_multi_thread()
                    .enable_all()
                    .build()
                    .expect("build tokio runtime");
                rt.block_on(async move {
                    let listener =
                        tokio::net::TcpListener::from_std(std_listener).expect("register listener");
                    // in-flight long polls are abandoned rather than awaited
                    tokio::select! {
                        res = axum::serve(listener, router(hub)) => {
                            if let Err(e) = res {
                                log::error!("http server failed: {e}");
                            }
                        }
                        _ = rx => {}
                    }
                });
                rt.shutdown_background();
            })?;
        Ok(Self {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}
