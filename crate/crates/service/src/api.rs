//! `/v1` HTTP API. Every route except `POST /v1/login` needs a bearer token;
//! the stream also accepts it as `?token=` for EventSource clients.

use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use campus_bus::TerminalId;
use campus_coordinator::ReportFormat;
use campus_tag::TagUid;
use serde::Deserialize;
use tokio_stream::wrappers::BroadcastStream;
use tokio_stream::{Stream, StreamExt};

use crate::error::ApiError;
use crate::query::ReportFlags;
use crate::scenario::DoorSpec;
use crate::service::{ModeRequest, NewCard, NewUser, PresentCard, RightsRequest, Service, UserUpdate};

type Svc = Arc<Service>;

pub fn router(service: Svc) -> Router {
    Router::new()
        .route("/v1/login", post(login))
        .route("/v1/logout", post(logout))
        .route("/v1/doors", get(doors))
        .route("/v1/doors/:id", get(door))
        .route("/v1/events", get(events))
        .route("/v1/stream", get(stream))
        .route("/v1/cards", get(cards).post(register_card))
        .route("/v1/cards/:uid", get(card))
        .route("/v1/cards/:uid/lock", post(lock))
        .route("/v1/cards/:uid/unlock", post(unlock))
        .route("/v1/cards/:uid/rights", post(rights))
        .route("/v1/terminals/:id/unlock-brief", post(unlock_brief))
        .route("/v1/terminals/:id/unlock-until", post(unlock_until))
        .route("/v1/terminals/:id/mode", post(set_mode))
        .route("/v1/alarms", get(alarms))
        .route("/v1/alarms/:id/ack", post(ack_alarm))
        .route("/v1/users", get(users).post(add_user))
        .route("/v1/users/:name", patch(update_user).delete(remove_user))
        .route("/v1/backup", post(backup))
        .route("/v1/poll", post(poll))
        .route("/v1/sim/present", post(sim_present))
        .route("/v1/sim/door", post(sim_door))
        .with_state(service)
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

/// The authenticated account name.
pub struct Auth(pub String);

#[axum::async_trait]
impl FromRequestParts<Svc> for Auth {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, svc: &Svc) -> Result<Self, ApiError> {
        let token = bearer(&parts.headers).ok_or_else(|| ApiError::Unauthorized("missing bearer token".into()))?;
        svc.user_of(token).map(Auth)
    }
}

fn terminal(svc: &Service, text: &str) -> Result<TerminalId, ApiError> {
    svc.resolve_terminal(text)
}

fn uid(text: &str) -> Result<TagUid, ApiError> {
    text.parse()
        .map_err(|_| ApiError::BadRequest(format!("`{text}` is not a card uid")))
}

fn ok() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "ok": true }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Credentials {
    username: String,
    password: String,
}

async fn login(State(svc): State<Svc>, Json(c): Json<Credentials>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(svc.login(&c.username, &c.password)?))
}

async fn logout(State(svc): State<Svc>, headers: HeaderMap) -> StatusCode {
    if let Some(token) = bearer(&headers) {
        svc.logout(token);
    }
    StatusCode::NO_CONTENT
}

async fn doors(State(svc): State<Svc>, Auth(user): Auth) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(svc.doors(&user)?))
}

async fn door(State(svc): State<Svc>, Auth(user): Auth, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let id = terminal(&svc, &id)?;
    Ok(Json(svc.door(&user, id)?))
}

async fn events(
    State(svc): State<Svc>,
    Auth(user): Auth,
    flags: Result<Query<ReportFlags>, axum::extract::rejection::QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(flags) = flags.map_err(|e| ApiError::BadRequest(e.body_text()))?;
    let q = flags.to_query().map_err(ApiError::BadRequest)?;
    let body = svc.report(&user, &q)?;
    let content_type = match q.format {
        ReportFormat::Csv => "text/csv; charset=utf-8",
        ReportFormat::JsonLines => "application/x-ndjson",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], body).into_response())
}

#[derive(Deserialize)]
struct StreamParams {
    token: Option<String>,
}

async fn stream(
    State(svc): State<Svc>,
    headers: HeaderMap,
    Query(p): Query<StreamParams>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let token = bearer(&headers)
        .map(str::to_owned)
        .or(p.token)
        .ok_or_else(|| ApiError::Unauthorized("missing bearer token".into()))?;
    let user = svc.user_of(&token)?;
    let rx = svc.subscribe(&user)?;
    // a subscriber that fell behind gets disconnected rather than a gap
    let events = BroadcastStream::new(rx)
        .take_while(Result::is_ok)
        .filter_map(Result::ok)
        .map(|item| Ok(Event::default().event(item.kind).data(item.data.to_string())));
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}

async fn cards(State(svc): State<Svc>, Auth(user): Auth) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(svc.cards(&user)?))
}

async fn card(State(svc): State<Svc>, Auth(user): Auth, Path(u): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(svc.card(&user, uid(&u)?)?))
}

async fn register_card(
    State(svc): State<Svc>,
    Auth(user): Auth,
    Json(req): Json<NewCard>,
) -> Result<impl IntoResponse, ApiError> {
    Ok((StatusCode::CREATED, Json(svc.register_card(&user, req)?)))
}

async fn lock(State(svc): State<Svc>, Auth(user): Auth, Path(u): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(svc.set_lock(&user, uid(&u)?, true)?))
}

async fn unlock(
    State(svc): State<Svc>,
    Auth(user): Auth,
    Path(u): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(svc.set_lock(&user, uid(&u)?, false)?))
}

async fn rights(
    State(svc): State<Svc>,
    Auth(user): Auth,
    Path(u): Path<String>,
    Json(req): Json<RightsRequest>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(svc.assign_rights(&user, uid(&u)?, &req)?))
}

async fn unlock_brief(
    State(svc): State<Svc>,
    Auth(user): Auth,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    svc.unlock_brief(&user, terminal(&svc, &id)?)?;
    Ok(ok())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UntilRequest {
    /// Unix seconds.
    until: u64,
}

async fn unlock_until(
    State(svc): State<Svc>,
    Auth(user): Auth,
    Path(id): Path<String>,
    Json(req): Json<UntilRequest>,
) -> Result<impl IntoResponse, ApiError> {
    svc.unlock_until(&user, terminal(&svc, &id)?, req.until)?;
    Ok(ok())
}

async fn set_mode(
    State(svc): State<Svc>,
    Auth(user): Auth,
    Path(id): Path<String>,
    Json(req): Json<ModeRequest>,
) -> Result<impl IntoResponse, ApiError> {
    svc.set_mode(&user, terminal(&svc, &id)?, &req)?;
    Ok(ok())
}

async fn alarms(State(svc): State<Svc>, Auth(user): Auth) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(svc.alarms(&user)?))
}

async fn ack_alarm(
    State(svc): State<Svc>,
    Auth(user): Auth,
    Path(id): Path<u64>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(svc.acknowledge_alarm(&user, id)?))
}

async fn users(State(svc): State<Svc>, Auth(user): Auth) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(svc.users(&user)?))
}

async fn add_user(
    State(svc): State<Svc>,
    Auth(user): Auth,
    Json(req): Json<NewUser>,
) -> Result<impl IntoResponse, ApiError> {
    svc.add_user(&user, req)?;
    Ok((StatusCode::CREATED, ok()))
}

async fn update_user(
    State(svc): State<Svc>,
    Auth(user): Auth,
    Path(name): Path<String>,
    Json(req): Json<UserUpdate>,
) -> Result<impl IntoResponse, ApiError> {
    svc.update_user(&user, &name, req)?;
    Ok(ok())
}

async fn remove_user(
    State(svc): State<Svc>,
    Auth(user): Auth,
    Path(name): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    svc.remove_user(&user, &name)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn backup(State(svc): State<Svc>, Auth(user): Auth) -> Result<impl IntoResponse, ApiError> {
    let path = svc.backup(&user)?;
    Ok((StatusCode::CREATED, Json(serde_json::json!({ "path": path }))))
}

async fn poll(State(svc): State<Svc>, Auth(user): Auth) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(svc.poll(&user)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PresentRequest {
    terminal: String,
    cards: Vec<PresentCard>,
}

async fn sim_present(
    State(svc): State<Svc>,
    Auth(user): Auth,
    Json(req): Json<PresentRequest>,
) -> Result<impl IntoResponse, ApiError> {
    let id = terminal(&svc, &req.terminal)?;
    Ok(Json(svc.sim_present(&user, id, &req.cards)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DoorRequest {
    terminal: String,
    state: DoorSpec,
}

async fn sim_door(
    State(svc): State<Svc>,
    Auth(user): Auth,
    Json(req): Json<DoorRequest>,
) -> Result<impl IntoResponse, ApiError> {
    let id = terminal(&svc, &req.terminal)?;
    svc.sim_door(&user, id, req.state)?;
    Ok(ok())
}
