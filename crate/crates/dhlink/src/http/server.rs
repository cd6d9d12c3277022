//! HTTP+JSON front ends for the core services.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use dhlink_core::acl::{AccessControlEntry, Operation};
use dhlink_core::schema::DataSchema;
use dhlink_core::Envelope;

use crate::api::{BrokerApi, Caller, Credentials, DiscoveryApi, SecurityApi};
use crate::broker::{TopicSpec, TopicStatus};
use crate::discovery::{EntryKind, EntryStatus, ServiceInfo, TopicRegistration};
use crate::error::{Code, Error, Result};
use crate::security::Profile;

pub const SERVICE_ID_HEADER: &str = "x-dhlink-service-id";
pub const API_KEY_HEADER: &str = "x-dhlink-api-key";
pub const ADMIN_TOKEN_HEADER: &str = "x-dhlink-admin-token";

impl IntoResponse for Error {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.code.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type Reply = Result<Json<Value>>;

fn reply<T: Serialize>(v: T) -> Reply {
    serde_json::to_value(v).map(Json).map_err(|e| Error::new(Code::Internal, e.to_string()))
}

fn ok() -> Reply {
    Ok(Json(json!({"ok": true})))
}

fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::new(Code::BadRequest, format!("request body: {e}")))
}

fn header<'a>(h: &'a HeaderMap, name: &str) -> Option<&'a str> {
    h.get(name).and_then(|v| v.to_str().ok())
}

fn admin(h: &HeaderMap) -> &str {
    header(h, ADMIN_TOKEN_HEADER).unwrap_or("")
}

fn creds(h: &HeaderMap) -> Result<Credentials> {
    match (header(h, SERVICE_ID_HEADER), header(h, API_KEY_HEADER)) {
        (Some(id), Some(key)) => Ok(Credentials::new(id, key)),
        _ => Err(Error::new(Code::BadCredential, "identity headers missing")),
    }
}

fn caller(h: &HeaderMap) -> Result<Caller> {
    match header(h, ADMIN_TOKEN_HEADER) {
        Some(t) => Ok(Caller::Admin(t.into())),
        None => creds(h).map(Caller::Service),
    }
}

fn query<'a>(q: &'a HashMap<String, String>, key: &str) -> Result<&'a str> {
    q.get(key).map(String::as_str).ok_or_else(|| Error::new(Code::BadRequest, format!("query parameter `{key}` missing")))
}

fn query_num<T: std::str::FromStr>(q: &HashMap<String, String>, key: &str, default: T) -> Result<T> {
    match q.get(key) {
        None => Ok(default),
        Some(v) => v.parse().map_err(|_| Error::new(Code::BadRequest, format!("query parameter `{key}` is not a number"))),
    }
}

#[derive(Deserialize)]
struct StatusBody<S> {
    status: S,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct SectionBody {
    receiver_id: String,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct AuthzBody {
    topic: String,
    operation: Operation,
    #[serde(default)]
    section_id: Option<String>,
}

#[derive(Deserialize)]
struct KeyBody {
    topic: String,
    section: String,
}

#[derive(Clone)]
struct Core {
    broker: Arc<dyn BrokerApi>,
    discovery: Arc<dyn DiscoveryApi>,
}

/// Routes for the broker and discovery, served on one listener.
pub fn core_router(broker: Arc<dyn BrokerApi>, discovery: Arc<dyn DiscoveryApi>) -> Router {
    Router::new()
        .route("/v1/health", get(|| async { Json(json!({"ok": true})) }))
        .route("/v1/topics", post(create_topic).get(list_topics))
        .route("/v1/topics/{name}", axum::routing::delete(delete_topic))
        .route("/v1/topics/{name}/status", axum::routing::put(topic_status))
        .route("/v1/topics/{name}/purge", post(purge))
        .route("/v1/topics/{name}/sections", post(allocate).get(sections))
        .route("/v1/topics/{name}/sections/{sid}", axum::routing::delete(release))
        .route("/v1/topics/{name}/sections/{sid}/records", post(append).get(fetch))
        .route("/v1/discovery/schemas", post(register_schema))
        .route("/v1/discovery/schemas/{name}/{version}", get(get_schema))
        .route("/v1/discovery/{kind}", get(query_entries))
        .route(
            "/v1/discovery/{kind}/{name}",
            post(register_entry).put(entry_status).delete(remove_entry),
        )
        .with_state(Core { broker, discovery })
}

async fn create_topic(State(s): State<Core>, h: HeaderMap, b: Bytes) -> Reply {
    reply(s.broker.create_topic(admin(&h), &body::<TopicSpec>(&b)?)?)
}

async fn list_topics(State(s): State<Core>, h: HeaderMap) -> Reply {
    reply(s.broker.list_topics(admin(&h))?)
}

async fn delete_topic(State(s): State<Core>, h: HeaderMap, Path(name): Path<String>) -> Reply {
    s.broker.delete_topic(admin(&h), &name)?;
    ok()
}

async fn topic_status(State(s): State<Core>, h: HeaderMap, Path(name): Path<String>, b: Bytes) -> Reply {
    let st: StatusBody<TopicStatus> = body(&b)?;
    s.broker.set_topic_status(admin(&h), &name, st.status)?;
    ok()
}

async fn purge(State(s): State<Core>, h: HeaderMap, Path(name): Path<String>) -> Reply {
    reply(json!({"purged": s.broker.purge(admin(&h), &name)?}))
}

async fn allocate(State(s): State<Core>, h: HeaderMap, Path(name): Path<String>, b: Bytes) -> Reply {
    let req: SectionBody = body(&b)?;
    reply(json!({"sectionId": s.broker.allocate_section(&caller(&h)?, &name, &req.receiver_id)?}))
}

async fn sections(State(s): State<Core>, h: HeaderMap, Path(name): Path<String>) -> Reply {
    reply(s.broker.sections(&caller(&h)?, &name)?)
}

async fn release(State(s): State<Core>, h: HeaderMap, Path((name, sid)): Path<(String, String)>) -> Reply {
    s.broker.release_section(admin(&h), &name, &sid)?;
    ok()
}

async fn append(State(s): State<Core>, h: HeaderMap, Path((name, sid)): Path<(String, String)>, b: Bytes) -> Reply {
    let cred = creds(&h)?;
    let env = Envelope::parse(&b).map_err(|e| Error::new(Code::MalformedEnvelope, e.to_string()))?;
    reply(json!({"offset": s.broker.append(&cred, &name, &sid, &env)?}))
}

async fn fetch(
    State(s): State<Core>,
    h: HeaderMap,
    Path((name, sid)): Path<(String, String)>,
    Query(q): Query<HashMap<String, String>>,
) -> Reply {
    let cred = creds(&h)?;
    let from = query_num(&q, "offset", 0u64)?;
    let max = query_num(&q, "max", 100usize)?;
    reply(json!({"records": s.broker.fetch(&cred, &name, &sid, from, max)?}))
}

async fn register_schema(State(s): State<Core>, h: HeaderMap, b: Bytes) -> Reply {
    s.discovery.register_schema(admin(&h), &body::<DataSchema>(&b)?)?;
    ok()
}

async fn get_schema(State(s): State<Core>, h: HeaderMap, Path((name, version)): Path<(String, u32)>) -> Reply {
    reply(s.discovery.schema(&caller(&h)?, &name, version)?)
}

async fn query_entries(
    State(s): State<Core>,
    h: HeaderMap,
    Path(kind): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Reply {
    let filter = q.get("query").map_or("", String::as_str);
    let who = caller(&h)?;
    match kind.parse::<EntryKind>()? {
        EntryKind::Topic => reply(s.discovery.query_topics(&who, filter)?),
        EntryKind::Service => reply(s.discovery.query_services(&who, filter)?),
    }
}

async fn register_entry(State(s): State<Core>, h: HeaderMap, Path((kind, name)): Path<(String, String)>, b: Bytes) -> Reply {
    match kind.parse::<EntryKind>()? {
        EntryKind::Topic => {
            let mut reg: TopicRegistration = body(&b)?;
            reg.name = name;
            reply(s.discovery.register_topic(admin(&h), &reg)?)
        }
        EntryKind::Service => {
            let mut info: ServiceInfo = body(&b)?;
            info.name = name;
            s.discovery.register_service(admin(&h), &info)?;
            ok()
        }
    }
}

async fn entry_status(State(s): State<Core>, h: HeaderMap, Path((kind, name)): Path<(String, String)>, b: Bytes) -> Reply {
    let st: StatusBody<EntryStatus> = body(&b)?;
    s.discovery.set_status(admin(&h), kind.parse()?, &name, st.status)?;
    ok()
}

async fn remove_entry(State(s): State<Core>, h: HeaderMap, Path((kind, name)): Path<(String, String)>) -> Reply {
    s.discovery.remove(admin(&h), kind.parse()?, &name)?;
    ok()
}

type Sec = Arc<dyn SecurityApi>;

/// Routes for the security service, served on its own listener.
pub fn security_router(security: Sec) -> Router {
    Router::new()
        .route("/v1/health", get(|| async { Json(json!({"ok": true})) }))
        .route("/v1/authn", post(authn))
        .route("/v1/authz/check", post(authz))
        .route("/v1/acl", post(acl_add).delete(acl_remove).get(acl_list))
        .route("/v1/keys", post(key_generate).get(key_list).delete(key_delete))
        .route("/v1/keys/public", get(key_public))
        .route("/v1/keys/private", get(key_private))
        .route("/v1/profiles", post(profile_add))
        .route("/v1/profiles/{id}", get(profile_get).delete(profile_retire))
        .route("/v1/stats", get(stats))
        .with_state(security)
}

async fn authn(State(s): State<Sec>, h: HeaderMap) -> Reply {
    reply(s.authenticate(&creds(&h)?)?)
}

async fn authz(State(s): State<Sec>, h: HeaderMap, b: Bytes) -> Reply {
    let req: AuthzBody = body(&b)?;
    let d = s.authz_check(&creds(&h)?, &req.topic, req.operation, req.section_id.as_deref())?;
    reply(json!({"decision": d}))
}

async fn acl_add(State(s): State<Sec>, h: HeaderMap, b: Bytes) -> Reply {
    s.add_acl(admin(&h), &body::<AccessControlEntry>(&b)?)?;
    ok()
}

async fn acl_remove(State(s): State<Sec>, h: HeaderMap, b: Bytes) -> Reply {
    s.remove_acl(admin(&h), &body::<AccessControlEntry>(&b)?)?;
    ok()
}

async fn acl_list(State(s): State<Sec>, h: HeaderMap) -> Reply {
    reply(s.list_acl(admin(&h))?)
}

async fn key_generate(State(s): State<Sec>, h: HeaderMap, Query(q): Query<HashMap<String, String>>, b: Bytes) -> Reply {
    let req: KeyBody = body(&b)?;
    let rotate = q.get("rotate").is_some_and(|v| v == "true" || v == "1");
    reply(s.generate_key(admin(&h), &req.topic, &req.section, rotate)?)
}

async fn key_list(State(s): State<Sec>, h: HeaderMap) -> Reply {
    reply(s.list_keys(admin(&h))?)
}

async fn key_delete(State(s): State<Sec>, h: HeaderMap, Query(q): Query<HashMap<String, String>>) -> Reply {
    reply(json!({"removed": s.delete_keys(admin(&h), query(&q, "topic")?, query(&q, "section")?)?}))
}

async fn key_public(State(s): State<Sec>, h: HeaderMap, Query(q): Query<HashMap<String, String>>) -> Reply {
    reply(s.public_key(&creds(&h)?, query(&q, "topic")?, query(&q, "section")?)?)
}

async fn key_private(State(s): State<Sec>, h: HeaderMap, Query(q): Query<HashMap<String, String>>) -> Reply {
    reply(s.private_key(&creds(&h)?, query(&q, "topic")?, query(&q, "section")?)?)
}

async fn profile_add(State(s): State<Sec>, h: HeaderMap, b: Bytes) -> Reply {
    s.register_profile(admin(&h), &body::<Profile>(&b)?)?;
    ok()
}

async fn profile_get(State(s): State<Sec>, h: HeaderMap, Path(id): Path<String>) -> Reply {
    reply(s.profile(admin(&h), &id)?)
}

async fn profile_retire(State(s): State<Sec>, h: HeaderMap, Path(id): Path<String>) -> Reply {
    s.retire_profile(admin(&h), &id)?;
    ok()
}

async fn stats(State(s): State<Sec>, h: HeaderMap) -> Reply {
    reply(s.stats(admin(&h))?)
}

/// PEM certificate chain and private key for HTTPS.
#[derive(Debug, Clone)]
pub struct TlsFiles {
    pub cert: PathBuf,
    pub key: PathBuf,
}

/// Serves `router` on an already-bound listener until `handle` shuts down.
pub async fn serve(
    router: Router,
    listener: std::net::TcpListener,
    tls: Option<TlsFiles>,
    handle: axum_server::Handle,
) -> Result<()> {
    listener.set_nonblocking(true)?;
    let app = router.into_make_service();
    match tls {
        None => axum_server::from_tcp(listener).handle(handle).serve(app).await?,
        Some(files) => {
            let _ = rustls::crypto::ring::default_provider().install_default();
            let config = axum_server::tls_rustls::RustlsConfig::from_pem_file(&files.cert, &files.key).await?;
            axum_server::from_tcp_rustls(listener, config).handle(handle).serve(app).await?
        }
    }
    Ok(())
}

/// A server running on a background thread.
pub struct ServerHandle {
    pub addr: SocketAddr,
    tls: bool,
    handle: axum_server::Handle,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn url(&self) -> String {
        let scheme = if self.tls { "https" } else { "http" };
        format!("{scheme}://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.handle.shutdown();
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

/// Binds `addr` and serves `router` on a dedicated runtime thread.
pub fn spawn(router: Router, addr: &str, tls: Option<TlsFiles>) -> Result<ServerHandle> {
    let listener = std::net::TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let handle = axum_server::Handle::new();
    let is_tls = tls.is_some();
    let h = handle.clone();
    let thread = std::thread::Builder::new().name(format!("http-{local}")).spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build();
        match rt {
            Ok(rt) => {
                if let Err(e) = rt.block_on(serve(router, listener, tls, h)) {
                    tracing::error!("server on {local} stopped: {e}");
                }
            }
            Err(e) => tracing::error!("runtime for {local}: {e}"),
        }
    })?;
    Ok(ServerHandle { addr: local, tls: is_tls, handle, thread: Some(thread) })
}
