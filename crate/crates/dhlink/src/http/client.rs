//! Blocking HTTP clients implementing the service traits.

use std::sync::Arc;
use std::time::Duration;

use serde::de::{DeserializeOwned, IgnoredAny};
use serde::{Deserialize, Serialize};
use serde_json::json;

use dhlink_core::acl::{AccessControlEntry, Decision, Operation};
use dhlink_core::log::RoutedRecord;
use dhlink_core::schema::DataSchema;
use dhlink_core::Envelope;

use crate::api::{BrokerApi, Caller, Credentials, DiscoveryApi, SecurityApi};
use crate::broker::{SectionView, TopicSpec, TopicStatus, TopicView};
use crate::discovery::{EntryKind, EntryStatus, ServiceInfo, TopicInfo, TopicRegistration};
use crate::error::{Code, Error, Result};
use crate::http::server::{ADMIN_TOKEN_HEADER, API_KEY_HEADER, SERVICE_ID_HEADER};
use crate::security::{KeyInfo, KeyMaterial, Profile, SecurityStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Method {
    Get,
    Post,
    Put,
    Delete,
}

enum Auth<'a> {
    None,
    Admin(&'a str),
    Service(&'a Credentials),
}

impl<'a> From<&'a Caller> for Auth<'a> {
    fn from(c: &'a Caller) -> Self {
        match c {
            Caller::Admin(t) => Auth::Admin(t),
            Caller::Service(c) => Auth::Service(c),
        }
    }
}

/// Base URL plus a keep-alive agent. `unreachable` is the error code
/// reported when the endpoint cannot be reached at all.
#[derive(Clone)]
pub struct HttpClient {
    base: String,
    agent: ureq::Agent,
    unreachable: Code,
}

impl HttpClient {
    pub fn new(base: &str, unreachable: Code) -> Self {
        Self::build(base, unreachable, None).expect("plain client config is infallible")
    }

    /// A client that trusts only the PEM certificates in `ca_pem`.
    pub fn with_ca(base: &str, unreachable: Code, ca_pem: &[u8]) -> Result<Self> {
        Self::build(base, unreachable, Some(ca_pem))
    }

    fn build(base: &str, unreachable: Code, ca_pem: Option<&[u8]>) -> Result<Self> {
        let mut cfg = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .max_idle_connections_per_host(16);
        if let Some(pem) = ca_pem {
            let certs = ureq::tls::parse_pem(pem)
                .filter_map(|item| match item {
                    Ok(ureq::tls::PemItem::Certificate(c)) => Some(Ok(c)),
                    Ok(_) => None,
                    Err(e) => Some(Err(e)),
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Error::new(Code::BadRequest, format!("ca certificate: {e}")))?;
            let tls = ureq::tls::TlsConfig::builder()
                .root_certs(ureq::tls::RootCerts::Specific(Arc::new(certs)))
                .build();
            cfg = cfg.tls_config(tls);
        }
        Ok(Self { base: base.trim_end_matches('/').to_string(), agent: cfg.build().into(), unreachable })
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn call<T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        auth: Auth<'_>,
        query: &[(&str, &str)],
        body: Option<Vec<u8>>,
    ) -> Result<T> {
        let url = format!("{}{path}", self.base);
        let headers: Vec<(&str, &str)> = match &auth {
            Auth::None => vec![],
            Auth::Admin(t) => vec![(ADMIN_TOKEN_HEADER, *t)],
            Auth::Service(c) => vec![(SERVICE_ID_HEADER, c.service_id.as_str()), (API_KEY_HEADER, c.api_key.as_str())],
        };
        macro_rules! prep {
            ($rb:expr) => {{
                let mut rb = $rb;
                for (k, v) in &headers {
                    rb = rb.header(*k, *v);
                }
                for (k, v) in query {
                    rb = rb.query(*k, *v);
                }
                rb
            }};
        }
        let sent = match (method, body) {
            (Method::Get, _) => prep!(self.agent.get(&url)).call(),
            (Method::Delete, None) => prep!(self.agent.delete(&url)).call(),
            (Method::Delete, Some(b)) => {
                prep!(self.agent.delete(&url)).force_send_body().content_type("application/json").send(&b[..])
            }
            (Method::Post, b) => {
                prep!(self.agent.post(&url)).content_type("application/json").send(&b.unwrap_or_default()[..])
            }
            (Method::Put, b) => {
                prep!(self.agent.put(&url)).content_type("application/json").send(&b.unwrap_or_default()[..])
            }
        };
        let mut resp = sent.map_err(|e| Error::new(self.unreachable, format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(256 * 1024 * 1024)
            .read_to_string()
            .map_err(|e| Error::new(self.unreachable, format!("{url}: {e}")))?;
        if (200..300).contains(&status) {
            serde_json::from_str(&text).map_err(|e| Error::new(Code::Internal, format!("{url}: bad response: {e}")))
        } else {
            Err(serde_json::from_str::<Error>(&text)
                .unwrap_or_else(|_| Error::new(Code::Internal, format!("{url}: HTTP {status}: {text}"))))
        }
    }

    fn json<T: Serialize + ?Sized>(v: &T) -> Result<Option<Vec<u8>>> {
        serde_json::to_vec(v).map(Some).map_err(|e| Error::new(Code::Internal, e.to_string()))
    }
}

#[derive(Deserialize)]
struct Offset {
    offset: u64,
}

#[derive(Deserialize)]
struct Records {
    records: Vec<RoutedRecord>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct SectionId {
    section_id: String,
}

#[derive(Deserialize)]
struct Purged {
    purged: usize,
}

#[derive(Deserialize)]
struct Removed {
    removed: usize,
}

#[derive(Deserialize)]
struct DecisionBody {
    decision: Decision,
}

/// Broker and discovery share one listener, so one client serves both.
#[derive(Clone)]
pub struct CoreClient(pub HttpClient);

impl CoreClient {
    pub fn new(base: &str) -> Self {
        Self(HttpClient::new(base, Code::BrokerUnreachable))
    }
}

impl BrokerApi for CoreClient {
    fn create_topic(&self, admin: &str, spec: &TopicSpec) -> Result<TopicView> {
        self.0.call(Method::Post, "/v1/topics", Auth::Admin(admin), &[], HttpClient::json(spec)?)
    }

    fn delete_topic(&self, admin: &str, name: &str) -> Result<()> {
        self.0.call::<IgnoredAny>(Method::Delete, &format!("/v1/topics/{name}"), Auth::Admin(admin), &[], None)?;
        Ok(())
    }

    fn set_topic_status(&self, admin: &str, name: &str, status: TopicStatus) -> Result<()> {
        let body = HttpClient::json(&json!({ "status": status }))?;
        self.0.call::<IgnoredAny>(Method::Put, &format!("/v1/topics/{name}/status"), Auth::Admin(admin), &[], body)?;
        Ok(())
    }

    fn list_topics(&self, admin: &str) -> Result<Vec<TopicView>> {
        self.0.call(Method::Get, "/v1/topics", Auth::Admin(admin), &[], None)
    }

    fn purge(&self, admin: &str, name: &str) -> Result<usize> {
        let p: Purged = self.0.call(Method::Post, &format!("/v1/topics/{name}/purge"), Auth::Admin(admin), &[], None)?;
        Ok(p.purged)
    }

    fn allocate_section(&self, caller: &Caller, topic: &str, receiver: &str) -> Result<String> {
        let body = HttpClient::json(&json!({ "receiverId": receiver }))?;
        let s: SectionId = self.0.call(Method::Post, &format!("/v1/topics/{topic}/sections"), caller.into(), &[], body)?;
        Ok(s.section_id)
    }

    fn release_section(&self, admin: &str, topic: &str, section: &str) -> Result<()> {
        let path = format!("/v1/topics/{topic}/sections/{section}");
        self.0.call::<IgnoredAny>(Method::Delete, &path, Auth::Admin(admin), &[], None)?;
        Ok(())
    }

    fn sections(&self, caller: &Caller, topic: &str) -> Result<Vec<SectionView>> {
        self.0.call(Method::Get, &format!("/v1/topics/{topic}/sections"), caller.into(), &[], None)
    }

    fn append(&self, cred: &Credentials, topic: &str, section: &str, envelope: &Envelope) -> Result<u64> {
        let bytes = envelope.encode().map_err(|e| Error::new(Code::MalformedEnvelope, e.to_string()))?;
        let path = format!("/v1/topics/{topic}/sections/{section}/records");
        let o: Offset = self.0.call(Method::Post, &path, Auth::Service(cred), &[], Some(bytes))?;
        Ok(o.offset)
    }

    fn fetch(&self, cred: &Credentials, topic: &str, section: &str, from: u64, max: usize) -> Result<Vec<RoutedRecord>> {
        let path = format!("/v1/topics/{topic}/sections/{section}/records");
        let (from, max) = (from.to_string(), max.to_string());
        let r: Records =
            self.0.call(Method::Get, &path, Auth::Service(cred), &[("offset", &from), ("max", &max)], None)?;
        Ok(r.records)
    }
}

impl DiscoveryApi for CoreClient {
    fn register_schema(&self, admin: &str, schema: &DataSchema) -> Result<()> {
        self.0.call::<IgnoredAny>(Method::Post, "/v1/discovery/schemas", Auth::Admin(admin), &[], HttpClient::json(schema)?)?;
        Ok(())
    }

    fn schema(&self, caller: &Caller, name: &str, version: u32) -> Result<DataSchema> {
        self.0.call(Method::Get, &format!("/v1/discovery/schemas/{name}/{version}"), caller.into(), &[], None)
    }

    fn register_topic(&self, admin: &str, reg: &TopicRegistration) -> Result<TopicInfo> {
        let path = format!("/v1/discovery/topics/{}", reg.name);
        self.0.call(Method::Post, &path, Auth::Admin(admin), &[], HttpClient::json(reg)?)
    }

    fn register_service(&self, admin: &str, info: &ServiceInfo) -> Result<()> {
        let path = format!("/v1/discovery/services/{}", info.name);
        self.0.call::<IgnoredAny>(Method::Post, &path, Auth::Admin(admin), &[], HttpClient::json(info)?)?;
        Ok(())
    }

    fn set_status(&self, admin: &str, kind: EntryKind, name: &str, status: EntryStatus) -> Result<()> {
        let path = format!("/v1/discovery/{}/{name}", kind.plural());
        let body = HttpClient::json(&json!({ "status": status }))?;
        self.0.call::<IgnoredAny>(Method::Put, &path, Auth::Admin(admin), &[], body)?;
        Ok(())
    }

    fn remove(&self, admin: &str, kind: EntryKind, name: &str) -> Result<()> {
        let path = format!("/v1/discovery/{}/{name}", kind.plural());
        self.0.call::<IgnoredAny>(Method::Delete, &path, Auth::Admin(admin), &[], None)?;
        Ok(())
    }

    fn query_topics(&self, caller: &Caller, filter: &str) -> Result<Vec<TopicInfo>> {
        self.0.call(Method::Get, "/v1/discovery/topics", caller.into(), &[("query", filter)], None)
    }

    fn query_services(&self, caller: &Caller, filter: &str) -> Result<Vec<ServiceInfo>> {
        self.0.call(Method::Get, "/v1/discovery/services", caller.into(), &[("query", filter)], None)
    }
}

#[derive(Clone)]
pub struct SecurityClient(pub HttpClient);

impl SecurityClient {
    pub fn new(base: &str) -> Self {
        Self(HttpClient::new(base, Code::EndpointUnreachable))
    }
}

impl SecurityApi for SecurityClient {
    fn authenticate(&self, cred: &Credentials) -> Result<Profile> {
        self.0.call(Method::Post, "/v1/authn", Auth::Service(cred), &[], None)
    }

    fn authz_check(&self, cred: &Credentials, topic: &str, op: Operation, section: Option<&str>) -> Result<Decision> {
        let body = HttpClient::json(&json!({ "topic": topic, "operation": op, "sectionId": section }))?;
        let d: DecisionBody = self.0.call(Method::Post, "/v1/authz/check", Auth::Service(cred), &[], body)?;
        Ok(d.decision)
    }

    fn public_key(&self, cred: &Credentials, topic: &str, section: &str) -> Result<KeyMaterial> {
        self.0.call(Method::Get, "/v1/keys/public", Auth::Service(cred), &[("topic", topic), ("section", section)], None)
    }

    fn private_key(&self, cred: &Credentials, topic: &str, section: &str) -> Result<KeyMaterial> {
        self.0.call(Method::Get, "/v1/keys/private", Auth::Service(cred), &[("topic", topic), ("section", section)], None)
    }

    fn register_profile(&self, admin: &str, profile: &Profile) -> Result<()> {
        self.0.call::<IgnoredAny>(Method::Post, "/v1/profiles", Auth::Admin(admin), &[], HttpClient::json(profile)?)?;
        Ok(())
    }

    fn profile(&self, admin: &str, service_id: &str) -> Result<Profile> {
        self.0.call(Method::Get, &format!("/v1/profiles/{service_id}"), Auth::Admin(admin), &[], None)
    }

    fn retire_profile(&self, admin: &str, service_id: &str) -> Result<()> {
        self.0.call::<IgnoredAny>(Method::Delete, &format!("/v1/profiles/{service_id}"), Auth::Admin(admin), &[], None)?;
        Ok(())
    }

    fn add_acl(&self, admin: &str, entry: &AccessControlEntry) -> Result<()> {
        self.0.call::<IgnoredAny>(Method::Post, "/v1/acl", Auth::Admin(admin), &[], HttpClient::json(entry)?)?;
        Ok(())
    }

    fn remove_acl(&self, admin: &str, entry: &AccessControlEntry) -> Result<()> {
        self.0.call::<IgnoredAny>(Method::Delete, "/v1/acl", Auth::Admin(admin), &[], HttpClient::json(entry)?)?;
        Ok(())
    }

    fn list_acl(&self, admin: &str) -> Result<Vec<AccessControlEntry>> {
        self.0.call(Method::Get, "/v1/acl", Auth::Admin(admin), &[], None)
    }

    fn generate_key(&self, admin: &str, topic: &str, section: &str, rotate: bool) -> Result<KeyInfo> {
        let body = HttpClient::json(&json!({ "topic": topic, "section": section }))?;
        let rotate = if rotate { "true" } else { "false" };
        self.0.call(Method::Post, "/v1/keys", Auth::Admin(admin), &[("rotate", rotate)], body)
    }

    fn delete_keys(&self, admin: &str, topic: &str, section: &str) -> Result<usize> {
        let r: Removed =
            self.0.call(Method::Delete, "/v1/keys", Auth::Admin(admin), &[("topic", topic), ("section", section)], None)?;
        Ok(r.removed)
    }

    fn list_keys(&self, admin: &str) -> Result<Vec<KeyInfo>> {
        self.0.call(Method::Get, "/v1/keys", Auth::Admin(admin), &[], None)
    }

    fn stats(&self, admin: &str) -> Result<SecurityStats> {
        self.0.call(Method::Get, "/v1/stats", Auth::Admin(admin), &[], None)
    }
}

/// Unauthenticated liveness probe.
pub fn health(client: &HttpClient) -> Result<()> {
    client.call::<IgnoredAny>(Method::Get, "/v1/health", Auth::None, &[], None).map(|_| ())
}
