//! Source and sink connectors.
//!
//! A source runs validate, encrypt, authorize, append. A sink runs
//! authorize, fetch, decrypt, validate. Every stage can be observed through
//! a [`StageLog`].

use std::collections::{HashSet, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::rngs::OsRng;
use rand::Rng;
use serde::{Deserialize, Serialize};

use dhlink_core::acl::Operation;
use dhlink_core::crypto::{decrypt_payload, encrypt_payload, KEY_LEN};
use dhlink_core::keycache::{KeyCache, KeyCacheEntry, KeyKind, DEFAULT_CAPACITY};
use dhlink_core::log::RoutedRecord;
use dhlink_core::schema::{validate_instance, DataSchema};
use dhlink_core::value::{canonical_decode, canonical_encode};
use dhlink_core::{Envelope, Value};

use crate::api::{BrokerApi, Caller, Credentials, DiscoveryApi, SecurityApi};
use crate::clock::{Clock, SystemClock};
use crate::error::{fail, Code, Error, Result};
use crate::http::client::{CoreClient, HttpClient, SecurityClient};
use crate::persist;

pub const DEDUP_WINDOW: usize = 4096;
pub const DEFAULT_POLL_INTERVAL_MS: u64 = 100;
pub const DEFAULT_CACHE_TTL_SECONDS: i64 = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source,
    Sink,
}

/// The JSON configuration block of one connector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConnectorConfig {
    pub service_id: String,
    pub api_key: String,
    pub topic: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section_id: Option<String>,
    pub broker_url: String,
    pub security_url: String,
    #[serde(default)]
    pub plaintext_fallback: bool,
    #[serde(default = "default_ttl")]
    pub cache_ttl_seconds: i64,
    #[serde(default = "default_poll")]
    pub poll_interval_ms: u64,
    /// PEM bundle trusted for https endpoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ca_cert: Option<PathBuf>,
    /// Cursor, de-duplication and counter state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_file: Option<PathBuf>,
}

fn default_ttl() -> i64 {
    DEFAULT_CACHE_TTL_SECONDS
}

fn default_poll() -> u64 {
    DEFAULT_POLL_INTERVAL_MS
}

impl ConnectorConfig {
    pub fn load(path: &Path) -> Result<Self> {
        persist::read_json(path)?
            .ok_or_else(|| Error::new(Code::NotFound, format!("no connector config at {}", path.display())))
    }

    pub fn credentials(&self) -> Credentials {
        Credentials::new(&self.service_id, &self.api_key)
    }

    /// HTTP clients for the configured endpoints.
    pub fn clients(&self) -> Result<(Arc<CoreClient>, Arc<SecurityClient>)> {
        match &self.ca_cert {
            None => Ok((Arc::new(CoreClient::new(&self.broker_url)), Arc::new(SecurityClient::new(&self.security_url)))),
            Some(path) => {
                let pem = std::fs::read(path)?;
                let core = HttpClient::with_ca(&self.broker_url, Code::BrokerUnreachable, &pem)?;
                let sec = HttpClient::with_ca(&self.security_url, Code::EndpointUnreachable, &pem)?;
                Ok((Arc::new(CoreClient(core)), Arc::new(SecurityClient(sec))))
            }
        }
    }
}

/// Looks up the data schema registered for `topic`.
pub fn topic_schema(discovery: &dyn DiscoveryApi, cred: &Credentials, topic: &str) -> Result<DataSchema> {
    discovery
        .query_topics(&Caller::Service(cred.clone()), topic)?
        .into_iter()
        .find(|t| t.name == topic)
        .map(|t| t.schema_spec)
        .ok_or_else(|| Error::new(Code::UnknownTopic, format!("topic `{topic}` is not in discovery")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Validate,
    Encrypt,
    AuthorizeSend,
    Append,
    AuthorizeReceive,
    Fetch,
    Decrypt,
    ValidateReceived,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEvent {
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section: Option<String>,
    pub outcome: String,
}

/// Shared, opt-in recorder of pipeline stages.
#[derive(Debug, Clone, Default)]
pub struct StageLog(Arc<Mutex<Vec<StageEvent>>>);

impl StageLog {
    pub fn take(&self) -> Vec<StageEvent> {
        std::mem::take(&mut *self.0.lock().unwrap_or_else(|e| e.into_inner()))
    }

    fn push(&self, stage: Stage, section: Option<&str>, outcome: impl Into<String>) {
        let ev = StageEvent { stage, section: section.map(str::to_string), outcome: outcome.into() };
        self.0.lock().unwrap_or_else(|e| e.into_inner()).push(ev);
    }
}

/// Key cache shared by a connector's stages.
struct Keys {
    cache: Mutex<KeyCache>,
    ttl_seconds: i64,
}

impl Keys {
    fn new(ttl_seconds: i64) -> Self {
        Self { cache: Mutex::new(KeyCache::new(DEFAULT_CAPACITY)), ttl_seconds }
    }

    fn cached(&self, topic: &str, section: &str, kind: KeyKind, now: i64) -> Option<(String, Vec<u8>)> {
        let mut c = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        c.get(topic, section, kind, now).map(|e| (e.key_id.clone(), e.key.clone()))
    }

    fn store(&self, topic: &str, section: &str, kind: KeyKind, key_id: &str, key: &[u8], now: i64) {
        let entry = KeyCacheEntry {
            topic: topic.into(),
            section: section.into(),
            kind,
            key_id: key_id.into(),
            key: key.to_vec(),
            fetched_at: now,
            ttl_seconds: self.ttl_seconds,
        };
        self.cache.lock().unwrap_or_else(|e| e.into_inner()).put(entry);
    }

    fn invalidate(&self, topic: &str, section: &str) {
        self.cache.lock().unwrap_or_else(|e| e.into_inner()).invalidate(topic, section);
    }
}

/// Not-found and deny both mean the key is unavailable to this caller.
fn absent(e: &Error) -> bool {
    e.is(Code::NotFound) || e.is(Code::Unauthorized)
}

fn key_array(key: &[u8]) -> Result<[u8; KEY_LEN]> {
    key.try_into().map_err(|_| Error::new(Code::Internal, format!("key has {} bytes", key.len())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeySource {
    Cache,
    Security,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SendOutcome {
    pub section_id: String,
    /// `None` when the section was skipped for want of a key.
    pub offset: Option<u64>,
    pub encrypted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<Code>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct SourceState {
    #[serde(default)]
    instance: Option<String>,
    counter: u64,
}

pub struct SourceConnector {
    cred: Credentials,
    topic: String,
    schema: DataSchema,
    broker: Arc<dyn BrokerApi>,
    security: Arc<dyn SecurityApi>,
    clock: Arc<dyn Clock>,
    keys: Keys,
    plaintext_fallback: bool,
    instance: String,
    counter: u64,
    state_file: Option<PathBuf>,
    stages: Option<StageLog>,
}

impl SourceConnector {
    pub fn new(
        cred: Credentials,
        topic: &str,
        schema: DataSchema,
        broker: Arc<dyn BrokerApi>,
        security: Arc<dyn SecurityApi>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Self {
            cred,
            topic: topic.into(),
            schema,
            broker,
            security,
            clock,
            keys: Keys::new(DEFAULT_CACHE_TTL_SECONDS),
            plaintext_fallback: false,
            instance: hex::encode(OsRng.gen::<[u8; 4]>()),
            counter: 0,
            state_file: None,
            stages: None,
        }
    }

    /// Builds a source from its config block, resolving the schema through
    /// discovery on the broker endpoint.
    pub fn from_config(cfg: &ConnectorConfig) -> Result<Self> {
        if cfg.role != Role::Source {
            return fail(Code::BadRequest, "config role is not source");
        }
        let (core, security) = cfg.clients()?;
        let cred = cfg.credentials();
        let schema = topic_schema(&*core, &cred, &cfg.topic)?;
        let mut c = Self::new(cred, &cfg.topic, schema, core, security, Arc::new(SystemClock))
            .with_fallback(cfg.plaintext_fallback)
            .with_ttl(cfg.cache_ttl_seconds);
        if let Some(p) = &cfg.state_file {
            c = c.with_state_file(p)?;
        }
        Ok(c)
    }

    pub fn with_fallback(mut self, on: bool) -> Self {
        self.plaintext_fallback = on;
        self
    }

    pub fn with_ttl(mut self, ttl_seconds: i64) -> Self {
        self.keys = Keys::new(ttl_seconds);
        self
    }

    pub fn with_stages(mut self, log: StageLog) -> Self {
        self.stages = Some(log);
        self
    }

    /// Persists the id series so a restarted source continues it.
    pub fn with_state_file(mut self, path: &Path) -> Result<Self> {
        let st: SourceState = persist::read_json(path)?.unwrap_or_default();
        if let Some(i) = st.instance {
            self.instance = i;
        }
        self.counter = st.counter;
        self.state_file = Some(path.to_path_buf());
        Ok(self)
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn schema(&self) -> &DataSchema {
        &self.schema
    }

    pub fn sent(&self) -> u64 {
        self.counter
    }

    fn stage(&self, stage: Stage, section: Option<&str>, outcome: impl Into<String>) {
        if let Some(l) = &self.stages {
            l.push(stage, section, outcome);
        }
    }

    fn public_key(&self, section: &str, now: i64) -> Result<Option<(String, Vec<u8>, KeySource)>> {
        if let Some((id, key)) = self.keys.cached(&self.topic, section, KeyKind::Public, now) {
            return Ok(Some((id, key, KeySource::Cache)));
        }
        match self.security.public_key(&self.cred, &self.topic, section) {
            Ok(km) => {
                self.keys.store(&self.topic, section, KeyKind::Public, &km.key_id, &km.key, now);
                Ok(Some((km.key_id, km.key, KeySource::Security)))
            }
            Err(e) if absent(&e) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Sends `value` to every section of the topic, in section-id order.
    pub fn send(&mut self, value: &Value) -> Result<Vec<SendOutcome>> {
        let report = validate_instance(&self.schema, value);
        if !report.ok {
            self.stage(Stage::Validate, None, format!("schema-violation: {report}"));
            return fail(Code::SchemaViolation, report.to_string());
        }
        self.stage(Stage::Validate, None, "ok");
        let plain = canonical_encode(value).map_err(|e| Error::new(Code::SchemaViolation, e.to_string()))?;

        let mut sections = self.broker.sections(&Caller::Service(self.cred.clone()), &self.topic)?;
        sections.sort_by(|a, b| a.section_id.cmp(&b.section_id));
        let now = self.clock.now();
        let message_id = format!("{}-{}-{}", self.cred.service_id, self.instance, self.counter);

        let mut built = Vec::with_capacity(sections.len());
        for s in &sections {
            let sid = s.section_id.as_str();
            let (encrypted, key_id, payload) = match self.public_key(sid, now)? {
                Some((key_id, key, src)) => {
                    let ct = encrypt_payload(&mut OsRng, &key_array(&key)?, &plain)
                        .map_err(|e| Error::new(Code::Internal, e.to_string()))?;
                    let src = match src {
                        KeySource::Cache => "encrypted:cache",
                        KeySource::Security => "encrypted:security",
                    };
                    self.stage(Stage::Encrypt, Some(sid), src);
                    (true, Some(key_id), ct)
                }
                None if self.plaintext_fallback => {
                    self.stage(Stage::Encrypt, Some(sid), "unencrypted");
                    (false, None, plain.clone())
                }
                None => {
                    self.stage(Stage::Encrypt, Some(sid), "key-unavailable");
                    built.push((sid.to_string(), None));
                    continue;
                }
            };
            let env = Envelope {
                topic: self.topic.clone(),
                section: sid.to_string(),
                schema: self.schema.reference(),
                sender: self.cred.service_id.clone(),
                message_id: message_id.clone(),
                sent_at: now,
                encrypted,
                key_id,
                payload,
            };
            built.push((sid.to_string(), Some(env)));
        }

        let decision = self.security.authz_check(&self.cred, &self.topic, Operation::Send, None)?;
        if !decision.is_allow() {
            self.stage(Stage::AuthorizeSend, None, "deny");
            return fail(Code::Unauthorized, format!("`{}` may not send on `{}`", self.cred.service_id, self.topic));
        }
        self.stage(Stage::AuthorizeSend, None, "allow");

        self.counter += 1;
        self.save()?;
        let mut out = Vec::with_capacity(built.len());
        for (sid, env) in built {
            let Some(env) = env else {
                out.push(SendOutcome { section_id: sid, offset: None, encrypted: false, error: Some(Code::KeyUnavailable) });
                continue;
            };
            match self.broker.append(&self.cred, &self.topic, &sid, &env) {
                Ok(offset) => {
                    self.stage(Stage::Append, Some(&sid), format!("offset {offset}"));
                    out.push(SendOutcome { section_id: sid, offset: Some(offset), encrypted: env.encrypted, error: None });
                }
                Err(e) => {
                    self.stage(Stage::Append, Some(&sid), e.code.as_str());
                    if e.is(Code::BrokerUnreachable) || e.is(Code::Unauthorized) {
                        return Err(e);
                    }
                    out.push(SendOutcome { section_id: sid, offset: None, encrypted: env.encrypted, error: Some(e.code) });
                }
            }
        }
        Ok(out)
    }

    fn save(&self) -> Result<()> {
        match &self.state_file {
            Some(p) => persist::write_json(p, &SourceState { instance: Some(self.instance.clone()), counter: self.counter }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Received {
    pub offset: u64,
    pub sender: String,
    #[serde(rename = "messageId")]
    pub message_id: String,
    #[serde(rename = "sentAt")]
    pub sent_at: i64,
    pub encrypted: bool,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub offset: u64,
    pub error: Error,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PollOutcome {
    pub records: Vec<Received>,
    /// Records dropped as undecryptable or schema-invalid.
    pub skipped: Vec<Skipped>,
    pub duplicates: usize,
    /// Set when a record could not be read for want of its private key.
    /// The cursor stops in front of that record.
    pub blocked: Option<Skipped>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SinkStats {
    pub received: u64,
    pub skipped: u64,
    pub duplicates: u64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct SinkState {
    cursor: u64,
    seen: VecDeque<String>,
    stats: SinkStats,
}

enum Decoded {
    Value(Value),
    Skip(Error),
    Blocked(Error),
}

/// Decrypt and validate stages shared by the sink and the read-only client.
struct Reader {
    cred: Credentials,
    topic: String,
    section: String,
    schema: DataSchema,
    security: Arc<dyn SecurityApi>,
    keys: Keys,
}

impl Reader {
    fn private_key(&self, key_id: &str, now: i64) -> Result<Option<Vec<u8>>> {
        if let Some((id, key)) = self.keys.cached(&self.topic, &self.section, KeyKind::Private, now) {
            if id == key_id {
                return Ok(Some(key));
            }
            self.keys.invalidate(&self.topic, &self.section);
        }
        match self.security.private_key(&self.cred, &self.topic, &self.section) {
            Ok(km) => {
                self.keys.store(&self.topic, &self.section, KeyKind::Private, &km.key_id, &km.key, now);
                Ok((km.key_id == key_id).then_some(km.key))
            }
            Err(e) if absent(&e) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn decode(&self, rec: &RoutedRecord, now: i64, stages: Option<&StageLog>) -> Result<Decoded> {
        let env = &rec.envelope;
        let stage = |st: Stage, out: &str| {
            if let Some(l) = stages {
                l.push(st, Some(&self.section), out.to_string());
            }
        };
        let plain = if env.encrypted {
            let key_id = env.key_id.as_deref().unwrap_or_default();
            let Some(key) = self.private_key(key_id, now)? else {
                stage(Stage::Decrypt, "key-unavailable");
                let msg = format!("no private key `{key_id}` for offset {}", rec.offset);
                return Ok(Decoded::Blocked(Error::new(Code::KeyUnavailable, msg)));
            };
            match decrypt_payload(&key_array(&key)?, &env.payload) {
                Ok(p) => {
                    stage(Stage::Decrypt, "ok");
                    p
                }
                Err(e) => {
                    stage(Stage::Decrypt, "decrypt-failure");
                    return Ok(Decoded::Skip(Error::new(Code::DecryptFailure, format!("offset {}: {e}", rec.offset))));
                }
            }
        } else {
            stage(Stage::Decrypt, "unencrypted");
            env.payload.clone()
        };
        let value = match canonical_decode(&plain) {
            Ok(v) => v,
            Err(e) => {
                stage(Stage::ValidateReceived, "schema-violation");
                return Ok(Decoded::Skip(Error::new(Code::SchemaViolation, format!("offset {}: {e}", rec.offset))));
            }
        };
        let report = validate_instance(&self.schema, &value);
        if !report.ok || env.schema != self.schema.reference() {
            stage(Stage::ValidateReceived, "schema-violation");
            return Ok(Decoded::Skip(Error::new(Code::SchemaViolation, format!("offset {}: {report}", rec.offset))));
        }
        stage(Stage::ValidateReceived, "ok");
        Ok(Decoded::Value(value))
    }
}

pub struct SinkConnector {
    reader: Reader,
    broker: Arc<dyn BrokerApi>,
    clock: Arc<dyn Clock>,
    cursor: u64,
    seen: VecDeque<String>,
    seen_set: HashSet<String>,
    stats: SinkStats,
    state_file: Option<PathBuf>,
    stages: Option<StageLog>,
}

impl SinkConnector {
    pub fn new(
        cred: Credentials,
        topic: &str,
        section: &str,
        schema: DataSchema,
        broker: Arc<dyn BrokerApi>,
        security: Arc<dyn SecurityApi>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        let reader = Reader {
            cred,
            topic: topic.into(),
            section: section.into(),
            schema,
            security,
            keys: Keys::new(DEFAULT_CACHE_TTL_SECONDS),
        };
        Self {
            reader,
            broker,
            clock,
            cursor: 0,
            seen: VecDeque::new(),
            seen_set: HashSet::new(),
            stats: SinkStats::default(),
            state_file: None,
            stages: None,
        }
    }

    /// Builds a sink from its config block. Without a `sectionId` the
    /// receiver's own section is looked up.
    pub fn from_config(cfg: &ConnectorConfig) -> Result<Self> {
        if cfg.role != Role::Sink {
            return fail(Code::BadRequest, "config role is not sink");
        }
        let (core, security) = cfg.clients()?;
        let cred = cfg.credentials();
        let schema = topic_schema(&*core, &cred, &cfg.topic)?;
        let section = match &cfg.section_id {
            Some(s) => s.clone(),
            None => own_section(&*core, &cred, &cfg.topic)?,
        };
        let mut c = Self::new(cred, &cfg.topic, &section, schema, core, security, Arc::new(SystemClock))
            .with_ttl(cfg.cache_ttl_seconds);
        if let Some(p) = &cfg.state_file {
            c = c.with_state_file(p)?;
        }
        Ok(c)
    }

    pub fn with_ttl(mut self, ttl_seconds: i64) -> Self {
        self.reader.keys = Keys::new(ttl_seconds);
        self
    }

    pub fn with_stages(mut self, log: StageLog) -> Self {
        self.stages = Some(log);
        self
    }

    /// Restores and from now on persists the cursor and de-dup window.
    pub fn with_state_file(mut self, path: &Path) -> Result<Self> {
        if let Some(st) = persist::read_json::<SinkState>(path)? {
            self.cursor = st.cursor;
            self.seen_set = st.seen.iter().cloned().collect();
            self.seen = st.seen;
            self.stats = st.stats;
        }
        self.state_file = Some(path.to_path_buf());
        Ok(self)
    }

    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    pub fn section(&self) -> &str {
        &self.reader.section
    }

    pub fn topic(&self) -> &str {
        &self.reader.topic
    }

    pub fn stats(&self) -> SinkStats {
        self.stats
    }

    fn stage(&self, stage: Stage, outcome: impl Into<String>) {
        if let Some(l) = &self.stages {
            l.push(stage, Some(&self.reader.section), outcome);
        }
    }

    fn remember(&mut self, id: &str) -> bool {
        if self.seen_set.contains(id) {
            return false;
        }
        self.seen_set.insert(id.to_string());
        self.seen.push_back(id.to_string());
        while self.seen.len() > DEDUP_WINDOW {
            if let Some(old) = self.seen.pop_front() {
                self.seen_set.remove(&old);
            }
        }
        true
    }

    /// Reads up to `max` records from the cursor.
    pub fn poll(&mut self, max: usize) -> Result<PollOutcome> {
        let r = &self.reader;
        let decision = r.security.authz_check(&r.cred, &r.topic, Operation::Receive, Some(&r.section))?;
        if !decision.is_allow() {
            self.stage(Stage::AuthorizeReceive, "deny");
            return fail(Code::Unauthorized, format!("`{}` may not receive on `{}`", r.cred.service_id, r.topic));
        }
        self.stage(Stage::AuthorizeReceive, "allow");
        let records = self.broker.fetch(&r.cred, &r.topic, &r.section, self.cursor, max)?;
        self.stage(Stage::Fetch, format!("{} records", records.len()));

        let now = self.clock.now();
        let mut out = PollOutcome::default();
        for rec in records {
            if rec.offset < self.cursor {
                continue;
            }
            match self.reader.decode(&rec, now, self.stages.as_ref())? {
                Decoded::Blocked(error) => {
                    self.cursor = rec.offset;
                    out.blocked = Some(Skipped { offset: rec.offset, error });
                    break;
                }
                Decoded::Skip(error) => {
                    self.stats.skipped += 1;
                    out.skipped.push(Skipped { offset: rec.offset, error });
                }
                Decoded::Value(value) => {
                    let env = rec.envelope;
                    if self.remember(&env.message_id) {
                        self.stats.received += 1;
                        out.records.push(Received {
                            offset: rec.offset,
                            sender: env.sender,
                            message_id: env.message_id,
                            sent_at: env.sent_at,
                            encrypted: env.encrypted,
                            value,
                        });
                    } else {
                        self.stats.duplicates += 1;
                        out.duplicates += 1;
                    }
                }
            }
            self.cursor = rec.offset + 1;
        }
        self.save()?;
        Ok(out)
    }

    fn save(&self) -> Result<()> {
        let Some(p) = &self.state_file else { return Ok(()) };
        let st = SinkState { cursor: self.cursor, seen: self.seen.clone(), stats: self.stats };
        persist::write_json(p, &st)
    }
}

/// Finds the section allocated to the caller on `topic`.
pub fn own_section(broker: &dyn BrokerApi, cred: &Credentials, topic: &str) -> Result<String> {
    broker
        .sections(&Caller::Service(cred.clone()), topic)?
        .into_iter()
        .find(|s| s.receiver_id == cred.service_id)
        .map(|s| s.section_id)
        .ok_or_else(|| Error::new(Code::UnknownSection, format!("`{}` has no section on `{topic}`", cred.service_id)))
}

/// Read-only access to one section for consumers that use the records
/// endpoint directly. Keeps no cursor and does not de-duplicate.
pub struct RestReader {
    reader: Reader,
    broker: Arc<dyn BrokerApi>,
    clock: Arc<dyn Clock>,
}

impl RestReader {
    pub fn new(
        cred: Credentials,
        topic: &str,
        section: &str,
        schema: DataSchema,
        broker: Arc<dyn BrokerApi>,
        security: Arc<dyn SecurityApi>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        let reader = Reader {
            cred,
            topic: topic.into(),
            section: section.into(),
            schema,
            security,
            keys: Keys::new(DEFAULT_CACHE_TTL_SECONDS),
        };
        Self { reader, broker, clock }
    }

    /// Decoded records from `from`, each paired with its offset. Records
    /// that cannot be read come back as errors in place.
    pub fn read(&self, from: u64, max: usize) -> Result<Vec<(u64, Result<Value>)>> {
        let r = &self.reader;
        let now = self.clock.now();
        let records = self.broker.fetch(&r.cred, &r.topic, &r.section, from, max)?;
        records
            .iter()
            .map(|rec| {
                Ok((
                    rec.offset,
                    match r.decode(rec, now, None)? {
                        Decoded::Value(v) => Ok(v),
                        Decoded::Skip(e) | Decoded::Blocked(e) => Err(e),
                    },
                ))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::broker::{TopicSpec, TopicStatus};
    use crate::clock::ManualClock;
    use crate::platform::Platform;
    use crate::security::Profile;
    use dhlink_core::acl::AccessControlEntry;
    use dhlink_core::log::TopicPolicy;
    use dhlink_core::schema::{FieldKind, FieldSpec};
    use serde_json::json;

    const ADMIN: &str = "admin";
    const T0: i64 = 1_700_000_000_000;

    struct Fx {
        p: Platform,
        clock: Arc<ManualClock>,
        schema: DataSchema,
        sections: Vec<String>,
    }

    fn fx(receivers: &[&str], keyed: bool) -> Fx {
        let clock = Arc::new(ManualClock::new(T0));
        let p = Platform::open(None, ADMIN, ADMIN, clock.clone()).unwrap();
        let schema = DataSchema::new(
            "reading",
            1,
            vec![FieldSpec::new("v", FieldKind::Integer, true)],
        );
        p.schemas.register(&schema).unwrap();
        let spec = TopicSpec { name: "t".into(), policy: TopicPolicy::retained_unlimited(), schema: schema.reference() };
        p.broker.create_topic(ADMIN, &spec).unwrap();
        p.security.register_profile(ADMIN, &Profile::new("src", "ks", "app")).unwrap();
        p.security.add_acl(ADMIN, &AccessControlEntry::send("src", "t")).unwrap();
        let mut sections = vec![];
        for r in receivers {
            p.security.register_profile(ADMIN, &Profile::new(r, &format!("key-{r}"), "app")).unwrap();
            let sid = p.broker.allocate_section(&Caller::Admin(ADMIN.into()), "t", r).unwrap();
            p.security.add_acl(ADMIN, &AccessControlEntry::receive(*r, "t", &sid)).unwrap();
            if keyed {
                p.security.generate_key(ADMIN, "t", &sid, false).unwrap();
            }
            sections.push(sid);
        }
        p.broker.set_topic_status(ADMIN, "t", TopicStatus::Ready).unwrap();
        Fx { p, clock, schema, sections }
    }

    impl Fx {
        fn source(&self) -> SourceConnector {
            SourceConnector::new(
                Credentials::new("src", "ks"),
                "t",
                self.schema.clone(),
                self.p.broker.clone(),
                self.p.security.clone(),
                self.clock.clone(),
            )
        }

        fn sink(&self, r: &str, i: usize) -> SinkConnector {
            SinkConnector::new(
                Credentials::new(r, format!("key-{r}")),
                "t",
                &self.sections[i],
                self.schema.clone(),
                self.p.broker.clone(),
                self.p.security.clone(),
                self.clock.clone(),
            )
        }
    }

    #[test]
    fn two_sections_get_distinct_ciphertexts() {
        let f = fx(&["r1", "r2"], true);
        let out = f.source().send(&json!({"v": 7})).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|o| o.encrypted && o.offset == Some(0)));
        let a = f.p.broker.topic_view("t").unwrap();
        let logs: Vec<_> = a.sections.iter().map(|s| s.records.clone()).collect();
        assert_eq!(logs.len(), 2);
        let p0 = f.p.broker.fetch(&Credentials::new("r1", "key-r1"), "t", &f.sections[0], 0, 10).unwrap();
        let p1 = f.p.broker.fetch(&Credentials::new("r2", "key-r2"), "t", &f.sections[1], 0, 10).unwrap();
        assert_ne!(p0[0].envelope.payload, p1[0].envelope.payload);
    }

    #[test]
    fn round_trip_and_cursor() {
        let f = fx(&["r1"], true);
        let mut src = f.source();
        for i in 0..5 {
            src.send(&json!({"v": i})).unwrap();
        }
        let mut sink = f.sink("r1", 0);
        let got = sink.poll(3).unwrap();
        assert_eq!(got.records.iter().map(|r| r.value["v"].as_i64().unwrap()).collect::<Vec<_>>(), [0, 1, 2]);
        let got = sink.poll(10).unwrap();
        assert_eq!(got.records.len(), 2);
        assert_eq!(sink.cursor(), 5);
        assert!(sink.poll(10).unwrap().records.is_empty());
    }

    #[test]
    fn fallback_and_skip_without_keys() {
        let f = fx(&["r1"], false);
        let out = f.source().send(&json!({"v": 1})).unwrap();
        assert_eq!(out[0].offset, None);
        assert_eq!(out[0].error, Some(Code::KeyUnavailable));
        assert_eq!(f.p.broker.topic_view("t").unwrap().sections[0].next_offset, 0);

        let out = f.source().with_fallback(true).send(&json!({"v": 1})).unwrap();
        assert_eq!((out[0].offset, out[0].encrypted), (Some(0), false));
        let got = f.sink("r1", 0).poll(10).unwrap();
        assert_eq!(got.records[0].value, json!({"v": 1}));
        assert!(!got.records[0].encrypted);
    }

    #[test]
    fn invalid_value_and_denied_sender() {
        let f = fx(&["r1"], true);
        assert!(f.source().send(&json!({"v": "x"})).unwrap_err().is(Code::SchemaViolation));
        f.p.security.remove_acl(ADMIN, &AccessControlEntry::send("src", "t")).unwrap();
        let log = StageLog::default();
        let err = f.source().with_stages(log.clone()).send(&json!({"v": 1})).unwrap_err();
        assert!(err.is(Code::Unauthorized));
        assert_eq!(f.p.broker.topic_view("t").unwrap().sections[0].next_offset, 0);
        let stages: Vec<_> = log.take().into_iter().map(|e| e.stage).collect();
        assert_eq!(stages, [Stage::Validate, Stage::Encrypt, Stage::AuthorizeSend]);
    }

    #[test]
    fn warm_cache_skips_lookups_until_ttl() {
        let f = fx(&["r1", "r2"], true);
        let mut src = f.source().with_ttl(60);
        src.send(&json!({"v": 1})).unwrap();
        let before = f.p.security.stats(ADMIN).unwrap().public_lookups;
        src.send(&json!({"v": 2})).unwrap();
        assert_eq!(f.p.security.stats(ADMIN).unwrap().public_lookups, before);
        f.clock.advance(60_000);
        src.send(&json!({"v": 3})).unwrap();
        assert_eq!(f.p.security.stats(ADMIN).unwrap().public_lookups, before + 2);
    }

    #[test]
    fn missing_private_key_blocks_cursor() {
        let f = fx(&["r1"], true);
        f.source().send(&json!({"v": 1})).unwrap();
        f.p.security.delete_keys(ADMIN, "t", &f.sections[0]).unwrap();
        let mut sink = f.sink("r1", 0);
        let out = sink.poll(10).unwrap();
        assert!(out.records.is_empty());
        assert!(out.blocked.unwrap().error.is(Code::KeyUnavailable));
        assert_eq!(sink.cursor(), 0);
        f.p.security.generate_key(ADMIN, "t", &f.sections[0], false).unwrap();
        let out = sink.poll(10).unwrap();
        assert!(out.blocked.unwrap().error.is(Code::KeyUnavailable));
        assert_eq!(sink.cursor(), 0);
    }

    #[test]
    fn revoked_receiver_is_refused() {
        let f = fx(&["r1"], true);
        f.p.security.remove_acl(ADMIN, &AccessControlEntry::receive("r1", "t", &f.sections[0])).unwrap();
        assert!(f.sink("r1", 0).poll(10).unwrap_err().is(Code::Unauthorized));
    }

    #[test]
    fn independent_sources_do_not_collide() {
        let f = fx(&["r1"], true);
        f.source().send(&json!({"v": 1})).unwrap();
        f.source().send(&json!({"v": 2})).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let state = dir.path().join("src.json");
        f.source().with_state_file(&state).unwrap().send(&json!({"v": 3})).unwrap();
        f.source().with_state_file(&state).unwrap().send(&json!({"v": 4})).unwrap();
        let out = f.sink("r1", 0).poll(10).unwrap();
        assert_eq!((out.records.len(), out.duplicates), (4, 0));
        let ids: Vec<_> = out.records.iter().map(|r| r.message_id.clone()).collect();
        assert_eq!(ids[2].rsplit_once('-').unwrap().0, ids[3].rsplit_once('-').unwrap().0);
    }

    #[test]
    fn duplicates_dropped_and_state_persists() {
        let f = fx(&["r1"], true);
        let mut src = f.source();
        src.send(&json!({"v": 1})).unwrap();
        src.counter = 0;
        src.send(&json!({"v": 1})).unwrap();
        src.send(&json!({"v": 2})).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let state = dir.path().join("sink.json");
        let mut sink = f.sink("r1", 0).with_state_file(&state).unwrap();
        let out = sink.poll(2).unwrap();
        assert_eq!((out.records.len(), out.duplicates), (1, 1));
        let mut sink = f.sink("r1", 0).with_state_file(&state).unwrap();
        assert_eq!(sink.cursor(), 2);
        let out = sink.poll(10).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].offset, 2);
    }

    #[test]
    fn receive_stage_order() {
        let f = fx(&["r1"], true);
        f.source().send(&json!({"v": 1})).unwrap();
        let log = StageLog::default();
        f.sink("r1", 0).with_stages(log.clone()).poll(10).unwrap();
        let stages: Vec<_> = log.take().into_iter().map(|e| e.stage).collect();
        assert_eq!(stages, [Stage::AuthorizeReceive, Stage::Fetch, Stage::Decrypt, Stage::ValidateReceived]);
    }

    #[test]
    fn rest_reader_decodes() {
        let f = fx(&["r1"], true);
        f.source().send(&json!({"v": 9})).unwrap();
        let rr = RestReader::new(
            Credentials::new("r1", "key-r1"),
            "t",
            &f.sections[0],
            f.schema.clone(),
            f.p.broker.clone(),
            f.p.security.clone(),
            f.clock.clone(),
        );
        let got = rr.read(0, 10).unwrap();
        assert_eq!(got[0].1.as_ref().unwrap(), &json!({"v": 9}));
    }
}
