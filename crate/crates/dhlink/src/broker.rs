//! Topic and section store-and-forward hub.
//!
//! On disk: `topics.json` holds topic metadata, and every section has an
//! append-only JSON-lines log at `<dir>/<topic>/<section>.log`. A compacted
//! log starts with a `{"nextOffset":n}` header so offsets survive purges.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use dhlink_core::acl::Operation;
use dhlink_core::ident::{is_identifier, is_topic_name};
use dhlink_core::log::{RoutedRecord, SectionLog, TopicPolicy};
use dhlink_core::schema::SchemaRef;
use dhlink_core::{Envelope, Millis};

use crate::api::{BrokerApi, Caller, Credentials, SecurityApi};
use crate::clock::Clock;
use crate::error::{fail, Code, Error, Result};
use crate::persist::{self, JsonlWriter};
use crate::schemas::SchemaRegistry;
use crate::security::Security;

pub const MAX_FETCH: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopicStatus {
    Created,
    Ready,
    Retired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TopicSpec {
    pub name: String,
    #[serde(flatten)]
    pub policy: TopicPolicy,
    pub schema: SchemaRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SectionView {
    pub section_id: String,
    pub receiver_id: String,
    pub next_offset: u64,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TopicView {
    pub name: String,
    #[serde(flatten)]
    pub policy: TopicPolicy,
    pub schema: SchemaRef,
    pub status: TopicStatus,
    pub sections: Vec<SectionView>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct SectionMeta {
    section_id: String,
    receiver_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct TopicMeta {
    name: String,
    #[serde(flatten)]
    policy: TopicPolicy,
    schema: SchemaRef,
    status: TopicStatus,
    sections: Vec<SectionMeta>,
    next_section: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LogLine {
    Header {
        #[serde(rename = "nextOffset")]
        next_offset: u64,
    },
    Record(RoutedRecord),
}

struct SectionFile {
    writer: JsonlWriter,
    lines: usize,
}

struct Section {
    receiver: String,
    log: SectionLog,
    file: Option<SectionFile>,
}

impl Section {
    fn path(dir: &Path, topic: &str, section: &str) -> PathBuf {
        dir.join(topic).join(format!("{section}.log"))
    }

    fn open(dir: Option<&Path>, topic: &str, meta: &SectionMeta, policy: TopicPolicy) -> Result<Self> {
        let Some(dir) = dir else {
            return Ok(Self { receiver: meta.receiver_id.clone(), log: SectionLog::new(policy), file: None });
        };
        let path = Self::path(dir, topic, &meta.section_id);
        let lines: Vec<LogLine> = persist::read_jsonl(&path)?;
        let count = lines.len();
        let mut min_next = 0;
        let mut records = Vec::with_capacity(count);
        for line in lines {
            match line {
                LogLine::Header { next_offset } => min_next = min_next.max(next_offset),
                LogLine::Record(r) => records.push(r),
            }
        }
        let log = SectionLog::restore(policy, min_next, records);
        let mut s = Self {
            receiver: meta.receiver_id.clone(),
            log,
            file: Some(SectionFile { writer: JsonlWriter::open(&path)?, lines: count }),
        };
        if count != s.log.len() {
            s.compact()?;
        }
        Ok(s)
    }

    /// Rewrites the file to hold exactly the surviving records.
    fn compact(&mut self) -> Result<()> {
        let Some(f) = &mut self.file else { return Ok(()) };
        let path = f.writer.path().to_path_buf();
        let mut lines = vec![LogLine::Header { next_offset: self.log.next_offset() }];
        lines.extend(self.log.records().cloned().map(LogLine::Record));
        persist::write_jsonl(&path, &lines, false)?;
        *f = SectionFile { writer: JsonlWriter::open(&path)?, lines: lines.len() };
        Ok(())
    }

    fn append(&mut self, envelope: Envelope, now: Millis) -> Result<u64> {
        let offset = self.log.next_offset();
        if let Some(f) = &mut self.file {
            let rec = RoutedRecord { offset, appended_at: now, delivered: false, envelope: envelope.clone() };
            f.writer.append(&LogLine::Record(rec))?;
            f.lines += 1;
        }
        let (assigned, evicted) = self.log.append(envelope, now);
        debug_assert_eq!(assigned, offset);
        let stale = self.file.as_ref().is_some_and(|f| f.lines > 2 * self.log.len() + 64);
        if evicted > 0 && stale {
            self.compact()?;
        }
        Ok(offset)
    }

    fn fetch(&mut self, from: u64, max: usize) -> Result<Vec<RoutedRecord>> {
        let (records, purged) = self.log.fetch(from, max);
        if purged > 0 {
            self.compact()?;
        }
        Ok(records)
    }

    fn enforce_retention(&mut self, now: Millis) -> Result<usize> {
        let purged = self.log.enforce_retention(now);
        if purged > 0 {
            self.compact()?;
        }
        Ok(purged)
    }

    fn view(&self, id: &str) -> SectionView {
        SectionView {
            section_id: id.into(),
            receiver_id: self.receiver.clone(),
            next_offset: self.log.next_offset(),
            records: self.log.len(),
        }
    }
}

struct Topic {
    meta: TopicMeta,
    sections: BTreeMap<String, Mutex<Section>>,
}

impl Topic {
    fn view(&self) -> TopicView {
        TopicView {
            name: self.meta.name.clone(),
            policy: self.meta.policy,
            schema: self.meta.schema.clone(),
            status: self.meta.status,
            sections: self.sections.iter().map(|(id, s)| lock(s).view(id)).collect(),
        }
    }

    fn section(&self, id: &str) -> Result<&Mutex<Section>> {
        self.sections
            .get(id)
            .ok_or_else(|| Error::new(Code::UnknownSection, format!("no section `{id}` on topic `{}`", self.meta.name)))
    }
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

pub struct Broker {
    dir: Option<PathBuf>,
    admin_token: String,
    clock: Arc<dyn Clock>,
    security: Arc<Security>,
    schemas: Arc<SchemaRegistry>,
    topics: RwLock<BTreeMap<String, Topic>>,
}

impl Broker {
    pub fn open(
        dir: Option<&Path>,
        admin_token: &str,
        clock: Arc<dyn Clock>,
        security: Arc<Security>,
        schemas: Arc<SchemaRegistry>,
    ) -> Result<Self> {
        let mut topics = BTreeMap::new();
        if let Some(dir) = dir {
            fs::create_dir_all(dir)?;
            let metas: Vec<TopicMeta> = persist::read_json(&dir.join("topics.json"))?.unwrap_or_default();
            for meta in metas {
                let mut sections = BTreeMap::new();
                for s in &meta.sections {
                    sections.insert(s.section_id.clone(), Mutex::new(Section::open(Some(dir), &meta.name, s, meta.policy)?));
                }
                topics.insert(meta.name.clone(), Topic { meta, sections });
            }
        }
        Ok(Self {
            dir: dir.map(Path::to_path_buf),
            admin_token: admin_token.into(),
            clock,
            security,
            schemas,
            topics: RwLock::new(topics),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn security(&self) -> &Arc<Security> {
        &self.security
    }

    fn check_admin(&self, token: &str) -> Result<()> {
        if !self.admin_token.is_empty() && token == self.admin_token {
            Ok(())
        } else {
            fail(Code::NotAdmin, "administrator token required")
        }
    }

    fn check_caller(&self, caller: &Caller) -> Result<Option<String>> {
        match caller {
            Caller::Admin(t) => self.check_admin(t).map(|()| None),
            Caller::Service(c) => self.security.authenticate(c).map(|p| Some(p.service_id)),
        }
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, BTreeMap<String, Topic>> {
        self.topics.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, BTreeMap<String, Topic>> {
        self.topics.write().unwrap_or_else(|e| e.into_inner())
    }

    fn save(&self, topics: &BTreeMap<String, Topic>) -> Result<()> {
        match &self.dir {
            Some(d) => persist::write_json(&d.join("topics.json"), &topics.values().map(|t| &t.meta).collect::<Vec<_>>()),
            None => Ok(()),
        }
    }

    /// Receiver ids of every section on `topic`, in section order.
    pub fn receivers(&self, topic: &str) -> Vec<String> {
        self.read().get(topic).map_or_else(Vec::new, |t| t.meta.sections.iter().map(|s| s.receiver_id.clone()).collect())
    }

    pub fn topic_names(&self) -> Vec<String> {
        self.read().keys().cloned().collect()
    }

    pub fn topic_view(&self, name: &str) -> Option<TopicView> {
        self.read().get(name).map(Topic::view)
    }

    /// Applies the retention policy of `topic` at `now`.
    pub fn enforce_retention(&self, topic: &str, now: Millis) -> Result<usize> {
        let topics = self.read();
        let t = topics.get(topic).ok_or_else(|| unknown_topic(topic))?;
        let mut purged = 0;
        for s in t.sections.values() {
            purged += lock(s).enforce_retention(now)?;
        }
        Ok(purged)
    }

    /// Retention sweep over every topic.
    pub fn sweep(&self, now: Millis) -> Result<usize> {
        let mut purged = 0;
        for name in self.topic_names() {
            match self.enforce_retention(&name, now) {
                Ok(n) => purged += n,
                Err(e) if e.is(Code::UnknownTopic) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(purged)
    }
}

fn unknown_topic(name: &str) -> Error {
    Error::new(Code::UnknownTopic, format!("no topic `{name}`"))
}

impl BrokerApi for Broker {
    fn create_topic(&self, admin: &str, spec: &TopicSpec) -> Result<TopicView> {
        self.check_admin(admin)?;
        if !is_topic_name(&spec.name) {
            return fail(Code::BadRequest, format!("topic name `{}` must match [a-z0-9-]{{1,64}}", spec.name));
        }
        if !spec.policy.is_valid() {
            return fail(Code::BadRequest, "invalid retention policy parameters");
        }
        let mut topics = self.write();
        if topics.contains_key(&spec.name) {
            return fail(Code::DuplicateName, format!("topic `{}` exists", spec.name));
        }
        if !self.schemas.contains(&spec.schema) {
            return fail(Code::UnknownSchema, format!("schema {} is not registered", spec.schema));
        }
        let meta = TopicMeta {
            name: spec.name.clone(),
            policy: spec.policy,
            schema: spec.schema.clone(),
            status: TopicStatus::Created,
            sections: Vec::new(),
            next_section: 0,
        };
        let topic = Topic { meta, sections: BTreeMap::new() };
        let view = topic.view();
        topics.insert(spec.name.clone(), topic);
        self.save(&topics)?;
        Ok(view)
    }

    fn delete_topic(&self, admin: &str, name: &str) -> Result<()> {
        self.check_admin(admin)?;
        let mut topics = self.write();
        if topics.remove(name).is_none() {
            return Err(unknown_topic(name));
        }
        self.save(&topics)?;
        if let Some(dir) = &self.dir {
            match fs::remove_dir_all(dir.join(name)) {
                Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(e.into()),
                _ => {}
            }
        }
        Ok(())
    }

    fn set_topic_status(&self, admin: &str, name: &str, status: TopicStatus) -> Result<()> {
        self.check_admin(admin)?;
        let mut topics = self.write();
        let t = topics.get_mut(name).ok_or_else(|| unknown_topic(name))?;
        let rank = |s: TopicStatus| s as u8;
        if rank(status) < rank(t.meta.status) {
            return fail(Code::IllegalTransition, format!("topic `{name}` cannot go from {:?} to {status:?}", t.meta.status));
        }
        t.meta.status = status;
        self.save(&topics)
    }

    fn list_topics(&self, admin: &str) -> Result<Vec<TopicView>> {
        self.check_admin(admin)?;
        Ok(self.read().values().map(Topic::view).collect())
    }

    fn purge(&self, admin: &str, name: &str) -> Result<usize> {
        self.check_admin(admin)?;
        self.enforce_retention(name, self.clock.now())
    }

    fn allocate_section(&self, caller: &Caller, topic: &str, receiver: &str) -> Result<String> {
        if let Some(id) = self.check_caller(caller)? {
            if id != receiver {
                return fail(Code::Unauthorized, "a service may only allocate its own section");
            }
        }
        if !is_identifier(receiver) {
            return fail(Code::BadRequest, format!("bad receiver id `{receiver}`"));
        }
        let mut topics = self.write();
        let t = topics.get_mut(topic).ok_or_else(|| unknown_topic(topic))?;
        if t.meta.status == TopicStatus::Retired {
            return fail(Code::TopicRetired, format!("topic `{topic}` is retired"));
        }
        if let Some(s) = t.meta.sections.iter().find(|s| s.receiver_id == receiver) {
            return Ok(s.section_id.clone());
        }
        let meta = SectionMeta { section_id: format!("sec-{:04}", t.meta.next_section), receiver_id: receiver.into() };
        let section = Section::open(self.dir.as_deref(), topic, &meta, t.meta.policy)?;
        let id = meta.section_id.clone();
        t.meta.next_section += 1;
        t.meta.sections.push(meta);
        t.sections.insert(id.clone(), Mutex::new(section));
        self.save(&topics)?;
        Ok(id)
    }

    fn release_section(&self, admin: &str, topic: &str, section: &str) -> Result<()> {
        self.check_admin(admin)?;
        let mut topics = self.write();
        let t = topics.get_mut(topic).ok_or_else(|| unknown_topic(topic))?;
        t.section(section)?;
        t.sections.remove(section);
        t.meta.sections.retain(|s| s.section_id != section);
        self.save(&topics)?;
        if let Some(dir) = &self.dir {
            match fs::remove_file(Section::path(dir, topic, section)) {
                Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(e.into()),
                _ => {}
            }
        }
        Ok(())
    }

    fn sections(&self, caller: &Caller, topic: &str) -> Result<Vec<SectionView>> {
        self.check_caller(caller)?;
        let topics = self.read();
        let t = topics.get(topic).ok_or_else(|| unknown_topic(topic))?;
        Ok(t.sections.iter().map(|(id, s)| lock(s).view(id)).collect())
    }

    fn append(&self, cred: &Credentials, topic: &str, section: &str, envelope: &Envelope) -> Result<u64> {
        let topics = self.read();
        let t = topics.get(topic).ok_or_else(|| unknown_topic(topic))?;
        if !self.security.authz_check(cred, topic, Operation::Send, None)?.is_allow() {
            return fail(Code::Unauthorized, format!("`{}` may not send on `{topic}`", cred.service_id));
        }
        match t.meta.status {
            TopicStatus::Ready => {}
            TopicStatus::Retired => return fail(Code::TopicRetired, format!("topic `{topic}` is retired")),
            TopicStatus::Created => return fail(Code::TopicNotReady, format!("topic `{topic}` is not ready")),
        }
        let s = t.section(section)?;
        if envelope.topic != topic || envelope.section != section {
            return fail(Code::EnvelopeMismatch, "envelope topic/section differ from the target");
        }
        if envelope.schema != t.meta.schema {
            return fail(Code::EnvelopeMismatch, format!("topic `{topic}` carries {}", t.meta.schema));
        }
        if envelope.sender != cred.service_id {
            return fail(Code::EnvelopeMismatch, "envelope sender differs from the caller");
        }
        envelope.check().map_err(|e| Error::new(Code::MalformedEnvelope, e.to_string()))?;
        let now = self.clock.now();
        let r = lock(s).append(envelope.clone(), now);
        r
    }

    fn fetch(&self, cred: &Credentials, topic: &str, section: &str, from: u64, max: usize) -> Result<Vec<RoutedRecord>> {
        let topics = self.read();
        let t = topics.get(topic).ok_or_else(|| unknown_topic(topic))?;
        let s = t.section(section)?;
        let profile = self.security.authenticate(cred)?;
        if lock(s).receiver != profile.service_id {
            return fail(Code::NotSectionOwner, format!("section `{section}` belongs to another receiver"));
        }
        if !self.security.authz_check(cred, topic, Operation::Receive, Some(section))?.is_allow() {
            return fail(Code::Unauthorized, format!("`{}` may not receive on `{topic}`", cred.service_id));
        }
        let r = lock(s).fetch(from, max.min(MAX_FETCH));
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::security::Profile;
    use dhlink_core::acl::AccessControlEntry;
    use dhlink_core::schema::{DataSchema, FieldKind, FieldSpec};

    const ADMIN: &str = "admin";
    const T0: Millis = 1_700_000_000_000;

    struct Fixture {
        clock: Arc<ManualClock>,
        security: Arc<Security>,
        broker: Broker,
        _dir: Option<tempfile::TempDir>,
    }

    fn fixture(persistent: bool) -> Fixture {
        let dir = persistent.then(|| tempfile::tempdir().unwrap());
        let clock = Arc::new(ManualClock::new(T0));
        let security = Arc::new(Security::in_memory(ADMIN, clock.clone()));
        for (id, key) in [("src", "ks"), ("r1", "k1"), ("r2", "k2")] {
            security.register_profile(ADMIN, &Profile::new(id, key, "app")).unwrap();
        }
        security.add_acl(ADMIN, &AccessControlEntry::send("src", "alerts")).unwrap();
        let schemas = Arc::new(SchemaRegistry::open(None).unwrap());
        schemas.register(&DataSchema::new("AnomalyAlert", 1, vec![FieldSpec::new("x", FieldKind::Integer, true)])).unwrap();
        let broker = Broker::open(dir.as_ref().map(|d| d.path()), ADMIN, clock.clone(), security.clone(), schemas).unwrap();
        Fixture { clock, security, broker, _dir: dir }
    }

    impl Fixture {
        fn topic(&self, name: &str, policy: TopicPolicy) {
            self.broker
                .create_topic(ADMIN, &TopicSpec { name: name.into(), policy, schema: SchemaRef::new("AnomalyAlert", 1) })
                .unwrap();
            self.broker.set_topic_status(ADMIN, name, TopicStatus::Ready).unwrap();
            if name != "alerts" {
                self.security.add_acl(ADMIN, &AccessControlEntry::send("src", name)).unwrap();
            }
        }

        fn section(&self, topic: &str, receiver: &str) -> String {
            let sid = self.broker.allocate_section(&Caller::Admin(ADMIN.into()), topic, receiver).unwrap();
            let _ = self.security.add_acl(ADMIN, &AccessControlEntry::receive(receiver, topic, sid.as_str()));
            sid
        }

        fn append(&self, topic: &str, sid: &str, i: u64) -> Result<u64> {
            self.broker.append(&src(), topic, sid, &env(topic, sid, i))
        }

        fn fetch(&self, topic: &str, sid: &str, receiver: &str, from: u64) -> Vec<u64> {
            let key = if receiver == "r1" { "k1" } else { "k2" };
            let recs = self.broker.fetch(&Credentials::new(receiver, key), topic, sid, from, 100_000).unwrap();
            recs.iter().map(|r| r.offset).collect()
        }
    }

    fn src() -> Credentials {
        Credentials::new("src", "ks")
    }

    fn env(topic: &str, sid: &str, i: u64) -> Envelope {
        Envelope {
            topic: topic.into(),
            section: sid.into(),
            schema: SchemaRef::new("AnomalyAlert", 1),
            sender: "src".into(),
            message_id: format!("src-{i}"),
            sent_at: 0,
            encrypted: false,
            key_id: None,
            payload: i.to_be_bytes().to_vec(),
        }
    }

    #[test]
    fn create_topic_cases() {
        let f = fixture(false);
        let spec = TopicSpec { name: "alerts".into(), policy: TopicPolicy::retained_unlimited(), schema: SchemaRef::new("AnomalyAlert", 1) };
        let v = f.broker.create_topic(ADMIN, &spec).unwrap();
        assert_eq!((v.status, v.sections.len()), (TopicStatus::Created, 0));
        assert_eq!(f.broker.create_topic(ADMIN, &spec).unwrap_err().code, Code::DuplicateName);
        let other = TopicSpec { name: "x".into(), schema: SchemaRef::new("Nope", 1), ..spec.clone() };
        assert_eq!(f.broker.create_topic(ADMIN, &other).unwrap_err().code, Code::UnknownSchema);
        assert_eq!(f.broker.create_topic("bad", &spec).unwrap_err().code, Code::NotAdmin);
    }

    #[test]
    fn delete_topic_removes_logs() {
        let f = fixture(true);
        f.topic("alerts", TopicPolicy::retained_unlimited());
        let sids: Vec<String> = ["r1", "r2", "r3"].iter().map(|r| f.section("alerts", r)).collect();
        for s in &sids {
            f.append("alerts", s, 0).unwrap();
        }
        let dir = f.broker.dir().unwrap().join("alerts");
        assert_eq!(fs::read_dir(&dir).unwrap().count(), 3);
        f.broker.delete_topic(ADMIN, "alerts").unwrap();
        assert!(!dir.exists());
        assert_eq!(f.append("alerts", &sids[0], 1).unwrap_err().code, Code::UnknownTopic);
        assert_eq!(f.broker.delete_topic(ADMIN, "alerts").unwrap_err().code, Code::UnknownTopic);
    }

    #[test]
    fn allocate_section_cases() {
        let f = fixture(false);
        f.topic("alerts", TopicPolicy::retained_unlimited());
        let a = f.section("alerts", "mindtick-sink");
        assert_eq!(f.section("alerts", "mindtick-sink"), a);
        assert_ne!(f.section("alerts", "other"), a);
        f.broker.set_topic_status(ADMIN, "alerts", TopicStatus::Retired).unwrap();
        let err = f.broker.allocate_section(&Caller::Admin(ADMIN.into()), "alerts", "third").unwrap_err();
        assert_eq!(err.code, Code::TopicRetired);
        assert_eq!(f.append("alerts", &a, 0).unwrap_err().code, Code::TopicRetired);
        assert_eq!(
            f.broker.set_topic_status(ADMIN, "alerts", TopicStatus::Ready).unwrap_err().code,
            Code::IllegalTransition
        );
    }

    #[test]
    fn offsets_are_dense_and_fifo() {
        let f = fixture(false);
        f.topic("alerts", TopicPolicy::retained_unlimited());
        let s = f.section("alerts", "r1");
        for i in 0..3 {
            assert_eq!(f.append("alerts", &s, i).unwrap(), i);
        }
        for i in 3..1000 {
            f.append("alerts", &s, i).unwrap();
        }
        let recs = f.broker.fetch(&Credentials::new("r1", "k1"), "alerts", &s, 0, 5000).unwrap();
        let payloads: Vec<u64> = recs.iter().map(|r| u64::from_be_bytes(r.envelope.payload[..].try_into().unwrap())).collect();
        assert_eq!(payloads, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn append_rejections_leave_no_trace() {
        let f = fixture(false);
        f.topic("alerts", TopicPolicy::retained_unlimited());
        let s = f.section("alerts", "r1");
        let mut wrong = env("alerts", &s, 0);
        wrong.topic = "other".into();
        assert_eq!(f.broker.append(&src(), "alerts", &s, &wrong).unwrap_err().code, Code::EnvelopeMismatch);
        let stranger = Credentials::new("r1", "k1");
        assert_eq!(f.broker.append(&stranger, "alerts", &s, &env("alerts", &s, 0)).unwrap_err().code, Code::Unauthorized);
        assert_eq!(f.append("alerts", "sec-9999", 0).unwrap_err().code, Code::UnknownSection);
        assert!(f.fetch("alerts", &s, "r1", 0).is_empty());
        assert_eq!(f.broker.sections(&Caller::Admin(ADMIN.into()), "alerts").unwrap()[0].next_offset, 0);
    }

    #[test]
    fn topic_must_be_ready() {
        let f = fixture(false);
        let spec = TopicSpec { name: "alerts".into(), policy: TopicPolicy::retained_unlimited(), schema: SchemaRef::new("AnomalyAlert", 1) };
        f.broker.create_topic(ADMIN, &spec).unwrap();
        let s = f.section("alerts", "r1");
        assert_eq!(f.append("alerts", &s, 0).unwrap_err().code, Code::TopicNotReady);
    }

    #[test]
    fn fetch_ownership() {
        let f = fixture(false);
        f.topic("alerts", TopicPolicy::retained_unlimited());
        let s1 = f.section("alerts", "r1");
        f.section("alerts", "r2");
        let err = f.broker.fetch(&Credentials::new("r2", "k2"), "alerts", &s1, 0, 10).unwrap_err();
        assert_eq!(err.code, Code::NotSectionOwner);
    }

    #[test]
    fn transient_second_fetch_is_empty() {
        let f = fixture(true);
        f.topic("alerts", TopicPolicy::transient());
        let s = f.section("alerts", "r1");
        for i in 0..5 {
            f.append("alerts", &s, i).unwrap();
        }
        assert_eq!(f.fetch("alerts", &s, "r1", 0), vec![0, 1, 2, 3, 4]);
        assert!(f.fetch("alerts", &s, "r1", 0).is_empty());
        assert_eq!(f.append("alerts", &s, 5).unwrap(), 5);
    }

    #[test]
    fn realtime_ring_keeps_newest() {
        let f = fixture(false);
        f.topic("alerts", TopicPolicy::Realtime { buffer_size: 2 });
        let s = f.section("alerts", "r1");
        for i in 0..5 {
            f.append("alerts", &s, i).unwrap();
        }
        assert_eq!(f.fetch("alerts", &s, "r1", 0), vec![3, 4]);
    }

    #[test]
    fn retained_max_age_boundary() {
        let f = fixture(false);
        f.topic("alerts", TopicPolicy::Retained { max_age_seconds: Some(60) });
        f.topic("forever", TopicPolicy::retained_unlimited());
        let s = f.section("alerts", "r1");
        let keep = f.section("forever", "r1");
        f.append("alerts", &s, 0).unwrap();
        f.append("forever", &keep, 0).unwrap();
        f.clock.advance(61_000);
        f.append("alerts", &s, 1).unwrap();
        assert_eq!(f.broker.enforce_retention("alerts", f.clock.now()).unwrap(), 1);
        assert_eq!(f.broker.enforce_retention("forever", f.clock.now() + 10 * 365 * 86_400_000).unwrap(), 0);
        assert_eq!(f.fetch("alerts", &s, "r1", 0), vec![1]);
        assert_eq!(f.broker.enforce_retention("nope", 0).unwrap_err().code, Code::UnknownTopic);
    }

    #[test]
    fn restart_replays_logs_and_keeps_offsets() {
        let f = fixture(true);
        f.topic("alerts", TopicPolicy::Retained { max_age_seconds: Some(60) });
        let s = f.section("alerts", "r1");
        for i in 0..10 {
            f.append("alerts", &s, i).unwrap();
        }
        f.clock.advance(120_000);
        for i in 10..12 {
            f.append("alerts", &s, i).unwrap();
        }
        assert_eq!(f.broker.enforce_retention("alerts", f.clock.now()).unwrap(), 10);
        let dir = f._dir.as_ref().unwrap().path().to_path_buf();
        let schemas = f.broker.schemas.clone();
        let reopened = Broker::open(Some(&dir), ADMIN, f.clock.clone(), f.security.clone(), schemas).unwrap();
        let recs = reopened.fetch(&Credentials::new("r1", "k1"), "alerts", &s, 0, 100).unwrap();
        assert_eq!(recs.iter().map(|r| r.offset).collect::<Vec<_>>(), vec![10, 11]);
        assert_eq!(reopened.append(&src(), "alerts", &s, &env("alerts", &s, 12)).unwrap(), 12);
    }

    #[test]
    fn purge_all_then_restart_keeps_next_offset() {
        let f = fixture(true);
        f.topic("alerts", TopicPolicy::Retained { max_age_seconds: Some(1) });
        let s = f.section("alerts", "r1");
        for i in 0..4 {
            f.append("alerts", &s, i).unwrap();
        }
        f.clock.advance(5_000);
        assert_eq!(f.broker.enforce_retention("alerts", f.clock.now()).unwrap(), 4);
        let dir = f._dir.as_ref().unwrap().path().to_path_buf();
        let reopened = Broker::open(Some(&dir), ADMIN, f.clock.clone(), f.security.clone(), f.broker.schemas.clone()).unwrap();
        assert_eq!(reopened.append(&src(), "alerts", &s, &env("alerts", &s, 4)).unwrap(), 4);
    }

    #[test]
    fn concurrent_sections_stay_fifo_and_isolated() {
        let f = fixture(false);
        f.topic("alerts", TopicPolicy::retained_unlimited());
        let sids: Vec<String> = (0..8).map(|i| f.section("alerts", &format!("rx{i}"))).collect();
        std::thread::scope(|scope| {
            for sid in &sids {
                let broker = &f.broker;
                scope.spawn(move || {
                    for i in 0..200u64 {
                        broker.append(&src(), "alerts", sid, &env("alerts", sid, i)).unwrap();
                    }
                });
            }
        });
        for (i, sid) in sids.iter().enumerate() {
            f.security.register_profile(ADMIN, &Profile::new(&format!("rx{i}"), "kx", "app")).unwrap_or(());
            let recs = f.broker.fetch(&Credentials::new(format!("rx{i}"), "kx"), "alerts", sid, 0, 1000).unwrap();
            assert_eq!(recs.len(), 200);
            for (j, r) in recs.iter().enumerate() {
                assert_eq!(r.offset, j as u64);
                assert_eq!(r.envelope.section, *sid);
                assert_eq!(r.envelope.payload, (j as u64).to_be_bytes());
            }
        }
    }
}
