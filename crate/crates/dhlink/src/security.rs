//! Access-control authorizer and encryption management.
//!
//! Persistent state lives in its own directory:
//! `profiles.json`, `acl.jsonl` (one entry per line), `keys.jsonl` (owner-only,
//! private keys base64) and the append-only decision log `audit.jsonl`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use dhlink_core::acl::{AccessControlEntry, AclError, AclTable, Decision, Operation};
use dhlink_core::crypto::{self, SUITE_ID};
use dhlink_core::deid::{fingerprint, is_fingerprint};
use dhlink_core::ident::is_identifier;
use dhlink_core::Millis;

use crate::api::{Credentials, SecurityApi};
use crate::clock::Clock;
use crate::error::{fail, Code, Error, Result};
use crate::persist::{self, JsonlWriter};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Profile {
    pub service_id: String,
    pub credential_fingerprint: String,
    #[serde(default)]
    pub owner_app_id: String,
    /// Set once the service has passed an allowed authorization check.
    #[serde(default)]
    pub verified: bool,
    #[serde(default)]
    pub retired: bool,
}

impl Profile {
    pub fn new(service_id: &str, api_key: &str, owner_app_id: &str) -> Self {
        Self {
            service_id: service_id.into(),
            credential_fingerprint: fingerprint(api_key),
            owner_app_id: owner_app_id.into(),
            verified: false,
            retired: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyStatus {
    Active,
    Revoked,
}

/// One stored keypair. Only ever serialized into the key store file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct KeyPairRecord {
    pub key_id: String,
    pub topic: String,
    pub section: String,
    pub suite: String,
    pub public_key: String,
    pub private_key: String,
    pub created_at: Millis,
    pub status: KeyStatus,
}

/// Public view of a keypair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct KeyInfo {
    pub key_id: String,
    pub topic: String,
    pub section: String,
    pub suite: String,
    pub public_key: String,
    pub created_at: Millis,
    pub status: KeyStatus,
}

impl KeyPairRecord {
    fn info(&self) -> KeyInfo {
        KeyInfo {
            key_id: self.key_id.clone(),
            topic: self.topic.clone(),
            section: self.section.clone(),
            suite: self.suite.clone(),
            public_key: self.public_key.clone(),
            created_at: self.created_at,
            status: self.status,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct KeyMaterial {
    pub key_id: String,
    #[serde(with = "b64")]
    pub key: Vec<u8>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SecurityStats {
    pub authn_ok: u64,
    pub authn_failed: u64,
    pub authz_allow: u64,
    pub authz_deny: u64,
    pub public_lookups: u64,
    pub private_lookups: u64,
}

#[derive(Default)]
struct Counters {
    authn_ok: AtomicU64,
    authn_failed: AtomicU64,
    authz_allow: AtomicU64,
    authz_deny: AtomicU64,
    public_lookups: AtomicU64,
    private_lookups: AtomicU64,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct AuditLine<'a> {
    at: Millis,
    service_id: &'a str,
    topic: &'a str,
    operation: Operation,
    #[serde(skip_serializing_if = "Option::is_none")]
    section_id: Option<&'a str>,
    decision: Decision,
}

#[derive(Default)]
struct State {
    profiles: BTreeMap<String, Profile>,
    acl: AclTable,
    keys: Vec<KeyPairRecord>,
}

impl State {
    fn active_key(&self, topic: &str, section: &str) -> Option<&KeyPairRecord> {
        self.keys.iter().find(|k| k.topic == topic && k.section == section && k.status == KeyStatus::Active)
    }
}

pub struct Security {
    dir: Option<PathBuf>,
    admin_token: String,
    clock: Arc<dyn Clock>,
    state: RwLock<State>,
    audit: Mutex<Option<JsonlWriter>>,
    counters: Counters,
}

impl Security {
    /// Opens (or initialises) a store under `dir`; `None` keeps everything in
    /// memory.
    pub fn open(dir: Option<&Path>, admin_token: &str, clock: Arc<dyn Clock>) -> Result<Self> {
        let mut state = State::default();
        let mut audit = None;
        if let Some(dir) = dir {
            std::fs::create_dir_all(dir)?;
            let profiles: Vec<Profile> = persist::read_json(&dir.join("profiles.json"))?.unwrap_or_default();
            state.profiles = profiles.into_iter().map(|p| (p.service_id.clone(), p)).collect();
            state.acl = AclTable::from_entries(persist::read_jsonl(&dir.join("acl.jsonl"))?);
            state.keys = persist::read_jsonl(&dir.join("keys.jsonl"))?;
            audit = Some(JsonlWriter::open(&dir.join("audit.jsonl"))?);
        }
        Ok(Self {
            dir: dir.map(Path::to_path_buf),
            admin_token: admin_token.into(),
            clock,
            state: RwLock::new(state),
            audit: Mutex::new(audit),
            counters: Counters::default(),
        })
    }

    pub fn in_memory(admin_token: &str, clock: Arc<dyn Clock>) -> Self {
        Self::open(None, admin_token, clock).expect("in-memory store cannot fail")
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Topics `service` holds a send entry for.
    pub fn send_topics(&self, service: &str) -> BTreeSet<String> {
        self.read().acl.send_topics(service)
    }

    fn check_admin(&self, token: &str) -> Result<()> {
        if !self.admin_token.is_empty() && token == self.admin_token {
            Ok(())
        } else {
            fail(Code::NotAdmin, "security administrator token required")
        }
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, State> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, State> {
        self.state.write().unwrap_or_else(|e| e.into_inner())
    }

    fn save_profiles(&self, st: &State) -> Result<()> {
        match &self.dir {
            Some(d) => persist::write_json(&d.join("profiles.json"), &st.profiles.values().collect::<Vec<_>>()),
            None => Ok(()),
        }
    }

    fn save_acl(&self, st: &State) -> Result<()> {
        match &self.dir {
            Some(d) => persist::write_jsonl(&d.join("acl.jsonl"), st.acl.iter(), false),
            None => Ok(()),
        }
    }

    fn save_keys(&self, st: &State) -> Result<()> {
        match &self.dir {
            Some(d) => persist::write_jsonl(&d.join("keys.jsonl"), &st.keys, true),
            None => Ok(()),
        }
    }

    fn authenticate_in(&self, st: &State, cred: &Credentials) -> Result<Profile> {
        let Some(p) = st.profiles.get(&cred.service_id) else {
            self.counters.authn_failed.fetch_add(1, Ordering::Relaxed);
            return fail(Code::UnknownService, format!("no profile for `{}`", cred.service_id));
        };
        if fingerprint(&cred.api_key) != p.credential_fingerprint {
            self.counters.authn_failed.fetch_add(1, Ordering::Relaxed);
            return fail(Code::BadCredential, format!("api key does not match profile `{}`", cred.service_id));
        }
        self.counters.authn_ok.fetch_add(1, Ordering::Relaxed);
        Ok(p.clone())
    }

    /// Retired profiles are denied regardless of the table.
    fn decide(&self, st: &State, profile: &Profile, topic: &str, op: Operation, section: Option<&str>) -> Decision {
        let service = profile.service_id.as_str();
        let decision =
            if profile.retired { Decision::Deny } else { st.acl.authorize(service, topic, op, section) };
        let counter = if decision.is_allow() { &self.counters.authz_allow } else { &self.counters.authz_deny };
        counter.fetch_add(1, Ordering::Relaxed);
        let line = AuditLine { at: self.clock.now(), service_id: service, topic, operation: op, section_id: section, decision };
        if let Some(w) = self.audit.lock().unwrap_or_else(|e| e.into_inner()).as_mut() {
            if let Err(e) = w.append(&line) {
                tracing::warn!("audit log write failed: {e}");
            }
        }
        decision
    }

    fn key_lookup(&self, cred: &Credentials, topic: &str, section: &str, kind: Operation) -> Result<KeyMaterial> {
        let counter = match kind {
            Operation::Send => &self.counters.public_lookups,
            Operation::Receive => &self.counters.private_lookups,
        };
        counter.fetch_add(1, Ordering::Relaxed);
        let st = self.read();
        let profile = self.authenticate_in(&st, cred)?;
        let Some(key) = st.active_key(topic, section) else {
            return fail(Code::NotFound, format!("no active key for {topic}/{section}"));
        };
        let section_arg = (kind == Operation::Receive).then_some(section);
        if !self.decide(&st, &profile, topic, kind, section_arg).is_allow() {
            return fail(Code::Unauthorized, format!("`{}` may not use this key", profile.service_id));
        }
        let encoded = match kind {
            Operation::Send => &key.public_key,
            Operation::Receive => &key.private_key,
        };
        let bytes = STANDARD.decode(encoded).map_err(|e| Error::new(Code::Internal, e.to_string()))?;
        Ok(KeyMaterial { key_id: key.key_id.clone(), key: bytes })
    }
}

fn acl_error(e: AclError) -> Error {
    match e {
        AclError::Duplicate => Error::new(Code::DuplicateEntry, "entry already present"),
        AclError::Unknown => Error::new(Code::UnknownEntry, "no such entry"),
        AclError::Malformed => Error::new(Code::BadRequest, "sectionId is required for receive and absent for send"),
    }
}

fn new_key_id() -> String {
    let mut b = [0u8; 8];
    OsRng.fill_bytes(&mut b);
    format!("k{}", hex::encode(b))
}

impl SecurityApi for Security {
    fn authenticate(&self, cred: &Credentials) -> Result<Profile> {
        self.authenticate_in(&self.read(), cred)
    }

    fn authz_check(&self, cred: &Credentials, topic: &str, op: Operation, section: Option<&str>) -> Result<Decision> {
        let decision = {
            let st = self.read();
            let profile = self.authenticate_in(&st, cred)?;
            let d = self.decide(&st, &profile, topic, op, section);
            if !d.is_allow() || profile.verified {
                return Ok(d);
            }
            d
        };
        let mut st = self.write();
        if let Some(p) = st.profiles.get_mut(&cred.service_id) {
            if !p.verified {
                p.verified = true;
                self.save_profiles(&st)?;
            }
        }
        Ok(decision)
    }

    fn public_key(&self, cred: &Credentials, topic: &str, section: &str) -> Result<KeyMaterial> {
        self.key_lookup(cred, topic, section, Operation::Send)
    }

    fn private_key(&self, cred: &Credentials, topic: &str, section: &str) -> Result<KeyMaterial> {
        self.key_lookup(cred, topic, section, Operation::Receive)
    }

    fn register_profile(&self, admin: &str, profile: &Profile) -> Result<()> {
        self.check_admin(admin)?;
        if !is_identifier(&profile.service_id) || !is_fingerprint(&profile.credential_fingerprint) {
            return fail(Code::BadRequest, "profile needs an identifier and a sha-256 hex fingerprint");
        }
        let mut st = self.write();
        if st.profiles.contains_key(&profile.service_id) {
            return fail(Code::DuplicateName, format!("profile `{}` exists", profile.service_id));
        }
        let mut p = profile.clone();
        p.verified = false;
        p.retired = false;
        st.profiles.insert(p.service_id.clone(), p);
        self.save_profiles(&st)
    }

    fn profile(&self, admin: &str, service_id: &str) -> Result<Profile> {
        self.check_admin(admin)?;
        self.read()
            .profiles
            .get(service_id)
            .cloned()
            .ok_or_else(|| Error::new(Code::UnknownService, format!("no profile for `{service_id}`")))
    }

    fn retire_profile(&self, admin: &str, service_id: &str) -> Result<()> {
        self.check_admin(admin)?;
        let mut st = self.write();
        let Some(p) = st.profiles.get_mut(service_id) else {
            return fail(Code::UnknownService, format!("no profile for `{service_id}`"));
        };
        p.verified = false;
        p.retired = true;
        self.save_profiles(&st)
    }

    fn add_acl(&self, admin: &str, entry: &AccessControlEntry) -> Result<()> {
        self.check_admin(admin)?;
        let mut st = self.write();
        st.acl.add(entry.clone()).map_err(acl_error)?;
        self.save_acl(&st)
    }

    fn remove_acl(&self, admin: &str, entry: &AccessControlEntry) -> Result<()> {
        self.check_admin(admin)?;
        let mut st = self.write();
        st.acl.remove(entry).map_err(acl_error)?;
        self.save_acl(&st)
    }

    fn list_acl(&self, admin: &str) -> Result<Vec<AccessControlEntry>> {
        self.check_admin(admin)?;
        Ok(self.read().acl.to_vec())
    }

    fn generate_key(&self, admin: &str, topic: &str, section: &str, rotate: bool) -> Result<KeyInfo> {
        self.check_admin(admin)?;
        if topic.is_empty() || !is_identifier(section) {
            return fail(Code::BadRequest, "topic and section are required");
        }
        let (public, secret) = crypto::generate_keypair(&mut OsRng);
        let mut st = self.write();
        if st.active_key(topic, section).is_some() && !rotate {
            return fail(Code::ActiveKeyExists, format!("{topic}/{section} already has an active key"));
        }
        // Revocation and insertion happen under one write lock, so no reader
        // ever sees two active keys or none mid-rotation.
        for k in st.keys.iter_mut().filter(|k| k.topic == topic && k.section == section) {
            k.status = KeyStatus::Revoked;
        }
        let rec = KeyPairRecord {
            key_id: new_key_id(),
            topic: topic.into(),
            section: section.into(),
            suite: SUITE_ID.into(),
            public_key: STANDARD.encode(public),
            private_key: STANDARD.encode(secret),
            created_at: self.clock.now(),
            status: KeyStatus::Active,
        };
        let info = rec.info();
        st.keys.push(rec);
        self.save_keys(&st)?;
        Ok(info)
    }

    fn delete_keys(&self, admin: &str, topic: &str, section: &str) -> Result<usize> {
        self.check_admin(admin)?;
        let mut st = self.write();
        for k in st.keys.iter_mut().filter(|k| k.topic == topic && k.section == section) {
            k.status = KeyStatus::Revoked;
        }
        self.save_keys(&st)?;
        let before = st.keys.len();
        st.keys.retain(|k| !(k.topic == topic && k.section == section));
        let removed = before - st.keys.len();
        self.save_keys(&st)?;
        Ok(removed)
    }

    fn list_keys(&self, admin: &str) -> Result<Vec<KeyInfo>> {
        self.check_admin(admin)?;
        Ok(self.read().keys.iter().map(KeyPairRecord::info).collect())
    }

    fn stats(&self, admin: &str) -> Result<SecurityStats> {
        self.check_admin(admin)?;
        let c = &self.counters;
        Ok(SecurityStats {
            authn_ok: c.authn_ok.load(Ordering::Relaxed),
            authn_failed: c.authn_failed.load(Ordering::Relaxed),
            authz_allow: c.authz_allow.load(Ordering::Relaxed),
            authz_deny: c.authz_deny.load(Ordering::Relaxed),
            public_lookups: c.public_lookups.load(Ordering::Relaxed),
            private_lookups: c.private_lookups.load(Ordering::Relaxed),
        })
    }
}

pub(crate) mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        STANDARD.decode(s).map_err(serde::de::Error::custom)
    }
}
