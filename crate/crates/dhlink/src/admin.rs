//! Application lifecycle driven by the administrator: propose, approve and
//! initialise, mark ready, decommission.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use dhlink_core::acl::{AccessControlEntry, Operation};
use dhlink_core::lifecycle::{AppState, ApplicationRecord, LifecycleError, Proposal};
use dhlink_core::schema::SchemaRef;

use crate::api::{Caller, Credentials, Endpoints};
use crate::broker::{TopicSpec, TopicStatus};
use crate::clock::Clock;
use crate::discovery::{EntryKind, EntryStatus, ServiceInfo, TopicRegistration};
use crate::error::{fail, Code, Error, Result};
use crate::persist::{self, LockFile};
use crate::security::Profile;

impl From<LifecycleError> for Error {
    fn from(e: LifecycleError) -> Self {
        match e {
            LifecycleError::MalformedProposal(m) => Error::new(Code::MalformedProposal, m),
            LifecycleError::WrongState { expected, actual } => {
                Error::new(Code::WrongState, format!("application is {actual}, expected {expected}"))
            }
        }
    }
}

/// A platform resource touched by a lifecycle step.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Resource {
    Schema { schema: SchemaRef },
    Topic { name: String },
    Profile { service: String },
    Section { topic: String, section: String, receiver: String },
    Acl { entry: AccessControlEntry },
    Key { topic: String, section: String },
    DiscoveryService { name: String },
    DiscoveryTopic { name: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Report {
    pub app_id: String,
    pub state: Option<AppState>,
    pub created: Vec<Resource>,
    pub removed: Vec<Resource>,
    /// Topics kept because other services still hold entries on them.
    pub retained_topics: Vec<String>,
}

impl Report {
    fn new(app_id: &str) -> Self {
        Self { app_id: app_id.into(), ..Self::default() }
    }
}

pub struct Admin {
    ep: Endpoints,
    token: String,
    security_token: String,
    admin_id: String,
    clock: Arc<dyn Clock>,
    apps: BTreeMap<String, ApplicationRecord>,
    path: Option<PathBuf>,
    _lock: Option<LockFile>,
}

/// Maps "already there" onto `Ok(false)`.
fn created(r: Result<()>, exists: Code) -> Result<bool> {
    match r {
        Ok(()) => Ok(true),
        Err(e) if e.is(exists) => Ok(false),
        Err(e) => Err(e),
    }
}

fn step<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e.code {
        Code::NotAdmin => e,
        _ => Error::new(Code::PartialFailure, format!("step `{name}` failed: {e}")),
    })
}

impl Admin {
    /// Opens the application store under `data_dir` and takes the admin lock.
    /// `None` keeps applications in memory without locking.
    pub fn open(
        data_dir: Option<&Path>,
        ep: Endpoints,
        token: &str,
        security_token: &str,
        admin_id: &str,
        clock: Arc<dyn Clock>,
    ) -> Result<Self> {
        let (path, lock, apps) = match data_dir {
            Some(d) => {
                std::fs::create_dir_all(d)?;
                let lock = LockFile::acquire(&d.join("admin.lock"))?;
                let path = d.join("applications.json");
                let list: Vec<ApplicationRecord> = persist::read_json(&path)?.unwrap_or_default();
                (Some(path), Some(lock), list.into_iter().map(|a| (a.app_id.clone(), a)).collect())
            }
            None => (None, None, BTreeMap::new()),
        };
        Ok(Self {
            ep,
            token: token.into(),
            security_token: security_token.into(),
            admin_id: admin_id.into(),
            clock,
            apps,
            path,
            _lock: lock,
        })
    }

    pub fn endpoints(&self) -> &Endpoints {
        &self.ep
    }

    pub fn app(&self, app_id: &str) -> Result<&ApplicationRecord> {
        self.apps.get(app_id).ok_or_else(|| Error::new(Code::UnknownApp, format!("no application `{app_id}`")))
    }

    pub fn apps(&self) -> impl Iterator<Item = &ApplicationRecord> {
        self.apps.values()
    }

    fn save(&self) -> Result<()> {
        match &self.path {
            Some(p) => persist::write_json(p, &self.apps.values().collect::<Vec<_>>()),
            None => Ok(()),
        }
    }

    fn advance(&mut self, app_id: &str, to: AppState) -> Result<()> {
        let now = self.clock.now();
        let rec = self.apps.get_mut(app_id).ok_or_else(|| Error::new(Code::UnknownApp, app_id.to_string()))?;
        rec.advance(to, now, &self.admin_id)?;
        self.save()
    }

    pub fn propose(&mut self, app_id: &str, proposal: Proposal) -> Result<&ApplicationRecord> {
        if self.apps.contains_key(app_id) {
            return fail(Code::DuplicateApp, format!("application `{app_id}` exists"));
        }
        let rec = ApplicationRecord::propose(app_id, proposal)?;
        self.apps.insert(app_id.into(), rec);
        self.save()?;
        self.app(app_id)
    }

    /// Creates every resource the proposal needs. Safe to re-run while the
    /// application is initialising; existing resources are left alone.
    pub fn approve_and_initialise(&mut self, app_id: &str) -> Result<Report> {
        let rec = self.app(app_id)?.clone();
        if !matches!(rec.state, AppState::Proposed | AppState::Initialising) {
            rec.expect_state(AppState::Proposed)?;
        }
        self.ep.broker.list_topics(&self.token)?;
        self.ep.security.list_acl(&self.security_token)?;
        let p = &rec.proposal;
        let (tok, stok) = (self.token.as_str(), self.security_token.as_str());
        let (broker, discovery, security) = (&self.ep.broker, &self.ep.discovery, &self.ep.security);
        let admin = Caller::Admin(tok.into());
        let mut report = Report::new(app_id);

        step("schemas", (|| {
            for s in &p.schemas {
                match discovery.schema(&admin, &s.name, s.version) {
                    Ok(_) => {}
                    Err(e) if e.is(Code::UnknownSchema) || e.is(Code::NotFound) => {
                        discovery.register_schema(tok, s)?;
                        report.created.push(Resource::Schema { schema: s.reference() });
                    }
                    Err(e) => return Err(e),
                }
            }
            Ok(())
        })())?;

        step("topics", (|| {
            let existing: BTreeSet<String> = broker.list_topics(tok)?.into_iter().map(|t| t.name).collect();
            for t in &p.topics {
                if !existing.contains(&t.name) {
                    let spec = TopicSpec { name: t.name.clone(), policy: t.retention, schema: t.schema.clone() };
                    broker.create_topic(tok, &spec)?;
                    report.created.push(Resource::Topic { name: t.name.clone() });
                }
            }
            Ok(())
        })())?;

        step("profiles", (|| {
            for s in &p.microservices {
                let profile = Profile {
                    service_id: s.name.clone(),
                    credential_fingerprint: s.credential_fingerprint.clone(),
                    owner_app_id: app_id.into(),
                    verified: false,
                    retired: false,
                };
                if created(security.register_profile(stok, &profile), Code::DuplicateName)? {
                    report.created.push(Resource::Profile { service: s.name.clone() });
                }
            }
            Ok(())
        })())?;

        let mut sections: BTreeMap<(String, String), String> = BTreeMap::new();
        step("sections", (|| {
            for t in &p.topics {
                let have: BTreeMap<String, String> = broker
                    .sections(&admin, &t.name)?
                    .into_iter()
                    .map(|s| (s.receiver_id, s.section_id))
                    .collect();
                for r in &t.receivers {
                    let sid = match have.get(r) {
                        Some(sid) => sid.clone(),
                        None => {
                            let sid = broker.allocate_section(&admin, &t.name, r)?;
                            report.created.push(Resource::Section {
                                topic: t.name.clone(),
                                section: sid.clone(),
                                receiver: r.clone(),
                            });
                            sid
                        }
                    };
                    sections.insert((t.name.clone(), r.clone()), sid);
                }
            }
            Ok(())
        })())?;

        step("acl", (|| {
            for t in &p.topics {
                let entries = t
                    .receivers
                    .iter()
                    .map(|r| AccessControlEntry::receive(r.as_str(), t.name.as_str(), sections[&(t.name.clone(), r.clone())].as_str()))
                    .chain(t.senders.iter().map(|s| AccessControlEntry::send(s.as_str(), t.name.as_str())));
                for entry in entries {
                    if created(security.add_acl(stok, &entry), Code::DuplicateEntry)? {
                        report.created.push(Resource::Acl { entry });
                    }
                }
            }
            Ok(())
        })())?;

        step("keys", (|| {
            for ((topic, _), sid) in &sections {
                let r = security.generate_key(stok, topic, sid, false).map(|_| ());
                if created(r, Code::ActiveKeyExists)? {
                    report.created.push(Resource::Key { topic: topic.clone(), section: sid.clone() });
                }
            }
            Ok(())
        })())?;

        step("discovery", (|| {
            for s in &p.microservices {
                let info = ServiceInfo {
                    name: s.name.clone(),
                    description: s.description.clone(),
                    url: s.url.clone(),
                    status: EntryStatus::Initialising,
                    owner_app_id: app_id.into(),
                };
                if created(discovery.register_service(tok, &info), Code::DuplicateName)? {
                    report.created.push(Resource::DiscoveryService { name: s.name.clone() });
                }
            }
            for t in &p.topics {
                let reg =
                    TopicRegistration { name: t.name.clone(), description: t.description.clone(), schema: t.schema.clone() };
                if created(discovery.register_topic(tok, &reg).map(|_| ()), Code::DuplicateName)? {
                    report.created.push(Resource::DiscoveryTopic { name: t.name.clone() });
                }
            }
            Ok(())
        })())?;

        if rec.state == AppState::Proposed {
            self.advance(app_id, AppState::Initialising)?;
        }
        report.state = Some(self.app(app_id)?.state);
        Ok(report)
    }

    /// Requires every service of the application to have passed its
    /// connectivity self-test.
    pub fn mark_ready(&mut self, app_id: &str) -> Result<()> {
        let rec = self.app(app_id)?.clone();
        rec.expect_state(AppState::Initialising)?;
        let tok = self.token.as_str();
        for s in &rec.microservice_ids {
            let profile = self.ep.security.profile(&self.security_token, s)?;
            if !profile.verified {
                return fail(Code::ConnectivityCheckFailed, format!("service `{s}` has not passed its self-test"));
            }
        }
        let admin = Caller::Admin(tok.into());
        let services = self.ep.discovery.query_services(&admin, "")?;
        for s in services.iter().filter(|s| rec.microservice_ids.contains(&s.name)) {
            if s.status == EntryStatus::Initialising {
                self.ep.discovery.set_status(tok, EntryKind::Service, &s.name, EntryStatus::Ready)?;
            }
        }
        let views: BTreeMap<String, TopicStatus> =
            self.ep.broker.list_topics(tok)?.into_iter().map(|t| (t.name, t.status)).collect();
        for t in &rec.topic_names {
            if views.get(t) == Some(&TopicStatus::Created) {
                self.ep.broker.set_topic_status(tok, t, TopicStatus::Ready)?;
            }
        }
        let topics = self.ep.discovery.query_topics(&admin, "")?;
        for t in topics.iter().filter(|t| rec.topic_names.contains(&t.name)) {
            if t.status == EntryStatus::Initialising {
                self.ep.discovery.set_status(tok, EntryKind::Topic, &t.name, EntryStatus::Ready)?;
            }
        }
        self.advance(app_id, AppState::Working)
    }

    /// Removes the application from the platform. `confirm` stands for the
    /// agreement between the application's developers and the administrator.
    pub fn decommission(&mut self, app_id: &str, confirm: bool) -> Result<Report> {
        let rec = self.app(app_id)?.clone();
        rec.expect_state(AppState::Working)?;
        if !confirm {
            return fail(Code::NotConfirmed, "decommission needs explicit confirmation");
        }
        let (tok, stok) = (self.token.as_str(), self.security_token.as_str());
        let (broker, discovery, security) = (&self.ep.broker, &self.ep.discovery, &self.ep.security);
        let admin = Caller::Admin(tok.into());
        let services: BTreeSet<&str> = rec.microservice_ids.iter().map(String::as_str).collect();
        let mut report = Report::new(app_id);

        for s in &rec.microservice_ids {
            if created(discovery.remove(tok, EntryKind::Service, s), Code::UnknownName)? {
                report.removed.push(Resource::DiscoveryService { name: s.clone() });
            }
        }
        for entry in security.list_acl(stok)? {
            if services.contains(entry.service_id.as_str()) {
                if created(security.remove_acl(stok, &entry), Code::UnknownEntry)? {
                    report.removed.push(Resource::Acl { entry });
                }
            }
        }
        let remaining: BTreeSet<String> = security.list_acl(stok)?.into_iter().map(|e| e.topic).collect();
        let existing: BTreeSet<String> = broker.list_topics(tok)?.into_iter().map(|t| t.name).collect();
        for topic in rec.topic_names.iter().filter(|t| existing.contains(*t)) {
            let orphan = !remaining.contains(topic);
            for s in broker.sections(&admin, topic)? {
                if orphan || services.contains(s.receiver_id.as_str()) {
                    if security.delete_keys(stok, topic, &s.section_id)? > 0 {
                        report.removed.push(Resource::Key { topic: topic.clone(), section: s.section_id.clone() });
                    }
                }
                if !orphan && services.contains(s.receiver_id.as_str()) {
                    broker.release_section(tok, topic, &s.section_id)?;
                    report.removed.push(Resource::Section {
                        topic: topic.clone(),
                        section: s.section_id,
                        receiver: s.receiver_id,
                    });
                }
            }
            if orphan {
                broker.delete_topic(tok, topic)?;
                report.removed.push(Resource::Topic { name: topic.clone() });
                if created(discovery.remove(tok, EntryKind::Topic, topic), Code::UnknownName)? {
                    report.removed.push(Resource::DiscoveryTopic { name: topic.clone() });
                }
            } else {
                report.retained_topics.push(topic.clone());
            }
        }
        for s in &rec.microservice_ids {
            security.retire_profile(stok, s)?;
            report.removed.push(Resource::Profile { service: s.clone() });
        }
        self.advance(app_id, AppState::Decommissioned)?;
        report.state = Some(AppState::Decommissioned);
        Ok(report)
    }
}

/// One authorized no-op check on behalf of a service: a send check on the
/// first topic it sends on, else a receive check on its own section.
pub fn self_test(ep: &Endpoints, cred: &Credentials, proposal: &Proposal) -> Result<()> {
    let me = &cred.service_id;
    let allowed = if let Some(t) = proposal.topics.iter().find(|t| t.senders.contains(me)) {
        ep.security.authz_check(cred, &t.name, Operation::Send, None)?
    } else if let Some(t) = proposal.topics.iter().find(|t| t.receivers.contains(me)) {
        let sid = crate::connector::own_section(&*ep.broker, cred, &t.name)?;
        ep.security.authz_check(cred, &t.name, Operation::Receive, Some(&sid))?
    } else {
        return fail(Code::ConnectivityCheckFailed, format!("`{me}` takes part in no topic"));
    };
    if allowed.is_allow() {
        Ok(())
    } else {
        fail(Code::ConnectivityCheckFailed, format!("`{me}` was denied"))
    }
}
