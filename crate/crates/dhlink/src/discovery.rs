//! Service discovery: a queryable registry of topic and microservice
//! metadata, persisted as one JSON snapshot.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use dhlink_core::ident::is_identifier;
use dhlink_core::schema::{DataSchema, SchemaRef};

use crate::api::{Caller, DiscoveryApi, SecurityApi};
use crate::broker::Broker;
use crate::error::{fail, Code, Error, Result};
use crate::persist;
use crate::schemas::SchemaRegistry;
use crate::security::Security;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryStatus {
    Initialising,
    Ready,
    Retired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Topic,
    Service,
}

impl EntryKind {
    pub fn plural(self) -> &'static str {
        match self {
            EntryKind::Topic => "topics",
            EntryKind::Service => "services",
        }
    }
}

impl FromStr for EntryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "topic" | "topics" => Ok(EntryKind::Topic),
            "service" | "services" => Ok(EntryKind::Service),
            _ => fail(Code::BadRequest, format!("unknown entry kind `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TopicRegistration {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub schema: SchemaRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TopicInfo {
    pub name: String,
    pub description: String,
    pub status: EntryStatus,
    pub schema_spec: DataSchema,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ServiceInfo {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub url: String,
    pub status: EntryStatus,
    #[serde(default)]
    pub owner_app_id: String,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
struct Registry {
    topics: BTreeMap<String, TopicInfo>,
    services: BTreeMap<String, ServiceInfo>,
}

fn matches(filter: &str, name: &str, description: &str) -> bool {
    let f = filter.to_lowercase();
    f.is_empty() || name.to_lowercase().contains(&f) || description.to_lowercase().contains(&f)
}

pub struct Discovery {
    path: Option<PathBuf>,
    admin_token: String,
    schemas: Arc<SchemaRegistry>,
    broker: Arc<Broker>,
    security: Arc<Security>,
    reg: RwLock<Registry>,
}

impl Discovery {
    pub fn open(
        path: Option<&Path>,
        admin_token: &str,
        schemas: Arc<SchemaRegistry>,
        broker: Arc<Broker>,
        security: Arc<Security>,
    ) -> Result<Self> {
        let reg = match path {
            Some(p) => persist::read_json(p)?.unwrap_or_default(),
            None => Registry::default(),
        };
        Ok(Self {
            path: path.map(Path::to_path_buf),
            admin_token: admin_token.into(),
            schemas,
            broker,
            security,
            reg: RwLock::new(reg),
        })
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

    fn save(&self, reg: &Registry) -> Result<()> {
        match &self.path {
            Some(p) => persist::write_json(p, reg),
            None => Ok(()),
        }
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Registry> {
        self.reg.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, Registry> {
        self.reg.write().unwrap_or_else(|e| e.into_inner())
    }

    /// Service names a sending service may see: receivers holding sections
    /// on topics it may send to.
    pub fn visible_to(&self, service: &str) -> BTreeSet<String> {
        self.security.send_topics(service).iter().flat_map(|t| self.broker.receivers(t)).collect()
    }
}

fn step_ok(from: EntryStatus, to: EntryStatus) -> bool {
    from == to
        || matches!(
            (from, to),
            (EntryStatus::Initialising, EntryStatus::Ready) | (EntryStatus::Ready, EntryStatus::Retired)
        )
}

impl DiscoveryApi for Discovery {
    fn register_schema(&self, admin: &str, schema: &DataSchema) -> Result<()> {
        self.check_admin(admin)?;
        self.schemas.register(schema).map(|_| ())
    }

    fn schema(&self, caller: &Caller, name: &str, version: u32) -> Result<DataSchema> {
        self.check_caller(caller)?;
        let r = SchemaRef::new(name, version);
        self.schemas.get(&r).ok_or_else(|| Error::new(Code::UnknownSchema, format!("{r} is not registered")))
    }

    fn register_topic(&self, admin: &str, reg: &TopicRegistration) -> Result<TopicInfo> {
        self.check_admin(admin)?;
        let schema = self
            .schemas
            .get(&reg.schema)
            .ok_or_else(|| Error::new(Code::UnknownSchema, format!("{} is not registered", reg.schema)))?;
        let mut r = self.write();
        if r.topics.contains_key(&reg.name) {
            return fail(Code::DuplicateName, format!("topic `{}` already registered", reg.name));
        }
        let info = TopicInfo {
            name: reg.name.clone(),
            description: reg.description.clone(),
            status: EntryStatus::Initialising,
            schema_spec: schema,
        };
        r.topics.insert(info.name.clone(), info.clone());
        self.save(&r)?;
        Ok(info)
    }

    fn register_service(&self, admin: &str, info: &ServiceInfo) -> Result<()> {
        self.check_admin(admin)?;
        if !is_identifier(&info.name) {
            return fail(Code::InvalidInfo, format!("bad service name `{}`", info.name));
        }
        if info.status == EntryStatus::Ready && info.url.is_empty() {
            return fail(Code::InvalidInfo, "a ready service needs a url");
        }
        let mut r = self.write();
        if r.services.contains_key(&info.name) {
            return fail(Code::DuplicateName, format!("service `{}` already registered", info.name));
        }
        r.services.insert(info.name.clone(), info.clone());
        self.save(&r)
    }

    fn set_status(&self, admin: &str, kind: EntryKind, name: &str, status: EntryStatus) -> Result<()> {
        self.check_admin(admin)?;
        let mut r = self.write();
        let unknown = || Error::new(Code::UnknownName, format!("no {kind:?} entry `{name}`").to_lowercase());
        let current = match kind {
            EntryKind::Topic => r.topics.get(name).map(|t| t.status),
            EntryKind::Service => r.services.get(name).map(|s| s.status),
        }
        .ok_or_else(unknown)?;
        if !step_ok(current, status) {
            return fail(Code::IllegalTransition, format!("`{name}` cannot go from {current:?} to {status:?}"));
        }
        match kind {
            EntryKind::Topic => {
                if status == EntryStatus::Ready && self.broker.topic_view(name).is_none() {
                    return fail(Code::InvalidInfo, format!("no broker topic `{name}` backs this entry"));
                }
                r.topics.get_mut(name).ok_or_else(unknown)?.status = status;
            }
            EntryKind::Service => {
                let s = r.services.get_mut(name).ok_or_else(unknown)?;
                if status == EntryStatus::Ready && s.url.is_empty() {
                    return fail(Code::InvalidInfo, "a ready service needs a url");
                }
                s.status = status;
            }
        }
        self.save(&r)
    }

    fn remove(&self, admin: &str, kind: EntryKind, name: &str) -> Result<()> {
        self.check_admin(admin)?;
        let mut r = self.write();
        let removed = match kind {
            EntryKind::Topic => r.topics.remove(name).is_some(),
            EntryKind::Service => r.services.remove(name).is_some(),
        };
        if !removed {
            return fail(Code::UnknownName, format!("no entry `{name}`"));
        }
        self.save(&r)
    }

    fn query_topics(&self, caller: &Caller, filter: &str) -> Result<Vec<TopicInfo>> {
        self.check_caller(caller)?;
        Ok(self.read().topics.values().filter(|t| matches(filter, &t.name, &t.description)).cloned().collect())
    }

    fn query_services(&self, caller: &Caller, filter: &str) -> Result<Vec<ServiceInfo>> {
        let visible = match self.check_caller(caller)? {
            None => None,
            Some(id) => Some(self.visible_to(&id)),
        };
        Ok(self
            .read()
            .services
            .values()
            .filter(|s| visible.as_ref().is_none_or(|v| v.contains(&s.name)))
            .filter(|s| matches(filter, &s.name, &s.description))
            .cloned()
            .collect())
    }
}
