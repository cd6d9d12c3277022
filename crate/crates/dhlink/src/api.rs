//! Service interfaces shared by the in-process services and their HTTP
//! clients. Connectors, the admin tooling and the scenarios only talk to
//! these traits, so the same code runs against either.

use serde::{Deserialize, Serialize};

use dhlink_core::acl::{AccessControlEntry, Decision, Operation};
use dhlink_core::log::RoutedRecord;
use dhlink_core::schema::DataSchema;
use dhlink_core::Envelope;

use crate::broker::{SectionView, TopicSpec, TopicStatus, TopicView};
use crate::discovery::{EntryKind, EntryStatus, ServiceInfo, TopicInfo, TopicRegistration};
use crate::error::Result;
use crate::security::{KeyInfo, KeyMaterial, Profile, SecurityStats};

/// A microservice identity as carried by the identity headers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Credentials {
    pub service_id: String,
    pub api_key: String,
}

impl Credentials {
    pub fn new(service_id: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self { service_id: service_id.into(), api_key: api_key.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Caller {
    Admin(String),
    Service(Credentials),
}

pub trait BrokerApi: Send + Sync {
    fn create_topic(&self, admin: &str, spec: &TopicSpec) -> Result<TopicView>;
    fn delete_topic(&self, admin: &str, name: &str) -> Result<()>;
    fn set_topic_status(&self, admin: &str, name: &str, status: TopicStatus) -> Result<()>;
    fn list_topics(&self, admin: &str) -> Result<Vec<TopicView>>;
    /// Runs the retention sweep for one topic at the broker's current time.
    fn purge(&self, admin: &str, name: &str) -> Result<usize>;
    /// Allowed for the administrator or for the receiver itself.
    fn allocate_section(&self, caller: &Caller, topic: &str, receiver: &str) -> Result<String>;
    fn release_section(&self, admin: &str, topic: &str, section: &str) -> Result<()>;
    fn sections(&self, caller: &Caller, topic: &str) -> Result<Vec<SectionView>>;
    fn append(&self, cred: &Credentials, topic: &str, section: &str, envelope: &Envelope) -> Result<u64>;
    fn fetch(&self, cred: &Credentials, topic: &str, section: &str, from: u64, max: usize)
        -> Result<Vec<RoutedRecord>>;
}

pub trait DiscoveryApi: Send + Sync {
    fn register_schema(&self, admin: &str, schema: &DataSchema) -> Result<()>;
    fn schema(&self, caller: &Caller, name: &str, version: u32) -> Result<DataSchema>;
    fn register_topic(&self, admin: &str, reg: &TopicRegistration) -> Result<TopicInfo>;
    fn register_service(&self, admin: &str, info: &ServiceInfo) -> Result<()>;
    fn set_status(&self, admin: &str, kind: EntryKind, name: &str, status: EntryStatus) -> Result<()>;
    fn remove(&self, admin: &str, kind: EntryKind, name: &str) -> Result<()>;
    fn query_topics(&self, caller: &Caller, filter: &str) -> Result<Vec<TopicInfo>>;
    fn query_services(&self, caller: &Caller, filter: &str) -> Result<Vec<ServiceInfo>>;
}

pub trait SecurityApi: Send + Sync {
    fn authenticate(&self, cred: &Credentials) -> Result<Profile>;
    fn authz_check(&self, cred: &Credentials, topic: &str, op: Operation, section: Option<&str>) -> Result<Decision>;
    fn public_key(&self, cred: &Credentials, topic: &str, section: &str) -> Result<KeyMaterial>;
    fn private_key(&self, cred: &Credentials, topic: &str, section: &str) -> Result<KeyMaterial>;

    fn register_profile(&self, admin: &str, profile: &Profile) -> Result<()>;
    fn profile(&self, admin: &str, service_id: &str) -> Result<Profile>;
    /// Keeps the profile but clears its verification and marks it retired.
    fn retire_profile(&self, admin: &str, service_id: &str) -> Result<()>;
    fn add_acl(&self, admin: &str, entry: &AccessControlEntry) -> Result<()>;
    fn remove_acl(&self, admin: &str, entry: &AccessControlEntry) -> Result<()>;
    fn list_acl(&self, admin: &str) -> Result<Vec<AccessControlEntry>>;
    fn generate_key(&self, admin: &str, topic: &str, section: &str, rotate: bool) -> Result<KeyInfo>;
    /// Revokes and then deletes every key of `(topic, section)`.
    fn delete_keys(&self, admin: &str, topic: &str, section: &str) -> Result<usize>;
    fn list_keys(&self, admin: &str) -> Result<Vec<KeyInfo>>;
    fn stats(&self, admin: &str) -> Result<SecurityStats>;
}

/// One handle per service, local or remote.
#[derive(Clone)]
pub struct Endpoints {
    pub broker: std::sync::Arc<dyn BrokerApi>,
    pub discovery: std::sync::Arc<dyn DiscoveryApi>,
    pub security: std::sync::Arc<dyn SecurityApi>,
}

impl Endpoints {
    /// HTTP clients. `ca_pem` switches the clients to trust only that bundle.
    pub fn remote(broker_url: &str, discovery_url: &str, security_url: &str, ca_pem: Option<&[u8]>) -> Result<Self> {
        use crate::error::Code;
        use crate::http::client::{CoreClient, HttpClient, SecurityClient};
        use std::sync::Arc;
        let client = |url: &str, code| match ca_pem {
            Some(pem) => HttpClient::with_ca(url, code, pem),
            None => Ok(HttpClient::new(url, code)),
        };
        Ok(Self {
            broker: Arc::new(CoreClient(client(broker_url, Code::BrokerUnreachable)?)),
            discovery: Arc::new(CoreClient(client(discovery_url, Code::EndpointUnreachable)?)),
            security: Arc::new(SecurityClient(client(security_url, Code::EndpointUnreachable)?)),
        })
    }
}
