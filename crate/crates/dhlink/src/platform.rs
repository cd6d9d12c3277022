//! The three core services wired together in one process.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::api::Endpoints;
use crate::broker::Broker;
use crate::clock::Clock;
use crate::discovery::Discovery;
use crate::error::Result;
use crate::schemas::SchemaRegistry;
use crate::security::Security;

pub struct Platform {
    pub clock: Arc<dyn Clock>,
    pub security: Arc<Security>,
    pub schemas: Arc<SchemaRegistry>,
    pub broker: Arc<Broker>,
    pub discovery: Arc<Discovery>,
    pub admin_token: String,
    pub security_admin_token: String,
    data_dir: Option<PathBuf>,
}

impl Platform {
    /// Opens every store under `data_dir` (`broker/`, `discovery/`,
    /// `security/`), or keeps them in memory when `None`.
    pub fn open(
        data_dir: Option<&Path>,
        admin_token: &str,
        security_admin_token: &str,
        clock: Arc<dyn Clock>,
    ) -> Result<Self> {
        let sub = |name: &str| data_dir.map(|d| d.join(name));
        let security = Arc::new(Security::open(sub("security").as_deref(), security_admin_token, clock.clone())?);
        let disc_dir = sub("discovery");
        let schemas = Arc::new(SchemaRegistry::open(disc_dir.as_ref().map(|d| d.join("schemas.json")).as_deref())?);
        let broker = Arc::new(Broker::open(
            sub("broker").as_deref(),
            admin_token,
            clock.clone(),
            security.clone(),
            schemas.clone(),
        )?);
        let discovery = Arc::new(Discovery::open(
            disc_dir.as_ref().map(|d| d.join("registry.json")).as_deref(),
            admin_token,
            schemas.clone(),
            broker.clone(),
            security.clone(),
        )?);
        Ok(Self {
            clock,
            security,
            schemas,
            broker,
            discovery,
            admin_token: admin_token.into(),
            security_admin_token: security_admin_token.into(),
            data_dir: data_dir.map(Path::to_path_buf),
        })
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.data_dir.as_deref()
    }

    /// Directory holding the broker's section logs.
    pub fn broker_dir(&self) -> Option<PathBuf> {
        self.data_dir.as_ref().map(|d| d.join("broker"))
    }

    pub fn endpoints(&self) -> Endpoints {
        Endpoints { broker: self.broker.clone(), discovery: self.discovery.clone(), security: self.security.clone() }
    }
}
