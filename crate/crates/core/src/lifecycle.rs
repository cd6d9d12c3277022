//! Application membership lifecycle and the proposal document.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::deid::is_fingerprint;
use crate::ident::{is_identifier, is_topic_name};
use crate::log::TopicPolicy;
use crate::schema::{DataSchema, SchemaRef};
use crate::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AppState {
    Proposed,
    Initialising,
    Working,
    Decommissioned,
}

impl AppState {
    /// The only state reachable from `self`.
    pub fn successor(self) -> Option<AppState> {
        match self {
            AppState::Proposed => Some(AppState::Initialising),
            AppState::Initialising => Some(AppState::Working),
            AppState::Working => Some(AppState::Decommissioned),
            AppState::Decommissioned => None,
        }
    }
}

impl fmt::Display for AppState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AppState::Proposed => "proposed",
            AppState::Initialising => "initialising",
            AppState::Working => "working",
            AppState::Decommissioned => "decommissioned",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProposedService {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub url: String,
    /// Hex SHA-256 of the service api key; the key itself never travels.
    pub credential_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProposedTopic {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub schema: SchemaRef,
    #[serde(default = "TopicPolicy::retained_unlimited")]
    pub retention: TopicPolicy,
    #[serde(default)]
    pub senders: Vec<String>,
    #[serde(default)]
    pub receivers: Vec<String>,
}

/// What an application declares when asking to join the platform.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Proposal {
    #[serde(default)]
    pub description: String,
    pub microservices: Vec<ProposedService>,
    #[serde(default)]
    pub schemas: Vec<DataSchema>,
    pub topics: Vec<ProposedTopic>,
    /// Free-text specifics of the data sharing process.
    #[serde(default)]
    pub sharing: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LifecycleError {
    #[error("malformed-proposal: {0}")]
    MalformedProposal(String),
    #[error("wrong-state: application is {actual}, expected {expected}")]
    WrongState { expected: AppState, actual: AppState },
}

fn malformed(msg: impl Into<String>) -> LifecycleError {
    LifecycleError::MalformedProposal(msg.into())
}

impl Proposal {
    pub fn check(&self) -> Result<(), LifecycleError> {
        if self.microservices.is_empty() {
            return Err(malformed("no microservices declared"));
        }
        if self.topics.is_empty() {
            return Err(malformed("no topics declared"));
        }
        let mut names = BTreeSet::new();
        for s in &self.microservices {
            if !is_identifier(&s.name) {
                return Err(malformed(format!("bad service name `{}`", s.name)));
            }
            if !names.insert(s.name.as_str()) {
                return Err(malformed(format!("service `{}` declared twice", s.name)));
            }
            if !is_fingerprint(&s.credential_fingerprint) {
                return Err(malformed(format!("service `{}` needs a sha-256 credential fingerprint", s.name)));
            }
        }
        for schema in &self.schemas {
            schema.check().map_err(|e| malformed(format!("schema {}: {e}", schema.name)))?;
        }
        let mut topics = BTreeSet::new();
        for t in &self.topics {
            if !is_topic_name(&t.name) {
                return Err(malformed(format!("bad topic name `{}`", t.name)));
            }
            if !topics.insert(t.name.as_str()) {
                return Err(malformed(format!("topic `{}` declared twice", t.name)));
            }
            if t.schema.version < 1 || !is_identifier(&t.schema.name) {
                return Err(malformed(format!("topic `{}` has no valid schema reference", t.name)));
            }
            if !t.retention.is_valid() {
                return Err(malformed(format!("topic `{}` has an invalid retention policy", t.name)));
            }
            if t.senders.is_empty() && t.receivers.is_empty() {
                return Err(malformed(format!("topic `{}` has neither senders nor receivers", t.name)));
            }
            for s in t.senders.iter().chain(&t.receivers) {
                if !names.contains(s.as_str()) {
                    return Err(malformed(format!("topic `{}` names undeclared service `{s}`", t.name)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Transition {
    pub at: Millis,
    pub from: AppState,
    pub to: AppState,
    pub admin_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ApplicationRecord {
    pub app_id: String,
    pub state: AppState,
    pub proposal: Proposal,
    pub microservice_ids: Vec<String>,
    pub topic_names: Vec<String>,
    pub history: Vec<Transition>,
}

impl ApplicationRecord {
    pub fn propose(app_id: &str, proposal: Proposal) -> Result<Self, LifecycleError> {
        if !is_identifier(app_id) {
            return Err(malformed(format!("bad application id `{app_id}`")));
        }
        proposal.check()?;
        Ok(Self {
            app_id: app_id.into(),
            state: AppState::Proposed,
            microservice_ids: proposal.microservices.iter().map(|s| s.name.clone()).collect(),
            topic_names: proposal.topics.iter().map(|t| t.name.clone()).collect(),
            proposal,
            history: Vec::new(),
        })
    }

    pub fn expect_state(&self, expected: AppState) -> Result<(), LifecycleError> {
        if self.state == expected {
            Ok(())
        } else {
            Err(LifecycleError::WrongState { expected, actual: self.state })
        }
    }

    /// Moves to `to` if it is the successor of the current state.
    pub fn advance(&mut self, to: AppState, at: Millis, admin_id: &str) -> Result<(), LifecycleError> {
        if self.state.successor() != Some(to) {
            let expected = match to {
                AppState::Initialising => AppState::Proposed,
                AppState::Working => AppState::Initialising,
                AppState::Decommissioned => AppState::Working,
                AppState::Proposed => AppState::Proposed,
            };
            return Err(LifecycleError::WrongState { expected, actual: self.state });
        }
        self.history.push(Transition { at, from: self.state, to, admin_id: admin_id.into() });
        self.state = to;
        Ok(())
    }
}
