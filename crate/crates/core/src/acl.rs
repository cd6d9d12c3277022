//! Access-control list and the send/receive authorizer.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operation {
    Send,
    Receive,
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Operation::Send => "send",
            Operation::Receive => "receive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Allow,
    Deny,
}

impl Decision {
    pub fn is_allow(self) -> bool {
        self == Decision::Allow
    }
}

/// One grant. Receive grants are scoped to a section; send grants never are.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AccessControlEntry {
    pub service_id: String,
    pub topic: String,
    pub operation: Operation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section_id: Option<String>,
}

impl AccessControlEntry {
    pub fn send(service: impl Into<String>, topic: impl Into<String>) -> Self {
        Self { service_id: service.into(), topic: topic.into(), operation: Operation::Send, section_id: None }
    }

    pub fn receive(service: impl Into<String>, topic: impl Into<String>, section: impl Into<String>) -> Self {
        Self {
            service_id: service.into(),
            topic: topic.into(),
            operation: Operation::Receive,
            section_id: Some(section.into()),
        }
    }

    pub fn is_well_formed(&self) -> bool {
        match self.operation {
            Operation::Send => self.section_id.is_none(),
            Operation::Receive => self.section_id.is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AclError {
    #[error("duplicate-entry")]
    Duplicate,
    #[error("unknown-entry")]
    Unknown,
    #[error("malformed entry: receive needs a section, send must not have one")]
    Malformed,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AclTable {
    entries: BTreeSet<AccessControlEntry>,
}

impl AclTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = AccessControlEntry>) -> Self {
        Self { entries: entries.into_iter().collect() }
    }

    pub fn add(&mut self, entry: AccessControlEntry) -> Result<(), AclError> {
        if !entry.is_well_formed() {
            return Err(AclError::Malformed);
        }
        if !self.entries.insert(entry) {
            return Err(AclError::Duplicate);
        }
        Ok(())
    }

    pub fn remove(&mut self, entry: &AccessControlEntry) -> Result<(), AclError> {
        if self.entries.remove(entry) {
            Ok(())
        } else {
            Err(AclError::Unknown)
        }
    }

    pub fn authorize(&self, service: &str, topic: &str, op: Operation, section: Option<&str>) -> Decision {
        let probe = AccessControlEntry {
            service_id: service.into(),
            topic: topic.into(),
            operation: op,
            section_id: match op {
                Operation::Send => None,
                Operation::Receive => match section {
                    Some(s) => Some(s.into()),
                    None => return Decision::Deny,
                },
            },
        };
        if self.entries.contains(&probe) {
            Decision::Allow
        } else {
            Decision::Deny
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &AccessControlEntry> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn for_service<'a>(&'a self, service: &'a str) -> impl Iterator<Item = &'a AccessControlEntry> + 'a {
        self.entries.iter().filter(move |e| e.service_id == service)
    }

    pub fn for_topic<'a>(&'a self, topic: &'a str) -> impl Iterator<Item = &'a AccessControlEntry> + 'a {
        self.entries.iter().filter(move |e| e.topic == topic)
    }

    /// Topics `service` may send to.
    pub fn send_topics(&self, service: &str) -> BTreeSet<String> {
        self.for_service(service).filter(|e| e.operation == Operation::Send).map(|e| e.topic.clone()).collect()
    }

    pub fn to_vec(&self) -> Vec<AccessControlEntry> {
        self.entries.iter().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use rand::{Rng, SeedableRng};

    #[test]
    fn grant_and_deny() {
        let mut t = AclTable::new();
        t.add(AccessControlEntry::send("s1", "alerts")).unwrap();
        assert_eq!(t.authorize("s1", "alerts", Operation::Send, None), Decision::Allow);
        assert_eq!(t.authorize("s2", "alerts", Operation::Send, None), Decision::Deny);
        assert_eq!(t.authorize("s1", "alerts", Operation::Receive, Some("x")), Decision::Deny);
    }

    #[test]
    fn receive_section_must_match() {
        let mut t = AclTable::new();
        t.add(AccessControlEntry::receive("r1", "alerts", "sec-0000")).unwrap();
        assert!(t.authorize("r1", "alerts", Operation::Receive, Some("sec-0000")).is_allow());
        assert!(!t.authorize("r1", "alerts", Operation::Receive, Some("sec-0001")).is_allow());
        assert!(!t.authorize("r1", "alerts", Operation::Receive, None).is_allow());
    }

    #[test]
    fn duplicate_unknown_malformed() {
        let mut t = AclTable::new();
        let e = AccessControlEntry::send("s1", "alerts");
        t.add(e.clone()).unwrap();
        assert_eq!(t.add(e.clone()), Err(AclError::Duplicate));
        t.remove(&e).unwrap();
        assert!(!t.authorize("s1", "alerts", Operation::Send, None).is_allow());
        assert_eq!(t.remove(&e), Err(AclError::Unknown));
        let mut bad = AccessControlEntry::send("s1", "alerts");
        bad.section_id = Some("x".into());
        assert_eq!(t.add(bad), Err(AclError::Malformed));
    }

    #[test]
    fn matches_linear_scan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let mut rows = Vec::new();
            for _ in 0..rng.gen_range(0..30) {
                let svc = format!("s{}", rng.gen_range(0..5));
                let topic = format!("t{}", rng.gen_range(0..4));
                rows.push(if rng.gen_bool(0.5) {
                    AccessControlEntry::send(svc, topic)
                } else {
                    AccessControlEntry::receive(svc, topic, format!("sec{}", rng.gen_range(0..3)))
                });
            }
            let table = AclTable::from_entries(rows.clone());
            for _ in 0..20 {
                let svc = format!("s{}", rng.gen_range(0..5));
                let topic = format!("t{}", rng.gen_range(0..4));
                let op = if rng.gen_bool(0.5) { Operation::Send } else { Operation::Receive };
                let section = if rng.gen_bool(0.8) { Some(format!("sec{}", rng.gen_range(0..3))) } else { None };
                let scan = rows.iter().any(|r| {
                    r.service_id == svc
                        && r.topic == topic
                        && r.operation == op
                        && (op == Operation::Send || (section.is_some() && r.section_id == section))
                });
                let got = table.authorize(&svc, &topic, op, section.as_deref());
                assert_eq!(got.is_allow(), scan);
            }
        }
    }
}
