//! Per-connector cache of section keys with expiry and LRU eviction.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::Millis;

pub const DEFAULT_CAPACITY: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyKind {
    Public,
    Private,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyCacheEntry {
    pub topic: String,
    pub section: String,
    pub kind: KeyKind,
    pub key_id: String,
    pub key: Vec<u8>,
    pub fetched_at: Millis,
    pub ttl_seconds: i64,
}

impl KeyCacheEntry {
    fn fresh_at(&self, now: Millis) -> bool {
        self.fetched_at.saturating_add(self.ttl_seconds.saturating_mul(1000)) > now
    }
}

type Slot = (String, String, KeyKind);

#[derive(Debug, Clone)]
pub struct KeyCache {
    capacity: usize,
    tick: u64,
    entries: BTreeMap<Slot, (u64, KeyCacheEntry)>,
}

impl Default for KeyCache {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY)
    }
}

impl KeyCache {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), tick: 0, entries: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Returns the entry if present and unexpired at `now`. Expired entries
    /// are dropped on access.
    pub fn get(&mut self, topic: &str, section: &str, kind: KeyKind, now: Millis) -> Option<&KeyCacheEntry> {
        let slot: Slot = (topic.into(), section.into(), kind);
        let fresh = self.entries.get(&slot)?.1.fresh_at(now);
        if !fresh {
            self.entries.remove(&slot);
            return None;
        }
        self.tick += 1;
        let tick = self.tick;
        let e = self.entries.get_mut(&slot)?;
        e.0 = tick;
        Some(&e.1)
    }

    /// Inserts or replaces an entry, evicting the least recently used one
    /// when full.
    pub fn put(&mut self, entry: KeyCacheEntry) {
        let slot: Slot = (entry.topic.clone(), entry.section.clone(), entry.kind);
        if !self.entries.contains_key(&slot) && self.entries.len() >= self.capacity {
            if let Some(victim) = self.entries.iter().min_by_key(|(_, (t, _))| *t).map(|(k, _)| k.clone()) {
                self.entries.remove(&victim);
            }
        }
        self.tick += 1;
        self.entries.insert(slot, (self.tick, entry));
    }

    /// Removes every entry for `(topic, section)`, both kinds.
    pub fn invalidate(&mut self, topic: &str, section: &str) {
        self.entries.retain(|(t, s, _), _| !(t == topic && s == section));
    }
}
