//! Per-section FIFO log and the three topic retention policies.
//!
//! Offsets are dense from zero and never reused: purging removes records
//! but leaves `next_offset` alone.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::envelope::Envelope;
use crate::Millis;

pub const DEFAULT_BUFFER_SIZE: usize = 1024;
pub const DEFAULT_TRANSIENT_MAX_AGE_S: i64 = 60;

/// How long records stay in a section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase", rename_all_fields = "camelCase")]
pub enum TopicPolicy {
    /// Ring buffer of the newest `buffer_size` records per section.
    Realtime {
        #[serde(default = "default_buffer")]
        buffer_size: usize,
    },
    /// Long-term log, optionally bounded by age.
    Retained {
        #[serde(default)]
        max_age_seconds: Option<i64>,
    },
    /// Purged once delivered, and in any case after `max_age_seconds`.
    Transient {
        #[serde(default = "default_transient_age")]
        max_age_seconds: i64,
    },
}

fn default_buffer() -> usize {
    DEFAULT_BUFFER_SIZE
}

fn default_transient_age() -> i64 {
    DEFAULT_TRANSIENT_MAX_AGE_S
}

impl TopicPolicy {
    pub fn realtime() -> Self {
        TopicPolicy::Realtime { buffer_size: DEFAULT_BUFFER_SIZE }
    }

    pub fn retained_unlimited() -> Self {
        TopicPolicy::Retained { max_age_seconds: None }
    }

    pub fn transient() -> Self {
        TopicPolicy::Transient { max_age_seconds: DEFAULT_TRANSIENT_MAX_AGE_S }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            TopicPolicy::Realtime { buffer_size } => buffer_size >= 1,
            TopicPolicy::Retained { max_age_seconds } => max_age_seconds.is_none_or(|a| a >= 0),
            TopicPolicy::Transient { max_age_seconds } => max_age_seconds >= 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RoutedRecord {
    pub offset: u64,
    pub appended_at: Millis,
    #[serde(default)]
    pub delivered: bool,
    pub envelope: Envelope,
}

#[derive(Debug, Clone)]
pub struct SectionLog {
    policy: TopicPolicy,
    records: VecDeque<RoutedRecord>,
    next_offset: u64,
}

impl SectionLog {
    pub fn new(policy: TopicPolicy) -> Self {
        Self { policy, records: VecDeque::new(), next_offset: 0 }
    }

    /// Rebuilds a log from persisted records (in any order). `next_offset` is
    /// the larger of `min_next_offset` and one past the highest record.
    pub fn restore(policy: TopicPolicy, min_next_offset: u64, mut records: Vec<RoutedRecord>) -> Self {
        records.sort_by_key(|r| r.offset);
        records.dedup_by_key(|r| r.offset);
        let next_offset = records.last().map_or(0, |r| r.offset + 1).max(min_next_offset);
        let mut log = Self { policy, records: records.into(), next_offset };
        log.trim_ring();
        log
    }

    pub fn policy(&self) -> TopicPolicy {
        self.policy
    }

    pub fn next_offset(&self) -> u64 {
        self.next_offset
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl DoubleEndedIterator<Item = &RoutedRecord> + ExactSizeIterator {
        self.records.iter()
    }

    /// Appends and returns `(offset, evicted)` where `evicted` counts records
    /// pushed out of a realtime ring buffer.
    pub fn append(&mut self, envelope: Envelope, now: Millis) -> (u64, usize) {
        let offset = self.next_offset;
        self.next_offset += 1;
        self.records.push_back(RoutedRecord { offset, appended_at: now, delivered: false, envelope });
        (offset, self.trim_ring())
    }

    fn trim_ring(&mut self) -> usize {
        let TopicPolicy::Realtime { buffer_size } = self.policy else {
            return 0;
        };
        let mut evicted = 0;
        while self.records.len() > buffer_size {
            self.records.pop_front();
            evicted += 1;
        }
        evicted
    }

    /// Returns up to `max` records with `offset >= from`, ascending. Under the
    /// transient policy the returned records are marked delivered and then
    /// purged; the second element counts them.
    pub fn fetch(&mut self, from: u64, max: usize) -> (Vec<RoutedRecord>, usize) {
        let start = self.records.partition_point(|r| r.offset < from);
        let end = (start + max).min(self.records.len());
        let mut out: Vec<RoutedRecord> = self.records.range(start..end).cloned().collect();
        if !matches!(self.policy, TopicPolicy::Transient { .. }) || out.is_empty() {
            return (out, 0);
        }
        for r in self.records.range_mut(start..end) {
            r.delivered = true;
        }
        for r in &mut out {
            r.delivered = true;
        }
        let purged = out.len();
        self.records.retain(|r| !r.delivered);
        (out, purged)
    }

    /// Applies the policy at `now`; returns the number of purged records.
    pub fn enforce_retention(&mut self, now: Millis) -> usize {
        let before = self.records.len();
        match self.policy {
            TopicPolicy::Realtime { .. } => {
                self.trim_ring();
            }
            TopicPolicy::Retained { max_age_seconds: None } => {}
            TopicPolicy::Retained { max_age_seconds: Some(age) } => {
                let cutoff = now - age * 1000;
                self.records.retain(|r| r.appended_at >= cutoff);
            }
            TopicPolicy::Transient { max_age_seconds } => {
                let cutoff = now - max_age_seconds * 1000;
                self.records.retain(|r| !r.delivered && r.appended_at >= cutoff);
            }
        }
        before - self.records.len()
    }
}
