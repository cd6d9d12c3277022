//! Ordered key-value store with a JSON-lines write-ahead log and prefix
//! watchers.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender, TryRecvError, TrySendError};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use dhlink_core::Value;

use crate::error::{fail, Code, Result};
use crate::persist::{self, JsonlWriter};

pub const WATCH_QUEUE: usize = 4096;

/// One committed write. `value` is `None` for a delete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Change {
    pub seq: u64,
    pub key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
}

struct WatchSlot {
    prefix: String,
    tx: SyncSender<Change>,
    overflow: Arc<AtomicBool>,
}

/// Receiving end of a prefix watch.
pub struct Watcher {
    rx: Receiver<Change>,
    overflow: Arc<AtomicBool>,
}

impl Watcher {
    /// Set once a change could not be queued; the feed is then closed.
    pub fn overflowed(&self) -> bool {
        self.overflow.load(Ordering::Acquire)
    }

    /// Every change queued so far.
    pub fn drain(&self) -> Vec<Change> {
        let mut out = Vec::new();
        loop {
            match self.rx.try_recv() {
                Ok(c) => out.push(c),
                Err(TryRecvError::Empty | TryRecvError::Disconnected) => return out,
            }
        }
    }

    pub fn recv_timeout(&self, d: Duration) -> Option<Change> {
        self.rx.recv_timeout(d).ok()
    }
}

struct Inner {
    map: BTreeMap<String, Value>,
    seq: u64,
    wal: Option<JsonlWriter>,
    watchers: Vec<WatchSlot>,
}

pub struct Store {
    inner: Mutex<Inner>,
    queue: usize,
}

impl Store {
    pub fn in_memory() -> Self {
        Self::open(None).expect("in-memory store cannot fail")
    }

    /// Replays `path` if it exists and appends to it from then on.
    pub fn open(path: Option<&Path>) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut seq = 0;
        let wal = match path {
            Some(p) => {
                for c in persist::read_jsonl::<Change>(p)? {
                    seq = c.seq;
                    match c.value {
                        Some(v) => map.insert(c.key, v),
                        None => map.remove(&c.key),
                    };
                }
                Some(JsonlWriter::open(p)?)
            }
            None => None,
        };
        Ok(Self { inner: Mutex::new(Inner { map, seq, wal, watchers: Vec::new() }), queue: WATCH_QUEUE })
    }

    /// Per-watcher queue bound for watchers registered afterwards.
    pub fn with_queue(mut self, n: usize) -> Self {
        self.queue = n.max(1);
        self
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn commit(&self, key: &str, value: Option<Value>) -> Result<u64> {
        if key.is_empty() {
            return fail(Code::BadRequest, "store keys must be non-empty");
        }
        let mut g = self.lock();
        let change = Change { seq: g.seq + 1, key: key.into(), value };
        if let Some(w) = g.wal.as_mut() {
            w.append(&change)?;
        }
        g.seq = change.seq;
        match &change.value {
            Some(v) => g.map.insert(change.key.clone(), v.clone()),
            None => g.map.remove(&change.key),
        };
        g.watchers.retain(|w| {
            if !change.key.starts_with(&w.prefix) {
                return true;
            }
            match w.tx.try_send(change.clone()) {
                Ok(()) => true,
                Err(TrySendError::Full(_)) => {
                    w.overflow.store(true, Ordering::Release);
                    false
                }
                Err(TrySendError::Disconnected(_)) => false,
            }
        });
        Ok(change.seq)
    }

    /// Durable (written and flushed) before returning.
    pub fn put(&self, key: &str, value: Value) -> Result<u64> {
        self.commit(key, Some(value))
    }

    pub fn delete(&self, key: &str) -> Result<bool> {
        if !self.lock().map.contains_key(key) {
            return Ok(false);
        }
        self.commit(key, None).map(|_| true)
    }

    pub fn get(&self, key: &str) -> Option<Value> {
        self.lock().map.get(key).cloned()
    }

    /// Entries under `prefix`, in key order.
    pub fn scan_prefix(&self, prefix: &str) -> Vec<(String, Value)> {
        self.lock()
            .map
            .range(prefix.to_string()..)
            .take_while(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.lock().map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn watch(&self, prefix: &str) -> Watcher {
        let (tx, rx) = sync_channel(self.queue);
        let overflow = Arc::new(AtomicBool::new(false));
        self.lock().watchers.push(WatchSlot { prefix: prefix.into(), tx, overflow: overflow.clone() });
        Watcher { rx, overflow }
    }
}
