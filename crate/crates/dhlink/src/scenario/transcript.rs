//! Append-only record of a scenario run.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dhlink_core::{Millis, Value};

use crate::error::{Code, Error, Result};
use crate::scenario::{ScenarioConfig, ScenarioKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Event {
    pub sim_time: Millis,
    pub actor: String,
    pub action: String,
    /// SHA-256 of the canonical plaintext the event carried.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub detail: Value,
}

/// Wall-clock hop latency. Reported only; never part of the digest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Latency {
    pub hops: u64,
    pub mean_us: f64,
    pub max_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Transcript {
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub config: ScenarioConfig,
    pub events: Vec<Event>,
    pub summary: BTreeMap<String, u64>,
    pub digest: String,
    #[serde(default)]
    pub wall_ms: u64,
    #[serde(default)]
    pub latency: Latency,
}

#[derive(Serialize)]
struct Digested<'a> {
    scenario: ScenarioKind,
    seed: u64,
    config: &'a ScenarioConfig,
    events: &'a [Event],
    summary: &'a BTreeMap<String, u64>,
}

impl Transcript {
    pub fn compute_digest(&self) -> String {
        let d = Digested {
            scenario: self.scenario,
            seed: self.seed,
            config: &self.config,
            events: &self.events,
            summary: &self.summary,
        };
        let bytes = serde_json::to_vec(&d).expect("transcript serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn events_by<'a>(&'a self, action: &'a str) -> impl Iterator<Item = &'a Event> + 'a {
        self.events.iter().filter(move |e| e.action == action)
    }

    pub fn count(&self, key: &str) -> u64 {
        self.summary.get(key).copied().unwrap_or(0)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::new(Code::BadRequest, format!("{}: {e}", path.display())))
    }
}

/// SHA-256 hex of a value's canonical encoding.
pub fn payload_digest(v: &Value) -> String {
    let bytes = dhlink_core::value::canonical_encode(v).unwrap_or_else(|_| v.to_string().into_bytes());
    hex::encode(Sha256::digest(bytes))
}

/// Serializes event recording for the actors of one run.
pub struct Recorder {
    inner: Mutex<Inner>,
    started: Instant,
}

#[derive(Default)]
struct Inner {
    events: Vec<Event>,
    summary: BTreeMap<String, u64>,
    lat_sum: u128,
    lat_n: u64,
    lat_max: u64,
}

impl Default for Recorder {
    fn default() -> Self {
        Self::new()
    }
}

impl Recorder {
    pub fn new() -> Self {
        Self { inner: Mutex::new(Inner::default()), started: Instant::now() }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn event(&self, sim_time: Millis, actor: &str, action: &str, payload: Option<&Value>, detail: Value) {
        let e = Event {
            sim_time,
            actor: actor.into(),
            action: action.into(),
            payload_digest: payload.map(payload_digest),
            detail,
        };
        self.lock().events.push(e);
    }

    pub fn bump(&self, counter: &str, by: u64) {
        *self.lock().summary.entry(counter.into()).or_default() += by;
    }

    pub fn hop(&self, since: Instant) {
        let us = since.elapsed().as_micros() as u64;
        let mut g = self.lock();
        g.lat_sum += us as u128;
        g.lat_n += 1;
        g.lat_max = g.lat_max.max(us);
    }

    pub fn finish(self, scenario: ScenarioKind, config: &ScenarioConfig) -> Transcript {
        let wall_ms = self.started.elapsed().as_millis() as u64;
        let g = self.inner.into_inner().unwrap_or_else(|e| e.into_inner());
        let latency = Latency {
            hops: g.lat_n,
            mean_us: if g.lat_n == 0 { 0.0 } else { g.lat_sum as f64 / g.lat_n as f64 },
            max_us: g.lat_max,
        };
        let mut t = Transcript {
            scenario,
            seed: config.seed,
            config: config.clone(),
            events: g.events,
            summary: g.summary,
            digest: String::new(),
            wall_ms,
            latency,
        };
        t.digest = t.compute_digest();
        t
    }
}
