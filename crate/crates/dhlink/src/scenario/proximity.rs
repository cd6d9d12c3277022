//! Proximity tracing over the platform.
//!
//! The patient frontend uploads raw GPS points straight into the
//! clustering service's database. At every segment boundary the clustering
//! service clusters each user's recent points and publishes new clusters on
//! `gps-clusters`. One scripted user confirms an infection through
//! `infection-confirmations`; the detector runs a backtrace over its window
//! and then checks every later cluster incrementally. Alerts go out on
//! `proximity-alerts` to the frontend and a dashboard. Both stores are
//! purged at every simulated midnight.

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use dhlink_core::geo::GpsCluster;
use dhlink_core::lifecycle::{Proposal, ProposedTopic};
use dhlink_core::log::TopicPolicy;
use dhlink_core::proximity::{ProximityAlert, ProximityParams};
use dhlink_core::{DataSchema, FieldKind, FieldSpec, Millis, Value, MS_PER_DAY};

use crate::connector::{Received, SinkConnector, SourceConnector};
use crate::error::{Code, Error, Result};
use crate::scenario::traces::{generate_traces, LatLon, TraceSpec};
use crate::scenario::transcript::Recorder;
use crate::scenario::{install, pace, sink, source, Env, ScenarioConfig, ScenarioKind, Transcript, HOUR, POLL_MAX};
use crate::services::gps::ClusterParams;
use crate::services::GpsService;

pub use crate::scenario::traces::PlantSpec;

pub const APP_ID: &str = "proximity-tracing";
pub const CLUSTERS: &str = "gps-clusters";
pub const CONFIRMATIONS: &str = "infection-confirmations";
pub const ALERTS: &str = "proximity-alerts";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct ProximityConfig {
    pub eps_meters: f64,
    pub min_pts: usize,
    pub dist_meters: f64,
    pub slack_seconds: i64,
    pub window_days: i64,
    pub point_interval_minutes: i64,
    pub segment_hours: i64,
    pub confirmed_user: usize,
    /// Hours after the run start; no confirmation when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confirm_at_hours: Option<f64>,
    pub base: LatLon,
    pub plants: Vec<PlantSpec>,
}

impl Default for ProximityConfig {
    fn default() -> Self {
        Self {
            eps_meters: 100.0,
            min_pts: 3,
            dist_meters: 50.0,
            slack_seconds: 1800,
            window_days: 7,
            point_interval_minutes: 5,
            segment_hours: 6,
            confirmed_user: 0,
            confirm_at_hours: Some(130.0),
            base: LatLon { lat: 46.5197, lon: 6.6323 },
            plants: vec![PlantSpec::new(0, 1, 82.0, 60), PlantSpec::new(2, 3, 62.0, 60), PlantSpec::new(0, 5, 127.0, 60)],
        }
    }
}

impl ProximityConfig {
    pub fn params(&self) -> ProximityParams {
        ProximityParams { dist_m: self.dist_meters, slack_s: self.slack_seconds, window_days: self.window_days }
    }

    pub fn cluster_params(&self) -> ClusterParams {
        ClusterParams { eps_m: self.eps_meters, min_pts: self.min_pts }
    }

    pub fn trace_spec(&self, cfg: &ScenarioConfig) -> TraceSpec {
        TraceSpec {
            start: cfg.start,
            duration_days: cfg.duration_days,
            point_interval_ms: self.point_interval_minutes * 60_000,
            eps_m: self.eps_meters,
            dist_m: self.dist_meters,
            min_pts: self.min_pts,
            base: self.base,
            plants: self.plants.clone(),
        }
    }

    pub fn confirm_at(&self, start: Millis) -> Option<Millis> {
        self.confirm_at_hours.map(|h| start + (h * HOUR as f64).round() as Millis)
    }
}

pub fn cluster_schema() -> DataSchema {
    DataSchema::new(
        "gps-cluster",
        1,
        vec![
            FieldSpec::new("clusterId", FieldKind::String, true),
            FieldSpec::new("userToken", FieldKind::String, true),
            FieldSpec::new("centroidLat", FieldKind::Float, true),
            FieldSpec::new("centroidLon", FieldKind::Float, true),
            FieldSpec::new("tStart", FieldKind::Timestamp, true),
            FieldSpec::new("tEnd", FieldKind::Timestamp, true),
            FieldSpec::new("pointCount", FieldKind::Integer, true),
        ],
    )
}

pub fn confirmation_schema() -> DataSchema {
    DataSchema::new(
        "infection-confirmation",
        1,
        vec![
            FieldSpec::new("userToken", FieldKind::String, true),
            FieldSpec::new("confirmedAt", FieldKind::Timestamp, true),
        ],
    )
}

pub fn alert_schema() -> DataSchema {
    DataSchema::new(
        "proximity-alert",
        1,
        vec![
            FieldSpec::new("alertId", FieldKind::String, true),
            FieldSpec::new("subjectToken", FieldKind::String, true),
            FieldSpec::new("confirmedToken", FieldKind::String, true),
            FieldSpec::new("subjectClusterId", FieldKind::String, true),
            FieldSpec::new("confirmedClusterId", FieldKind::String, true),
            FieldSpec::new("distanceMeters", FieldKind::Float, true),
            FieldSpec::new("overlapSeconds", FieldKind::Integer, true),
            FieldSpec::new("createdAt", FieldKind::Timestamp, true),
        ],
    )
}

pub fn proposal() -> Proposal {
    let (c, f, a) = (cluster_schema(), confirmation_schema(), alert_schema());
    let topic = |name: &str, d: &str, s: &DataSchema, tx: &[&str], rx: &[&str]| ProposedTopic {
        name: name.into(),
        description: d.into(),
        schema: s.reference(),
        retention: TopicPolicy::retained_unlimited(),
        senders: tx.iter().map(|x| x.to_string()).collect(),
        receivers: rx.iter().map(|x| x.to_string()).collect(),
    };
    Proposal {
        description: "proximity tracing from deidentified GPS clusters".into(),
        microservices: vec![],
        topics: vec![
            topic(CLUSTERS, "spatio-temporal clusters", &c, &["gps-clustering"], &["proximity-detector"]),
            topic(CONFIRMATIONS, "confirmed infections", &f, &["patient-frontend"], &["proximity-detector"]),
            topic(ALERTS, "proximity alerts", &a, &["proximity-detector"], &["patient-frontend", "dashboard"]),
        ],
        schemas: vec![c, f, a],
        sharing: "deidentified tokens only".into(),
    }
}

pub const SERVICES: [&str; 4] = ["patient-frontend", "gps-clustering", "proximity-detector", "dashboard"];

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::new(Code::Internal, e.to_string()))
}

fn from_value<T: for<'de> Deserialize<'de>>(v: &Value) -> Result<T> {
    serde_json::from_value(v.clone()).map_err(|e| Error::new(Code::SchemaViolation, e.to_string()))
}

struct Link {
    in_flight: HashMap<String, Instant>,
}

impl Link {
    fn send(&mut self, src: &mut SourceConnector, actor: &str, v: &Value, rec: &Recorder) -> Result<()> {
        self.in_flight.insert(format!("{actor}-{}", src.sent()), Instant::now());
        for o in src.send(v)? {
            rec.bump("messages-sent", 1);
            if !o.encrypted {
                rec.bump("plaintext-sends", 1);
            }
            if o.error.is_some() {
                rec.bump("send-errors", 1);
            }
        }
        Ok(())
    }

    fn poll(&mut self, s: &mut SinkConnector, rec: &Recorder) -> Result<Vec<Received>> {
        let out = s.poll(POLL_MAX)?;
        rec.bump("messages-received", out.records.len() as u64);
        rec.bump("skipped", out.skipped.len() as u64);
        rec.bump("duplicates", out.duplicates as u64);
        if out.blocked.is_some() {
            rec.bump("blocked", 1);
        }
        for r in &out.records {
            if let Some(t0) = self.in_flight.remove(&r.message_id) {
                rec.hop(t0);
            }
        }
        Ok(out.records)
    }
}

pub fn user_tokens(cfg: &ScenarioConfig) -> Vec<String> {
    (0..cfg.user_count)
        .map(|i| hex::encode(&Sha256::digest(format!("proximity-user-{}-{i}", cfg.seed))[..16]))
        .collect()
}

pub fn run_proximity(cfg: &ScenarioConfig, env: &Env) -> Result<Transcript> {
    cfg.check()?;
    let p = &cfg.proximity;
    if p.segment_hours <= 0 || (24 % p.segment_hours) != 0 {
        return Err(Error::new(Code::BadRequest, "segmentHours must divide a day"));
    }
    if p.confirm_at_hours.is_some() && p.confirmed_user >= cfg.user_count {
        return Err(Error::new(Code::BadRequest, "confirmedUser out of range"));
    }
    let spec = p.trace_spec(cfg);
    let seg = p.segment_hours * HOUR;
    if seg % cfg.tick_ms != 0 {
        return Err(Error::new(Code::BadRequest, "tickMs must divide segmentHours"));
    }
    for (k, pl) in p.plants.iter().enumerate() {
        let (s, e) = pl.interval(cfg.start);
        if (s - cfg.start).div_euclid(seg) != (e - 1 - cfg.start).div_euclid(seg) {
            return Err(Error::new(Code::InfeasiblePlant, format!("plant {k} straddles a clustering segment")));
        }
    }
    let tokens = user_tokens(cfg);
    let traces = generate_traces(cfg.seed, &tokens, &spec)?;

    let rec = Recorder::new();
    env.clock.set(cfg.start);
    let installed = install(env, APP_ID, proposal(), &SERVICES)?;
    rec.event(cfg.start, "admin", "app-ready", None, json!({ "app": APP_ID }));

    let mut frontend_src = source(env, installed.cred("patient-frontend"), CONFIRMATIONS)?;
    let mut frontend_sink = sink(env, installed.cred("patient-frontend"), ALERTS)?;
    let mut clustering_src = source(env, installed.cred("gps-clustering"), CLUSTERS)?;
    let mut det_clusters = sink(env, installed.cred("proximity-detector"), CLUSTERS)?;
    let mut det_confirm = sink(env, installed.cred("proximity-detector"), CONFIRMATIONS)?;
    let mut det_src = source(env, installed.cred("proximity-detector"), ALERTS)?;
    let mut dashboard = sink(env, installed.cred("dashboard"), ALERTS)?;
    let mut link = Link { in_flight: HashMap::new() };

    let clustering = GpsService::new(env.store("gps-clustering")?, p.cluster_params(), p.params());
    let detector = GpsService::new(env.store("proximity-detector")?, p.cluster_params(), p.params());
    let confirm_at = p.confirm_at(cfg.start);
    let mut cursor = vec![0usize; traces.len()];

    let ticks = cfg.duration_days * MS_PER_DAY / cfg.tick_ms;
    for k in 1..=ticks {
        let t = cfg.start + k * cfg.tick_ms;
        env.clock.set(t);

        if let Some(at) = confirm_at.filter(|&at| at > t - cfg.tick_ms && at <= t) {
            env.clock.set(at);
            let tok = &tokens[p.confirmed_user];
            let v = json!({ "userToken": tok, "confirmedAt": at });
            link.send(&mut frontend_src, "patient-frontend", &v, &rec)?;
            rec.event(at, "patient-frontend", "confirmation-sent", Some(&v), json!({ "userToken": tok }));
        }

        env.clock.set(t);
        if t.rem_euclid(MS_PER_DAY) == 0 {
            for (actor, svc) in [("gps-clustering", &clustering), ("proximity-detector", &detector)] {
                let removed = svc.purge(t)?;
                let oldest = svc.clusters().iter().map(|c| c.t_end).min();
                rec.event(t, actor, "purge", None, json!({ "removed": removed, "oldestClusterEnd": oldest }));
                rec.bump("purges", 1);
                rec.bump("purged-records", removed as u64);
            }
        }

        for (u, pts) in traces.iter().enumerate() {
            while cursor[u] < pts.len() && pts[cursor[u]].ts < t {
                clustering.add_point(&pts[cursor[u]])?;
                cursor[u] += 1;
                rec.bump("points-uploaded", 1);
            }
        }

        if (t - cfg.start) % seg == 0 {
            for tok in &tokens {
                for c in clustering.cluster_user(tok, t - seg, t)? {
                    let v = to_value(&c)?;
                    link.send(&mut clustering_src, "gps-clustering", &v, &rec)?;
                    rec.event(t, "gps-clustering", "cluster-sent", Some(&v), json!({ "clusterId": c.cluster_id }));
                    rec.bump("clusters-sent", 1);
                }
            }
        }

        let mut raised: Vec<ProximityAlert> = Vec::new();
        for r in link.poll(&mut det_confirm, &rec)? {
            let tok: String = from_value(&r.value["userToken"])?;
            rec.event(t, "proximity-detector", "confirmation-received", Some(&r.value), json!({ "userToken": tok }));
            raised.extend(detector.confirm(&tok, t)?);
        }
        for r in link.poll(&mut det_clusters, &rec)? {
            let c: GpsCluster = from_value(&r.value)?;
            rec.event(t, "proximity-detector", "cluster-received", Some(&r.value), to_value(&c)?);
            rec.bump("clusters-received", 1);
            if detector.insert_cluster(&c)? {
                raised.extend(detector.check_new_cluster(&c, t)?);
            }
        }
        for a in raised {
            let v = to_value(&a)?;
            link.send(&mut det_src, "proximity-detector", &v, &rec)?;
            rec.event(t, "proximity-detector", "alert-raised", Some(&v), v.clone());
            rec.bump("alerts-raised", 1);
        }

        for (actor, s) in [("patient-frontend", &mut frontend_sink), ("dashboard", &mut dashboard)] {
            for r in link.poll(s, &rec)? {
                let id = r.value["alertId"].clone();
                rec.event(t, actor, "alert-delivered", Some(&r.value), json!({ "alertId": id }));
                rec.bump("alerts-delivered", 1);
            }
        }
        pace(cfg);
    }
    Ok(rec.finish(ScenarioKind::Proximity, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::verify::verify;
    use std::collections::BTreeSet;

    fn pairs(t: &Transcript) -> BTreeSet<(String, String)> {
        t.events_by("alert-raised")
            .map(|e| {
                (e.detail["subjectToken"].as_str().unwrap().to_string(), e.detail["confirmedToken"].as_str().unwrap().to_string())
            })
            .collect()
    }

    #[test]
    fn default_run_alerts_planted_contacts_only() {
        let cfg = ScenarioConfig::default();
        let t = run_proximity(&cfg, &Env::local(None).unwrap()).unwrap();
        let tok = user_tokens(&cfg);
        let want: BTreeSet<_> = [(tok[1].clone(), tok[0].clone()), (tok[5].clone(), tok[0].clone())].into();
        assert_eq!(pairs(&t), want);
        assert_eq!(t.count("alerts-delivered"), 2 * t.count("alerts-raised"));
        assert_eq!(t.count("plaintext-sends"), 0);
        verify(&t).unwrap();
        let again = run_proximity(&cfg, &Env::local(None).unwrap()).unwrap();
        assert_eq!(t.digest, again.digest);
    }

    #[test]
    fn contact_nine_days_before_confirmation_is_outside_the_window() {
        let mut cfg = ScenarioConfig { user_count: 4, duration_days: 10, ..Default::default() };
        cfg.proximity.plants = vec![PlantSpec::new(0, 1, 13.0, 60), PlantSpec::new(0, 2, 8.0 * 24.0 + 13.0, 60)];
        cfg.proximity.confirm_at_hours = Some(9.0 * 24.0 + 13.0);
        let t = run_proximity(&cfg, &Env::local(None).unwrap()).unwrap();
        let tok = user_tokens(&cfg);
        assert_eq!(pairs(&t), [(tok[2].clone(), tok[0].clone())].into());
        verify(&t).unwrap();
    }

    #[test]
    fn no_plants_no_alerts() {
        let mut cfg = ScenarioConfig { user_count: 6, duration_days: 2, ..Default::default() };
        cfg.proximity.plants.clear();
        cfg.proximity.confirm_at_hours = Some(30.0);
        let t = run_proximity(&cfg, &Env::local(None).unwrap()).unwrap();
        assert_eq!(t.count("alerts-raised"), 0);
        assert!(t.count("clusters-received") > 0);
        verify(&t).unwrap();
    }

    #[test]
    fn straddling_plant_is_rejected() {
        let mut cfg = ScenarioConfig::default();
        cfg.proximity.plants = vec![PlantSpec::new(0, 1, 5.5, 60)];
        let e = run_proximity(&cfg, &Env::local(None).unwrap()).unwrap_err();
        assert!(e.is(Code::InfeasiblePlant));
    }
}
