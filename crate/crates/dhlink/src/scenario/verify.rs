//! Offline checks over a transcript.
//!
//! The checks re-derive what the run should have produced from the
//! configuration and the recorded inputs, using their own arithmetic, and
//! compare with what the actors recorded.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use sha2::{Digest, Sha256};

use dhlink_core::{Millis, Value, MS_PER_DAY};

use crate::error::{Code, Error, Result};
use crate::scenario::ai2::{refill_times, NO_RESPONSE};
use crate::scenario::transcript::Event;
use crate::scenario::{ScenarioKind, Transcript};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn ok(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }

    fn check(&mut self, name: &str, ok: bool, detail: impl Into<String>) {
        let detail = if ok { String::new() } else { detail.into() };
        self.checks.push(Check { name: name.into(), ok, detail });
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.ok { "ok  " } else { "FAIL" };
            if c.detail.is_empty() {
                writeln!(f, "{tag} {}", c.name)?;
            } else {
                writeln!(f, "{tag} {}: {}", c.name, c.detail)?;
            }
        }
        Ok(())
    }
}

/// Runs every check; an error carries the failing ones.
pub fn verify(t: &Transcript) -> Result<Report> {
    let r = checks(t);
    if r.ok() {
        Ok(r)
    } else {
        Err(Error::new(Code::BadRequest, format!("transcript verification failed\n{r}")))
    }
}

pub fn checks(t: &Transcript) -> Report {
    let mut r = Report::default();
    let digest = t.compute_digest();
    r.check("digest", digest == t.digest, format!("recorded {} recomputed {digest}", t.digest));
    r.check(
        "events in time order",
        t.events.windows(2).all(|w| w[0].sim_time <= w[1].sim_time),
        "simulated time goes backwards",
    );
    for c in ["plaintext-sends", "skipped", "blocked", "send-errors", "duplicates"] {
        r.check(&format!("{c} is zero"), t.count(c) == 0, format!("{c} = {}", t.count(c)));
    }
    match t.scenario {
        ScenarioKind::Ai2Mindtick => ai2(t, &mut r),
        ScenarioKind::Proximity => proximity(t, &mut r),
    }
    r
}

fn digests<'a>(t: &'a Transcript, action: &'a str, actor: Option<&str>) -> BTreeMap<&'a str, usize> {
    let mut m = BTreeMap::new();
    for e in t.events_by(action).filter(|e| actor.is_none_or(|a| e.actor == a)) {
        *m.entry(e.payload_digest.as_deref().unwrap_or("")).or_default() += 1;
    }
    m
}

fn same_payloads(t: &Transcript, r: &mut Report, sent: &str, recv: &str, actor: Option<&str>) {
    let (a, b) = (digests(t, sent, None), digests(t, recv, actor));
    let n: usize = a.values().sum();
    let name = match actor {
        Some(x) => format!("{sent} = {recv} at {x}"),
        None => format!("{sent} = {recv}"),
    };
    r.check(&name, a == b, format!("{n} sent, {} received, multisets differ", b.values().sum::<usize>()));
}

fn text_digest(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

fn s(v: &Value, k: &str) -> String {
    v.get(k).and_then(Value::as_str).unwrap_or_default().to_string()
}

fn i(v: &Value, k: &str) -> Option<i64> {
    v.get(k).and_then(Value::as_i64)
}

fn ticks(t: &Transcript) -> impl Iterator<Item = Millis> + '_ {
    let c = &t.config;
    let n = c.duration_days * MS_PER_DAY / c.tick_ms.max(1);
    (0..n).map(move |k| c.start + k * c.tick_ms)
}

fn ai2(t: &Transcript, r: &mut Report) {
    let cfg = &t.config;
    same_payloads(t, r, "alert-sent", "alert-received", None);
    same_payloads(t, r, "response-sent", "response-received", None);
    r.check("privacy scan", t.count("privacy-hits") == 0, format!("{} display-name hits", t.count("privacy-hits")));
    r.check(
        "responses delivered",
        t.count("responses-submitted") == t.count("responses-received"),
        format!("{} submitted, {} received", t.count("responses-submitted"), t.count("responses-received")),
    );

    // Refill inputs come from the configuration.
    let last_tick = ticks(t).last().unwrap_or(cfg.start);
    let mut want: Vec<Millis> = refill_times(cfg).into_iter().flatten().filter(|&x| x <= last_tick).collect();
    let mut got: Vec<Millis> = t.events_by("refill-recorded").filter_map(|e| i(&e.detail, "at")).collect();
    want.sort_unstable();
    got.sort_unstable();
    r.check("refill inputs", want == got, format!("{} configured, {} recorded", want.len(), got.len()));

    // Replay of the gap rule at every simulated midnight.
    let mut refills: BTreeMap<String, Vec<Millis>> = BTreeMap::new();
    for e in t.events_by("refill-recorded") {
        refills.entry(s(&e.detail, "userToken")).or_default().extend(i(&e.detail, "at"));
    }
    let threshold = (cfg.ai2.refill_interval_days + cfg.ai2.grace_days) * 86_400_000.0;
    let mut expected = BTreeSet::new();
    let mut seen: BTreeMap<&str, Millis> = BTreeMap::new();
    for now in ticks(t).filter(|x| x.rem_euclid(MS_PER_DAY) == 0) {
        for (tok, rs) in &refills {
            let Some(&last) = rs.iter().filter(|&&x| x <= now).max() else { continue };
            if (now - last) as f64 > threshold && seen.get(tok.as_str()) != Some(&last) {
                seen.insert(tok, last);
                expected.insert((tok.clone(), now, last));
            }
        }
    }
    let actual: BTreeSet<(String, Millis, Millis)> = t
        .events_by("alert-sent")
        .map(|e| (s(&e.detail, "userToken"), i(&e.detail, "detectedAt").unwrap_or(-1), i(&e.detail, "lastRefillAt").unwrap_or(-1)))
        .collect();
    r.check(
        "gap rule replay",
        expected == actual && actual.len() as u64 == t.count("alerts-sent"),
        format!("expected {expected:?}, recorded {actual:?}"),
    );

    // Each alert leads to a nudge within one tick quoting the latest response.
    let mut responses: BTreeMap<String, Vec<(Millis, String)>> = BTreeMap::new();
    for e in t.events_by("response-sent") {
        let at = i(&e.detail, "submittedAt").unwrap_or(-1);
        responses.entry(s(&e.detail, "userToken")).or_default().push((at, s(&e.detail, "summaryDigest")));
    }
    let nudges: BTreeMap<(String, Millis), &Event> =
        t.events_by("nudge-written").map(|e| ((s(&e.detail, "userToken"), i(&e.detail, "detectedAt").unwrap_or(-1)), e)).collect();
    let mut late = Vec::new();
    let mut misquoted = Vec::new();
    for (tok, detected, _) in &actual {
        match nudges.get(&(tok.clone(), *detected)) {
            Some(n) if n.sim_time >= *detected && n.sim_time - detected <= cfg.tick_ms => {
                let want = responses
                    .get(tok)
                    .and_then(|v| v.iter().filter(|(at, _)| at < detected).max_by_key(|(at, _)| *at))
                    .map(|(_, d)| d.clone())
                    .unwrap_or_else(|| text_digest(NO_RESPONSE));
                if s(&n.detail, "quoteDigest") != want {
                    misquoted.push(format!("{tok}@{detected}"));
                }
            }
            _ => late.push(format!("{tok}@{detected}")),
        }
    }
    r.check("nudge within one tick", late.is_empty(), format!("missing or late: {late:?}"));
    r.check("nudge quotes latest response", misquoted.is_empty(), format!("misquoted: {misquoted:?}"));
    r.check(
        "one customisation per nudge",
        t.count("customisations") == t.count("nudges") && t.count("nudges") == actual.len() as u64,
        format!("{} nudges, {} customisations", t.count("nudges"), t.count("customisations")),
    );
    r.check("no pending alerts", t.count("alerts-pending") == 0, "temporary alert records left behind");
}

#[derive(Debug, Clone)]
struct Cl {
    id: String,
    user: String,
    lat: f64,
    lon: f64,
    t0: Millis,
    t1: Millis,
}

fn cl(v: &Value) -> Option<Cl> {
    Some(Cl {
        id: v.get("clusterId")?.as_str()?.into(),
        user: v.get("userToken")?.as_str()?.into(),
        lat: v.get("centroidLat")?.as_f64()?,
        lon: v.get("centroidLon")?.as_f64()?,
        t0: v.get("tStart")?.as_i64()?,
        t1: v.get("tEnd")?.as_i64()?,
    })
}

/// Great-circle distance by the atan2 form, on the same mean sphere.
fn great_circle_m(a: &Cl, b: &Cl) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dl = (b.lon - a.lon).to_radians();
    let y = ((p2.cos() * dl.sin()).powi(2) + (p1.cos() * p2.sin() - p1.sin() * p2.cos() * dl.cos()).powi(2)).sqrt();
    let x = p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos();
    6_371_000.0 * y.atan2(x)
}

fn proximity(t: &Transcript, r: &mut Report) {
    let cfg = &t.config;
    let p = &cfg.proximity;
    same_payloads(t, r, "cluster-sent", "cluster-received", None);
    same_payloads(t, r, "confirmation-sent", "confirmation-received", None);
    same_payloads(t, r, "alert-raised", "alert-delivered", Some("patient-frontend"));
    same_payloads(t, r, "alert-raised", "alert-delivered", Some("dashboard"));

    let confirm_times: Vec<Millis> = t.events_by("confirmation-sent").map(|e| e.sim_time).collect();
    let want: Vec<Millis> = p.confirm_at(cfg.start).filter(|&c| c <= cfg.end()).into_iter().collect();
    r.check("confirmation time", confirm_times == want, format!("expected {want:?}, recorded {confirm_times:?}"));

    let window = p.window_days * MS_PER_DAY;
    let slack = p.slack_seconds * 1000;
    let mut store: BTreeMap<String, Cl> = BTreeMap::new();
    let mut confirmed: BTreeSet<String> = BTreeSet::new();
    let mut expected: BTreeMap<String, (Millis, f64)> = BTreeMap::new();
    let mut retention = Vec::new();
    for e in &t.events {
        if e.actor != "proximity-detector" {
            continue;
        }
        let now = e.sim_time;
        match e.action.as_str() {
            "purge" => {
                store.retain(|_, c| c.t1 >= now - window);
                if let Some(oldest) = i(&e.detail, "oldestClusterEnd") {
                    if oldest < now - window {
                        retention.push(format!("cluster ending {oldest} kept at {now}"));
                    }
                }
                continue;
            }
            "confirmation-received" => {
                confirmed.insert(s(&e.detail, "userToken"));
            }
            "cluster-received" => {
                if let Some(c) = cl(&e.detail) {
                    store.entry(c.id.clone()).or_insert(c);
                }
            }
            _ => continue,
        }
        // Every pair that qualifies at this instant.
        let live: Vec<&Cl> = store.values().filter(|c| c.t1 >= now - window).collect();
        for c in live.iter().filter(|c| confirmed.contains(&c.user)) {
            for s in live.iter().filter(|s| s.user != c.user) {
                let apart = s.t0 - slack > c.t1 + slack || c.t0 - slack > s.t1 + slack;
                let d = great_circle_m(s, c);
                if !apart && d <= p.dist_meters {
                    expected.entry(format!("alert:{}:{}", s.id, c.id)).or_insert((now, d));
                }
            }
        }
    }
    let actual: BTreeMap<String, (Millis, f64)> = t
        .events_by("alert-raised")
        .map(|e| {
            let d = e.detail.get("distanceMeters").and_then(Value::as_f64).unwrap_or(f64::NAN);
            (s(&e.detail, "alertId"), (i(&e.detail, "createdAt").unwrap_or(-1), d))
        })
        .collect();
    let same_keys = expected.keys().eq(actual.keys());
    let same_times = expected.iter().zip(&actual).all(|((_, a), (_, b))| a.0 == b.0 && (a.1 - b.1).abs() < 1e-6);
    r.check(
        "alert set = all-pairs oracle",
        same_keys && same_times && actual.len() as u64 == t.count("alerts-raised"),
        format!(
            "oracle {:?}, recorded {:?}",
            expected.keys().collect::<Vec<_>>(),
            actual.keys().collect::<Vec<_>>()
        ),
    );
    r.check("retention after purge", retention.is_empty(), retention.join("; "));
}
