//! Medication-adherence collaboration between a questionnaire app
//! ("mindtick") and a refill-analytics app ("ai2").
//!
//! Patients answer a short questionnaire every few hours. MINDtick forwards
//! each stored response on `responses`. AI2 keeps the latest summary per
//! patient and checks refill gaps at every simulated midnight. A gap longer
//! than the refill interval plus grace raises one alert per refill on
//! `anomaly-alerts`, quoting the latest response summary. MINDtick turns
//! each alert into a nudge record and a questionnaire customisation.
//!
//! The anomaly rule and the nudge text are minimal stand-ins; the point is
//! the platform path, not clinical logic.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use dhlink_core::lifecycle::{Proposal, ProposedTopic};
use dhlink_core::log::TopicPolicy;
use dhlink_core::questionnaire::{Answer, Question, QuestionKind, QuestionnaireDef, QuestionnaireResponse};
use dhlink_core::{DataSchema, FieldKind, FieldSpec, Millis, Value, MS_PER_DAY};

use crate::connector::{SinkConnector, SourceConnector};
use crate::error::{Code, Error, Result};
use crate::clock::Clock;
use crate::scenario::transcript::Recorder;
use crate::scenario::{install, pace, sink, source, Env, ScenarioConfig, ScenarioKind, Transcript, HOUR, POLL_MAX};
use crate::services::{QuestionnaireService, UserService};

pub const APP_ID: &str = "ai2-mindtick";
pub const RESPONSES: &str = "responses";
pub const ALERTS: &str = "anomaly-alerts";
pub const QUESTIONNAIRE: &str = "mindtick-checkin";
const SLEEP: [&str; 3] = ["good", "fair", "poor"];
const NOTES: [&str; 5] = ["", "tired today", "busy week", "felt dizzy", "all fine"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct Ai2Config {
    pub refill_interval_days: f64,
    pub grace_days: f64,
    pub response_interval_hours: i64,
    /// Refill times per patient, in hours from the run start. Generated
    /// from the seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refill_history: Option<Vec<Vec<f64>>>,
    /// Share of generated patients who refill on time.
    pub adherent_fraction: f64,
}

impl Default for Ai2Config {
    fn default() -> Self {
        Self {
            refill_interval_days: 30.0,
            grace_days: 7.0,
            response_interval_hours: 2,
            refill_history: None,
            adherent_fraction: 0.5,
        }
    }
}

impl Ai2Config {
    pub fn threshold_ms(&self) -> f64 {
        (self.refill_interval_days + self.grace_days) * MS_PER_DAY as f64
    }
}

pub fn response_schema() -> DataSchema {
    DataSchema::new(
        "checkin-response",
        1,
        vec![
            FieldSpec::new("userToken", FieldKind::String, true),
            FieldSpec::new("questionnaireId", FieldKind::String, true),
            FieldSpec::new("submittedAt", FieldKind::Timestamp, true),
            FieldSpec::new("mood", FieldKind::Integer, true),
            FieldSpec::new("sleep", FieldKind::String, true),
            FieldSpec::new("note", FieldKind::String, false),
        ],
    )
}

pub fn alert_schema() -> DataSchema {
    DataSchema::new(
        "refill-anomaly",
        1,
        vec![
            FieldSpec::new("userToken", FieldKind::String, true),
            FieldSpec::new("kind", FieldKind::String, true),
            FieldSpec::new("gapDays", FieldKind::Float, true),
            FieldSpec::new("lastRefillAt", FieldKind::Timestamp, true),
            FieldSpec::new("detectedAt", FieldKind::Timestamp, true),
            FieldSpec::new("responseSummary", FieldKind::String, true),
            FieldSpec::new("responseSubmittedAt", FieldKind::Timestamp, false),
        ],
    )
}

pub fn proposal() -> Proposal {
    let (r, a) = (response_schema(), alert_schema());
    Proposal {
        description: "questionnaire responses and refill anomaly alerts".into(),
        microservices: vec![],
        topics: vec![
            ProposedTopic {
                name: RESPONSES.into(),
                description: "patient check-in responses".into(),
                schema: r.reference(),
                retention: TopicPolicy::retained_unlimited(),
                senders: vec!["mindtick".into()],
                receivers: vec!["ai2".into()],
            },
            ProposedTopic {
                name: ALERTS.into(),
                description: "missed refill alerts".into(),
                schema: a.reference(),
                retention: TopicPolicy::retained_unlimited(),
                senders: vec!["ai2".into()],
                receivers: vec!["mindtick".into()],
            },
        ],
        schemas: vec![r, a],
        sharing: "deidentified tokens only".into(),
    }
}

pub fn questionnaire() -> QuestionnaireDef {
    QuestionnaireDef {
        study_id: "mindtick".into(),
        questionnaire_id: QUESTIONNAIRE.into(),
        questions: vec![
            Question {
                qid: "mood".into(),
                text: "How is your mood (0-10)?".into(),
                kind: QuestionKind::NumericScale { min: 0.0, max: 10.0 },
                options: vec![],
            },
            Question {
                qid: "sleep".into(),
                text: "How did you sleep?".into(),
                kind: QuestionKind::SingleChoice,
                options: SLEEP.iter().map(|s| s.to_string()).collect(),
            },
            Question { qid: "note".into(), text: "Anything else?".into(), kind: QuestionKind::FreeText, options: vec![] },
        ],
    }
}

/// The text AI2 attaches to alerts for a response.
pub fn summarize(response: &Value) -> String {
    let mood = response.get("mood").and_then(Value::as_i64).unwrap_or(-1);
    let sleep = response.get("sleep").and_then(Value::as_str).unwrap_or("?");
    match response.get("note").and_then(Value::as_str) {
        Some(n) if !n.is_empty() => format!("mood {mood}/10, sleep {sleep}, note: {n}"),
        _ => format!("mood {mood}/10, sleep {sleep}"),
    }
}

pub const NO_RESPONSE: &str = "no responses yet";

pub fn text_digest(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

/// Refill times per patient in absolute simulated milliseconds.
pub fn refill_times(cfg: &ScenarioConfig) -> Vec<Vec<Millis>> {
    let to_ms = |h: f64| cfg.start + (h * HOUR as f64).round() as Millis;
    if let Some(h) = &cfg.ai2.refill_history {
        return (0..cfg.user_count)
            .map(|i| {
                let mut v: Vec<Millis> = h.get(i).map(|r| r.iter().map(|&x| to_ms(x)).collect()).unwrap_or_default();
                v.sort_unstable();
                v
            })
            .collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1 << 32);
    let interval_h = cfg.ai2.refill_interval_days * 24.0;
    let threshold_h = interval_h + cfg.ai2.grace_days * 24.0;
    let run_h = (cfg.duration_days * 24) as f64;
    (0..cfg.user_count)
        .map(|_| {
            let adherent = rng.gen_bool(cfg.ai2.adherent_fraction.clamp(0.0, 1.0));
            let last = if adherent {
                -rng.gen_range(0.0..interval_h).floor()
            } else {
                // Crosses the threshold during the run.
                let lo = (threshold_h - run_h + 24.0).max(interval_h + 1.0);
                let hi = threshold_h.max(lo + 1.0);
                -rng.gen_range(lo..hi).floor()
            };
            let mut v = vec![to_ms(last - interval_h), to_ms(last)];
            if adherent {
                let mut next = last + interval_h;
                while next < run_h {
                    v.push(to_ms(next));
                    next += interval_h;
                }
            }
            v
        })
        .collect()
}

struct Patient {
    name: String,
    token: String,
    rng: ChaCha8Rng,
    refills: Vec<Millis>,
}

struct Ai2State {
    last_refill: BTreeMap<String, Millis>,
    alerted_for: BTreeMap<String, Millis>,
    latest: BTreeMap<String, (Millis, String)>,
}

struct Actors {
    ai2_src: SourceConnector,
    ai2_sink: SinkConnector,
    mt_src: SourceConnector,
    mt_sink: SinkConnector,
    in_flight: HashMap<String, Instant>,
}

fn internal(e: serde_json::Error) -> Error {
    Error::new(Code::Internal, e.to_string())
}

pub fn run_ai2_mindtick(cfg: &ScenarioConfig, env: &Env) -> Result<Transcript> {
    cfg.check()?;
    if cfg.ai2.response_interval_hours <= 0 {
        return Err(Error::new(Code::BadRequest, "responseIntervalHours must be positive"));
    }
    let rec = Recorder::new();
    env.clock.set(cfg.start);
    let installed = install(env, APP_ID, proposal(), &["ai2", "mindtick"])?;
    rec.event(cfg.start, "admin", "app-ready", None, json!({ "app": APP_ID }));

    let mut actors = Actors {
        ai2_src: source(env, installed.cred("ai2"), ALERTS)?,
        ai2_sink: sink(env, installed.cred("ai2"), RESPONSES)?,
        mt_src: source(env, installed.cred("mindtick"), RESPONSES)?,
        mt_sink: sink(env, installed.cred("mindtick"), ALERTS)?,
        in_flight: HashMap::new(),
    };

    // MINDtick's own database and services.
    let mt_store = env.store("mindtick")?;
    let secret = Sha256::digest(format!("ai2-mindtick-users-{}", cfg.seed)).to_vec();
    let users = UserService::new(mt_store.clone(), secret);
    let questionnaires = QuestionnaireService::new(mt_store.clone());
    questionnaires.register(questionnaire())?;
    if let Some(dir) = env.questionnaire_dir() {
        questionnaires.load_dir(dir)?;
    }
    let watcher = mt_store.watch("responses/");

    let refills = refill_times(cfg);
    let mut patients = Vec::new();
    for (i, r) in refills.into_iter().enumerate() {
        let name = format!("Patient Number {i:03}");
        let id = users.register_user(&name, &format!("pw-{i}"), &["patient"])?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        patients.push(Patient { name, token: users.deidentify(&id)?, rng, refills: r });
    }
    let mut ai2 = Ai2State { last_refill: BTreeMap::new(), alerted_for: BTreeMap::new(), latest: BTreeMap::new() };
    let mut privacy_hits = 0u64;
    let names: Vec<String> = patients.iter().map(|p| p.name.clone()).collect();
    let mut scan = |v: &Value| {
        let s = v.to_string();
        privacy_hits += names.iter().filter(|n| s.contains(n.as_str())).count() as u64;
    };

    let interval = cfg.ai2.response_interval_hours * HOUR;
    let ticks = cfg.duration_days * MS_PER_DAY / cfg.tick_ms;
    for k in 0..ticks {
        let t = cfg.start + k * cfg.tick_ms;
        env.clock.set(t);

        // AI2: refills up to now, then the daily gap check.
        for p in &patients {
            for &r in p.refills.iter().filter(|&&r| r <= t && (k == 0 || r > t - cfg.tick_ms)) {
                ai2.last_refill.insert(p.token.clone(), r);
                rec.event(t, "ai2", "refill-recorded", None, json!({ "userToken": p.token, "at": r }));
                rec.bump("refills", 1);
            }
        }
        if t.rem_euclid(MS_PER_DAY) == 0 {
            for p in &patients {
                let Some(&last) = ai2.last_refill.get(&p.token) else { continue };
                let gap = (t - last) as f64;
                if gap <= cfg.ai2.threshold_ms() || ai2.alerted_for.get(&p.token) == Some(&last) {
                    continue;
                }
                ai2.alerted_for.insert(p.token.clone(), last);
                let (summary, submitted) = match ai2.latest.get(&p.token) {
                    Some((at, s)) => (s.clone(), Some(*at)),
                    None => (NO_RESPONSE.to_string(), None),
                };
                let mut alert = json!({
                    "userToken": p.token,
                    "kind": "missed-refill",
                    "gapDays": gap / MS_PER_DAY as f64,
                    "lastRefillAt": last,
                    "detectedAt": t,
                    "responseSummary": summary,
                });
                if let Some(at) = submitted {
                    alert["responseSubmittedAt"] = json!(at);
                }
                scan(&alert);
                send(&mut actors.ai2_src, &mut actors.in_flight, "ai2", &alert, t, &rec)?;
                rec.event(
                    t,
                    "ai2",
                    "alert-sent",
                    Some(&alert),
                    json!({
                        "userToken": p.token,
                        "lastRefillAt": last,
                        "detectedAt": t,
                        "responseSubmittedAt": submitted,
                        "summaryDigest": text_digest(&summary),
                    }),
                );
                rec.bump("alerts-sent", 1);
            }
        }

        // MINDtick: alerts become nudges and questionnaire customisations.
        let out = poll(&mut actors.mt_sink, &mut actors.in_flight, &rec)?;
        for r in out {
            let v = &r.value;
            let tok = v["userToken"].as_str().unwrap_or_default().to_string();
            let detected = v["detectedAt"].as_i64().unwrap_or_default();
            let summary = v["responseSummary"].as_str().unwrap_or_default().to_string();
            rec.event(t, "mindtick", "alert-received", Some(v), json!({ "userToken": tok, "detectedAt": detected }));
            rec.bump("alerts-received", 1);
            let tmp = format!("alerts-tmp/{tok}/{detected:015}");
            mt_store.put(&tmp, v.clone())?;
            let gap = v["gapDays"].as_f64().unwrap_or_default();
            let nudge = json!({
                "userToken": tok,
                "detectedAt": detected,
                "createdAt": t,
                "quotedSummary": summary,
                "text": format!("It looks like a refill is {gap:.1} days overdue. Your last check-in: {summary}"),
            });
            mt_store.put(&format!("nudges/{tok}/{detected:015}"), nudge)?;
            rec.event(
                t,
                "mindtick",
                "nudge-written",
                None,
                json!({ "userToken": tok, "detectedAt": detected, "quoteDigest": text_digest(&summary) }),
            );
            rec.bump("nudges", 1);
            let custom = json!({
                "userToken": tok,
                "questionnaireId": "adherence-followup",
                "reason": "missed-refill",
                "since": t,
            });
            mt_store.put(&format!("custom/{tok}"), custom)?;
            rec.event(t, "mindtick", "questionnaire-customised", None, json!({ "userToken": tok }));
            rec.bump("customisations", 1);
            mt_store.delete(&tmp)?;
        }

        // Patients answer; MINDtick forwards what lands in its store.
        let (lo, hi) = (t, t + cfg.tick_ms);
        for (i, p) in patients.iter_mut().enumerate() {
            let offset = i as Millis * 60_000 % interval;
            let first = lo + (offset - (lo - cfg.start)).rem_euclid(interval);
            let mut at = first;
            while at < hi {
                let mood = p.rng.gen_range(0..=10);
                let sleep = SLEEP[p.rng.gen_range(0..SLEEP.len())];
                let note = NOTES[p.rng.gen_range(0..NOTES.len())];
                let resp = QuestionnaireResponse {
                    user_token: p.token.clone(),
                    questionnaire_id: QUESTIONNAIRE.into(),
                    answers: vec![
                        Answer { qid: "mood".into(), value: json!(mood) },
                        Answer { qid: "sleep".into(), value: json!(sleep) },
                        Answer { qid: "note".into(), value: json!(note) },
                    ],
                    submitted_at: at,
                };
                questionnaires.submit_response(&resp)?;
                rec.bump("responses-submitted", 1);
                at += interval;
            }
        }
        let mut pending: Vec<QuestionnaireResponse> = Vec::new();
        for c in watcher.drain() {
            if let Some(v) = c.value {
                pending.push(serde_json::from_value(v).map_err(internal)?);
            }
        }
        if watcher.overflowed() {
            return Err(Error::new(Code::Internal, "response watcher overflowed"));
        }
        pending.sort_by(|a, b| (a.submitted_at, &a.user_token).cmp(&(b.submitted_at, &b.user_token)));
        for r in pending {
            let mut v = json!({
                "userToken": r.user_token,
                "questionnaireId": r.questionnaire_id,
                "submittedAt": r.submitted_at,
            });
            for a in &r.answers {
                v[a.qid.as_str()] = a.value.clone();
            }
            scan(&v);
            env.clock.set(r.submitted_at);
            send(&mut actors.mt_src, &mut actors.in_flight, "mindtick", &v, r.submitted_at, &rec)?;
            rec.event(
                r.submitted_at,
                "mindtick",
                "response-sent",
                Some(&v),
                json!({
                    "userToken": r.user_token,
                    "submittedAt": r.submitted_at,
                    "summaryDigest": text_digest(&summarize(&v)),
                }),
            );
            rec.bump("responses-sent", 1);
        }

        // AI2: keep the latest summary per patient.
        let now = (t + cfg.tick_ms - 1).max(env.clock.now());
        env.clock.set(now);
        for r in poll(&mut actors.ai2_sink, &mut actors.in_flight, &rec)? {
            let v = &r.value;
            let tok = v["userToken"].as_str().unwrap_or_default().to_string();
            let at = v["submittedAt"].as_i64().unwrap_or_default();
            rec.event(now, "ai2", "response-received", Some(v), json!({ "userToken": tok, "submittedAt": at }));
            rec.bump("responses-received", 1);
            if ai2.latest.get(&tok).is_none_or(|(prev, _)| *prev < at) {
                ai2.latest.insert(tok, (at, summarize(v)));
            }
        }
        pace(cfg);
    }

    for (k, v) in mt_store.scan_prefix("nudges/").into_iter().chain(mt_store.scan_prefix("custom/")) {
        scan(&json!([k, v]));
    }
    rec.bump("privacy-hits", privacy_hits);
    rec.bump("nudge-records", mt_store.scan_prefix("nudges/").len() as u64);
    rec.bump("alerts-pending", mt_store.scan_prefix("alerts-tmp/").len() as u64);
    Ok(rec.finish(ScenarioKind::Ai2Mindtick, cfg))
}

fn send(
    src: &mut SourceConnector,
    in_flight: &mut HashMap<String, Instant>,
    actor: &str,
    v: &Value,
    at: Millis,
    rec: &Recorder,
) -> Result<()> {
    let mid = format!("{actor}-{}", src.sent());
    in_flight.insert(mid, Instant::now());
    for o in src.send(v)? {
        rec.bump("messages-sent", 1);
        if !o.encrypted {
            rec.bump("plaintext-sends", 1);
        }
        if let Some(code) = o.error {
            rec.event(at, actor, "section-send-failed", None, json!({ "section": o.section_id, "error": code }));
            rec.bump("send-errors", 1);
        }
    }
    Ok(())
}

fn poll(
    s: &mut SinkConnector,
    in_flight: &mut HashMap<String, Instant>,
    rec: &Recorder,
) -> Result<Vec<crate::connector::Received>> {
    let out = s.poll(POLL_MAX)?;
    rec.bump("messages-received", out.records.len() as u64);
    rec.bump("skipped", out.skipped.len() as u64);
    rec.bump("duplicates", out.duplicates as u64);
    if out.blocked.is_some() {
        rec.bump("blocked", 1);
    }
    for r in &out.records {
        if let Some(t0) = in_flight.remove(&r.message_id) {
            rec.hop(t0);
        }
    }
    Ok(out.records)
}
