//! Reproductions of the two reference applications on simulated time.
//!
//! A run is a single-threaded loop over simulated ticks. Actors take their
//! turn in a fixed order each tick, so identical config and seed give an
//! identical transcript.

pub mod ai2;
pub mod proximity;
pub mod traces;
pub mod transcript;
pub mod verify;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use dhlink_core::deid::fingerprint;
use dhlink_core::lifecycle::{Proposal, ProposedService};
use dhlink_core::{Millis, MS_PER_DAY};

use crate::admin::{self_test, Admin};
use crate::api::{Credentials, Endpoints};
use crate::clock::{Clock, ManualClock};
use crate::connector::{own_section, topic_schema, SinkConnector, SourceConnector};
use crate::error::{Code, Error, Result};
use crate::platform::Platform;
use crate::services::Store;

pub use ai2::{run_ai2_mindtick, Ai2Config};
pub use proximity::{run_proximity, PlantSpec, ProximityConfig};
pub use transcript::{Event, Transcript};

/// Midnight UTC, 2023-11-15.
pub const DEFAULT_START: Millis = 19_676 * MS_PER_DAY;
pub const HOUR: Millis = 3_600_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Ai2Mindtick,
    Proximity,
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ai2-mindtick" => Ok(Self::Ai2Mindtick),
            "proximity" => Ok(Self::Proximity),
            _ => Err(Error::new(Code::BadRequest, format!("unknown scenario `{s}`"))),
        }
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Ai2Mindtick => "ai2-mindtick",
            Self::Proximity => "proximity",
        })
    }
}

/// Remote platform endpoints. Absent means an in-process platform.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EndpointConfig {
    pub broker_url: String,
    #[serde(default)]
    pub discovery_url: Option<String>,
    pub security_url: String,
    pub admin_token: String,
    #[serde(default)]
    pub security_admin_token: Option<String>,
    #[serde(default)]
    pub ca_cert: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub user_count: usize,
    pub duration_days: i64,
    /// Simulated time covered by one tick.
    pub tick_ms: Millis,
    /// Wall time slept per tick; zero runs as fast as possible.
    pub wall_ms_per_tick: u64,
    pub start: Millis,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoints: Option<EndpointConfig>,
    pub ai2: Ai2Config,
    pub proximity: ProximityConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            user_count: 20,
            duration_days: 7,
            tick_ms: HOUR,
            wall_ms_per_tick: 0,
            start: DEFAULT_START,
            endpoints: None,
            ai2: Ai2Config::default(),
            proximity: ProximityConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn end(&self) -> Millis {
        self.start + self.duration_days * MS_PER_DAY
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::new(Code::BadRequest, m.to_string()));
        if self.user_count == 0 {
            return bad("userCount must be positive");
        }
        if self.duration_days <= 0 {
            return bad("durationDays must be positive");
        }
        if self.tick_ms <= 0 || MS_PER_DAY % self.tick_ms != 0 {
            return bad("tickMs must divide one day");
        }
        Ok(())
    }
}

/// Where a scenario runs: the endpoints, the administrator and the
/// simulated clock.
pub struct Env {
    pub ep: Endpoints,
    pub clock: Arc<ManualClock>,
    admin: Mutex<Admin>,
    platform: Option<Arc<Platform>>,
    services_dir: Option<PathBuf>,
    questionnaire_dir: Option<PathBuf>,
}

pub const LOCAL_ADMIN_TOKEN: &str = "scenario-admin";
pub const LOCAL_SECURITY_ADMIN_TOKEN: &str = "scenario-security-admin";

impl Env {
    /// An in-process platform on the simulated clock, persisted under
    /// `data_dir` when given.
    pub fn local(data_dir: Option<&Path>) -> Result<Self> {
        let clock = Arc::new(ManualClock::new(DEFAULT_START));
        let platform =
            Arc::new(Platform::open(data_dir, LOCAL_ADMIN_TOKEN, LOCAL_SECURITY_ADMIN_TOKEN, clock.clone())?);
        let ep = platform.endpoints();
        let admin = Admin::open(
            data_dir.map(|d| d.join("admin")).as_deref(),
            ep.clone(),
            LOCAL_ADMIN_TOKEN,
            LOCAL_SECURITY_ADMIN_TOKEN,
            "scenario",
            clock.clone(),
        )?;
        Ok(Self {
            ep,
            clock,
            admin: Mutex::new(admin),
            platform: Some(platform),
            services_dir: data_dir.map(|d| d.join("services")),
            questionnaire_dir: None,
        })
    }

    /// A running platform reached over HTTP. Only the actors' clock is
    /// simulated.
    pub fn remote(cfg: &EndpointConfig) -> Result<Self> {
        let pem = cfg.ca_cert.as_ref().map(std::fs::read).transpose()?;
        let disc = cfg.discovery_url.as_deref().unwrap_or(&cfg.broker_url);
        let ep = Endpoints::remote(&cfg.broker_url, disc, &cfg.security_url, pem.as_deref())?;
        let clock = Arc::new(ManualClock::new(DEFAULT_START));
        let sec = cfg.security_admin_token.as_deref().unwrap_or(&cfg.admin_token);
        let admin = Admin::open(None, ep.clone(), &cfg.admin_token, sec, "scenario", clock.clone())?;
        Ok(Self { ep, clock, admin: Mutex::new(admin), platform: None, services_dir: None, questionnaire_dir: None })
    }

    pub fn for_config(cfg: &ScenarioConfig, data_dir: Option<&Path>) -> Result<Self> {
        match &cfg.endpoints {
            Some(e) => Self::remote(e),
            None => Self::local(data_dir),
        }
    }

    /// Keeps the actors' service stores as JSON-lines files under `dir`.
    pub fn with_services_dir(mut self, dir: &Path) -> Self {
        self.services_dir = Some(dir.to_path_buf());
        self
    }

    /// Extra questionnaire definitions loaded by the questionnaire app.
    pub fn with_questionnaire_dir(mut self, dir: &Path) -> Self {
        self.questionnaire_dir = Some(dir.to_path_buf());
        self
    }

    pub fn questionnaire_dir(&self) -> Option<&Path> {
        self.questionnaire_dir.as_deref()
    }

    /// An actor's store, persisted when a services directory is set.
    pub fn store(&self, name: &str) -> Result<Arc<Store>> {
        match &self.services_dir {
            Some(d) => {
                std::fs::create_dir_all(d)?;
                Ok(Arc::new(Store::open(Some(&d.join(format!("{name}.jsonl"))))?))
            }
            None => Ok(Arc::new(Store::in_memory())),
        }
    }

    pub fn platform(&self) -> Option<&Arc<Platform>> {
        self.platform.as_ref()
    }

    pub fn admin(&self) -> MutexGuard<'_, Admin> {
        self.admin.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub fn run(kind: ScenarioKind, cfg: &ScenarioConfig, env: &Env) -> Result<Transcript> {
    cfg.check()?;
    match kind {
        ScenarioKind::Ai2Mindtick => run_ai2_mindtick(cfg, env),
        ScenarioKind::Proximity => run_proximity(cfg, env),
    }
}

fn setup_error(step: &str, e: Error) -> Error {
    match e.code {
        Code::BrokerUnreachable | Code::EndpointUnreachable => e,
        _ => Error::new(Code::SetupIncomplete, format!("{step}: {e}")),
    }
}

/// Credentials of an installed application's services.
pub(crate) struct Installed {
    pub creds: BTreeMap<String, Credentials>,
}

impl Installed {
    pub fn cred(&self, service: &str) -> Credentials {
        self.creds[service].clone()
    }
}

/// Runs the full onboarding for one application: propose, approve and
/// initialise, a self-test per service, mark ready.
pub(crate) fn install(env: &Env, app_id: &str, mut proposal: Proposal, services: &[&str]) -> Result<Installed> {
    let mut creds = BTreeMap::new();
    for s in services {
        let mut key = [0u8; 16];
        OsRng.fill_bytes(&mut key);
        let api_key = hex::encode(key);
        proposal.microservices.push(ProposedService {
            name: s.to_string(),
            description: format!("{s} microservice"),
            url: format!("http://{s}.{app_id}.local"),
            credential_fingerprint: fingerprint(&api_key),
        });
        creds.insert(s.to_string(), Credentials::new(*s, api_key));
    }
    let mut admin = env.admin();
    admin.propose(app_id, proposal.clone()).map_err(|e| setup_error("propose", e))?;
    admin.approve_and_initialise(app_id).map_err(|e| setup_error("initialise", e))?;
    for c in creds.values() {
        self_test(&env.ep, c, &proposal).map_err(|e| setup_error("self-test", e))?;
    }
    admin.mark_ready(app_id).map_err(|e| setup_error("ready", e))?;
    Ok(Installed { creds })
}

pub(crate) fn source(env: &Env, cred: Credentials, topic: &str) -> Result<SourceConnector> {
    let schema = topic_schema(&*env.ep.discovery, &cred, topic)?;
    let clock: Arc<dyn Clock> = env.clock.clone();
    Ok(SourceConnector::new(cred, topic, schema, env.ep.broker.clone(), env.ep.security.clone(), clock))
}

pub(crate) fn sink(env: &Env, cred: Credentials, topic: &str) -> Result<SinkConnector> {
    let schema = topic_schema(&*env.ep.discovery, &cred, topic)?;
    let section = own_section(&*env.ep.broker, &cred, topic)?;
    let clock: Arc<dyn Clock> = env.clock.clone();
    Ok(SinkConnector::new(cred, topic, &section, schema, env.ep.broker.clone(), env.ep.security.clone(), clock))
}

pub(crate) const POLL_MAX: usize = 10_000;

/// Sleeps the configured wall time per tick.
pub(crate) fn pace(cfg: &ScenarioConfig) {
    if cfg.wall_ms_per_tick > 0 {
        std::thread::sleep(std::time::Duration::from_millis(cfg.wall_ms_per_tick));
    }
}
