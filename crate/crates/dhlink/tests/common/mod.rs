#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use dhlink::admin::{self_test, Admin};
use dhlink::api::{BrokerApi, Credentials, DiscoveryApi, Endpoints, SecurityApi};
use dhlink::clock::{Clock, SystemClock};
use dhlink::http::server::{core_router, security_router, spawn, ServerHandle, TlsFiles};
use dhlink::platform::Platform;
use dhlink_core::deid::fingerprint;
use dhlink_core::lifecycle::{Proposal, ProposedService, ProposedTopic};
use dhlink_core::log::TopicPolicy;
use dhlink_core::schema::{DataSchema, FieldKind, FieldSpec};

pub const ADMIN: &str = "itest-admin";
pub const SEC_ADMIN: &str = "itest-sec-admin";

pub fn reading_schema() -> DataSchema {
    DataSchema::new(
        "Reading",
        1,
        vec![
            FieldSpec::new("patient", FieldKind::String, true),
            FieldSpec::new("value", FieldKind::Integer, true),
            FieldSpec::new("note", FieldKind::String, false),
        ],
    )
}

pub fn key_of(service: &str) -> String {
    format!("key-{service}")
}

pub fn cred(service: &str) -> Credentials {
    Credentials::new(service, key_of(service))
}

/// One topic, one sender, any number of receivers.
pub fn proposal(topic: &str, sender: &str, receivers: &[&str], policy: TopicPolicy) -> Proposal {
    let mut names = vec![sender.to_string()];
    names.extend(receivers.iter().map(|r| r.to_string()));
    Proposal {
        description: format!("{topic} pipeline"),
        microservices: names
            .iter()
            .map(|n| ProposedService {
                name: n.clone(),
                description: String::new(),
                url: format!("http://{n}.invalid"),
                credential_fingerprint: fingerprint(&key_of(n)),
            })
            .collect(),
        schemas: vec![reading_schema()],
        topics: vec![ProposedTopic {
            name: topic.into(),
            description: String::new(),
            schema: reading_schema().reference(),
            retention: policy,
            senders: vec![sender.into()],
            receivers: receivers.iter().map(|r| r.to_string()).collect(),
        }],
        sharing: String::new(),
    }
}

/// Propose, approve, self-test every service and mark ready.
pub fn install(admin: &mut Admin, ep: &Endpoints, app: &str, p: Proposal) {
    admin.propose(app, p.clone()).unwrap();
    admin.approve_and_initialise(app).unwrap();
    for s in &p.microservices {
        self_test(ep, &cred(&s.name), &p).unwrap();
    }
    admin.mark_ready(app).unwrap();
}

/// A platform served over loopback HTTP(S).
pub struct Live {
    pub platform: Arc<Platform>,
    pub core: ServerHandle,
    pub security: ServerHandle,
    pub ca_pem: Option<Vec<u8>>,
}

impl Live {
    pub fn start(data_dir: Option<&Path>, clock: Arc<dyn Clock>, tls_dir: Option<&Path>) -> Live {
        let platform = Arc::new(Platform::open(data_dir, ADMIN, SEC_ADMIN, clock).unwrap());
        let (tls, ca_pem) = match tls_dir {
            Some(d) => {
                let (files, pem) = self_signed(d);
                (Some(files), Some(pem))
            }
            None => (None, None),
        };
        let b: Arc<dyn BrokerApi> = platform.broker.clone();
        let di: Arc<dyn DiscoveryApi> = platform.discovery.clone();
        let s: Arc<dyn SecurityApi> = platform.security.clone();
        let core = spawn(core_router(b, di), "127.0.0.1:0", tls.clone()).unwrap();
        let security = spawn(security_router(s), "127.0.0.1:0", tls).unwrap();
        Live { platform, core, security, ca_pem }
    }

    pub fn plain() -> Live {
        Self::start(None, Arc::new(SystemClock), None)
    }

    pub fn endpoints(&self) -> Endpoints {
        let u = self.core.url();
        Endpoints::remote(&u, &u, &self.security.url(), self.ca_pem.as_deref()).unwrap()
    }

    pub fn admin(&self) -> Admin {
        Admin::open(None, self.endpoints(), ADMIN, SEC_ADMIN, "itest", Arc::new(SystemClock)).unwrap()
    }
}

/// Writes a self-signed certificate for 127.0.0.1 and localhost.
pub fn self_signed(dir: &Path) -> (TlsFiles, Vec<u8>) {
    let ck = rcgen::generate_simple_self_signed(vec!["127.0.0.1".into(), "localhost".into()]).unwrap();
    let cert = dir.join("cert.pem");
    let key = dir.join("key.pem");
    std::fs::write(&cert, ck.cert.pem()).unwrap();
    std::fs::write(&key, ck.key_pair.serialize_pem()).unwrap();
    (TlsFiles { cert, key }, ck.cert.pem().into_bytes())
}

pub fn bin(name: &str) -> PathBuf {
    match name {
        "dhlink-server" => PathBuf::from(env!("CARGO_BIN_EXE_dhlink-server")),
        "dhlink-admin" => PathBuf::from(env!("CARGO_BIN_EXE_dhlink-admin")),
        "dhlink-scenario" => PathBuf::from(env!("CARGO_BIN_EXE_dhlink-scenario")),
        _ => panic!("unknown binary {name}"),
    }
}
