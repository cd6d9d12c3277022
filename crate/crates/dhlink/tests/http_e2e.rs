mod common;

use std::sync::Arc;

use common::*;
use dhlink::api::{Caller, Credentials};
use dhlink::clock::SystemClock;
use dhlink::connector::{own_section, topic_schema, ConnectorConfig, Role, SinkConnector, SourceConnector};
use dhlink::discovery::EntryStatus;
use dhlink::error::Code;
use dhlink_core::log::TopicPolicy;
use serde_json::json;

fn connectors(live: &Live, topic: &str, sender: &str, receiver: &str) -> (SourceConnector, SinkConnector) {
    let ep = live.endpoints();
    let sc = cred(sender);
    let rc = cred(receiver);
    let schema = topic_schema(&*ep.discovery, &sc, topic).unwrap();
    let src = SourceConnector::new(sc, topic, schema.clone(), ep.broker.clone(), ep.security.clone(), Arc::new(SystemClock));
    let sid = own_section(&*ep.broker, &rc, topic).unwrap();
    let sink = SinkConnector::new(rc, topic, &sid, schema, ep.broker.clone(), ep.security.clone(), Arc::new(SystemClock));
    (src, sink)
}

#[test]
fn lifecycle_and_messaging_over_http() {
    let live = Live::plain();
    let ep = live.endpoints();
    let mut admin = live.admin();
    install(&mut admin, &ep, "vitals", proposal("readings", "wearable", &["clinic", "research"], TopicPolicy::retained_unlimited()));

    let services = ep.discovery.query_services(&Caller::Service(cred("clinic")), "").unwrap();
    assert!(services.iter().all(|s| s.status == EntryStatus::Ready));

    let (mut src, mut clinic) = connectors(&live, "readings", "wearable", "clinic");
    for i in 0..50 {
        let out = src.send(&json!({"patient": format!("p{i}"), "value": i})).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|o| o.encrypted && o.error.is_none()));
    }
    let got = clinic.poll(100).unwrap();
    assert_eq!(got.records.len(), 50);
    for (i, r) in got.records.iter().enumerate() {
        assert_eq!(r.value, json!({"patient": format!("p{i}"), "value": i}));
        assert!(r.encrypted);
    }
    assert!(clinic.poll(100).unwrap().records.is_empty());

    // the broker never sees plaintext
    let raw = ep.broker.fetch(&cred("clinic"), "readings", clinic.section(), 0, 1).unwrap();
    assert!(dhlink_core::value::canonical_decode(&raw[0].envelope.payload).is_err());

    // a receiver cannot read another receiver's section
    let research = own_section(&*ep.broker, &cred("research"), "readings").unwrap();
    let e = ep.broker.fetch(&cred("clinic"), "readings", &research, 0, 1).unwrap_err();
    assert_eq!(e.code, Code::NotSectionOwner);

    let report = admin.decommission("vitals", true).unwrap();
    assert!(!report.removed.is_empty());
    assert!(ep.broker.list_topics(ADMIN).unwrap().is_empty());
    assert!(ep.security.list_acl(SEC_ADMIN).unwrap().is_empty());
}

#[test]
fn bad_credentials_and_tokens_are_rejected() {
    let live = Live::plain();
    let ep = live.endpoints();
    let mut admin = live.admin();
    install(&mut admin, &ep, "app", proposal("t1", "a", &["b"], TopicPolicy::retained_unlimited()));
    let wrong = Credentials::new("b", "nope");
    let e = ep.broker.fetch(&wrong, "t1", "sec-0000", 0, 1).unwrap_err();
    assert_eq!(e.code, Code::BadCredential);
    let e = ep.broker.list_topics("not-the-token").unwrap_err();
    assert_eq!(e.code, Code::NotAdmin);
    let e = ep.security.list_acl(ADMIN).unwrap_err();
    assert_eq!(e.code, Code::NotAdmin);
}

#[test]
fn connectors_from_config_files() {
    let live = Live::plain();
    let ep = live.endpoints();
    let mut admin = live.admin();
    install(&mut admin, &ep, "app", proposal("cfg-topic", "a", &["b"], TopicPolicy::retained_unlimited()));
    let dir = tempfile::tempdir().unwrap();
    let mk = |svc: &str, role| ConnectorConfig {
        service_id: svc.into(),
        api_key: key_of(svc),
        topic: "cfg-topic".into(),
        role,
        section_id: None,
        broker_url: live.core.url(),
        security_url: live.security.url(),
        plaintext_fallback: false,
        cache_ttl_seconds: 300,
        poll_interval_ms: 10,
        ca_cert: None,
        state_file: Some(dir.path().join(format!("{svc}.state.json"))),
    };
    let path = dir.path().join("sink.json");
    std::fs::write(&path, serde_json::to_vec(&mk("b", Role::Sink)).unwrap()).unwrap();
    let mut src = SourceConnector::from_config(&mk("a", Role::Source)).unwrap();
    for i in 0..10 {
        src.send(&json!({"patient": "p", "value": i})).unwrap();
    }
    let mut sink = SinkConnector::from_config(&ConnectorConfig::load(&path).unwrap()).unwrap();
    assert_eq!(sink.poll(4).unwrap().records.len(), 4);
    drop(sink);
    // cursor survives a restart
    let mut sink = SinkConnector::from_config(&ConnectorConfig::load(&path).unwrap()).unwrap();
    let rest = sink.poll(100).unwrap();
    assert_eq!(rest.records.len(), 6);
    assert_eq!(rest.records[0].value["value"], json!(4));
    assert!(SinkConnector::from_config(&mk("a", Role::Source)).is_err());
}

#[test]
fn https_with_pinned_ca() {
    let dir = tempfile::tempdir().unwrap();
    let live = Live::start(None, Arc::new(SystemClock), Some(dir.path()));
    assert!(live.core.url().starts_with("https://"));
    let ep = live.endpoints();
    let mut admin = live.admin();
    install(&mut admin, &ep, "app", proposal("tls-topic", "a", &["b"], TopicPolicy::retained_unlimited()));
    let (mut src, mut sink) = connectors(&live, "tls-topic", "a", "b");
    src.send(&json!({"patient": "p", "value": 1})).unwrap();
    assert_eq!(sink.poll(10).unwrap().records[0].value["value"], json!(1));

    // without the CA bundle the certificate is not trusted
    let u = live.core.url();
    let untrusted = dhlink::api::Endpoints::remote(&u, &u, &live.security.url(), None).unwrap();
    let e = untrusted.broker.list_topics(ADMIN).unwrap_err();
    assert_eq!(e.code, Code::BrokerUnreachable);
}

#[test]
fn unreachable_endpoints_map_to_connectivity_codes() {
    let ep = dhlink::api::Endpoints::remote("http://127.0.0.1:1", "http://127.0.0.1:1", "http://127.0.0.1:2", None).unwrap();
    assert_eq!(ep.broker.list_topics(ADMIN).unwrap_err().code, Code::BrokerUnreachable);
    assert_eq!(ep.security.list_acl(SEC_ADMIN).unwrap_err().code, Code::EndpointUnreachable);
    assert_eq!(Code::BrokerUnreachable.exit_code(), 4);
}
