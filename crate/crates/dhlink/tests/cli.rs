mod common;

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::sync::Arc;

use common::*;
use dhlink::api::Endpoints;
use dhlink::clock::SystemClock;
use dhlink::connector::{own_section, topic_schema, SinkConnector, SourceConnector};
use dhlink_core::log::TopicPolicy;
use serde_json::{json, Value};

struct Server {
    child: Child,
    core: String,
    security: String,
}

impl Server {
    fn start(data_dir: &Path) -> Server {
        let mut child = Command::new(bin("dhlink-server"))
            .args(["--data-dir", data_dir.to_str().unwrap()])
            .args(["--listen", "127.0.0.1:0", "--security-listen", "127.0.0.1:0"])
            .env("DHLINK_ADMIN_TOKEN", ADMIN)
            .env("DHLINK_SECURITY_ADMIN_TOKEN", SEC_ADMIN)
            .env("RUST_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
        let mut url = |tag: &str| {
            let l = lines.next().unwrap().unwrap();
            l.strip_prefix(tag).unwrap_or_else(|| panic!("unexpected line {l}")).trim().to_string()
        };
        let core = url("core");
        let security = url("security");
        Server { child, core, security }
    }

    fn endpoints(&self) -> Endpoints {
        Endpoints::remote(&self.core, &self.core, &self.security, None).unwrap()
    }

    fn admin_cmd(&self, admin_dir: &Path, args: &[&str]) -> Output {
        Command::new(bin("dhlink-admin"))
            .args(["--broker-url", &self.core, "--security-url", &self.security])
            .args(["--admin-token", ADMIN, "--security-admin-token", SEC_ADMIN])
            .args(["--data-dir", admin_dir.to_str().unwrap()])
            .args(args)
            .output()
            .unwrap()
    }

    fn kill9(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn json_out(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn records_survive_kill_9() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("platform");
    let s = Server::start(&data);
    let ep = s.endpoints();
    let mut admin = dhlink::admin::Admin::open(
        Some(&dir.path().join("admin")),
        ep.clone(),
        ADMIN,
        SEC_ADMIN,
        "itest",
        Arc::new(SystemClock),
    )
    .unwrap();
    install(&mut admin, &ep, "durable", proposal("durable", "src", &["dst"], TopicPolicy::retained_unlimited()));
    let schema = topic_schema(&*ep.discovery, &cred("src"), "durable").unwrap();
    let mut src =
        SourceConnector::new(cred("src"), "durable", schema, ep.broker.clone(), ep.security.clone(), Arc::new(SystemClock));
    for i in 0..200 {
        src.send(&json!({"patient": "p", "value": i})).unwrap();
    }
    drop(admin);
    s.kill9();

    let s = Server::start(&data);
    let ep = s.endpoints();
    let schema = topic_schema(&*ep.discovery, &cred("dst"), "durable").unwrap();
    let sid = own_section(&*ep.broker, &cred("dst"), "durable").unwrap();
    let mut sink =
        SinkConnector::new(cred("dst"), "durable", &sid, schema, ep.broker.clone(), ep.security.clone(), Arc::new(SystemClock));
    let got = sink.poll(1000).unwrap();
    assert_eq!(got.records.len(), 200);
    assert!(got.records.iter().enumerate().all(|(i, r)| r.offset == i as u64 && r.value["value"] == json!(i)));

    // the application record survives too
    let o = s.admin_cmd(&dir.path().join("admin"), &["app", "show", "durable"]);
    assert_eq!(json_out(&o)["state"], json!("working"));
}

#[test]
fn admin_cli_round_trip_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let s = Server::start(&dir.path().join("platform"));
    let adm = dir.path().join("admin");
    let p = proposal("cli-topic", "cli-src", &["cli-dst"], TopicPolicy::retained_unlimited());
    let file = dir.path().join("cli-app.json");
    std::fs::write(&file, serde_json::to_vec(&p).unwrap()).unwrap();
    let run = |args: &[&str]| s.admin_cmd(&adm, args);

    assert_eq!(json_out(&run(&["app", "propose", "--file", file.to_str().unwrap()]))["state"], json!("proposed"));
    assert_eq!(run(&["app", "propose", "--file", file.to_str().unwrap()]).status.code(), Some(3));
    assert_eq!(run(&["app", "ready", "cli-app"]).status.code(), Some(3));
    assert_eq!(json_out(&run(&["app", "approve", "cli-app"]))["state"], json!("initialising"));
    assert_eq!(run(&["app", "ready", "cli-app"]).status.code(), Some(4));
    for svc in ["cli-src", "cli-dst"] {
        json_out(&run(&["app", "self-test", "cli-app", "--service", svc, "--api-key", &key_of(svc)]));
    }
    assert_eq!(json_out(&run(&["app", "ready", "cli-app"]))["state"], json!("working"));

    let acl = json_out(&run(&["acl", "list"]));
    assert_eq!(acl.as_array().unwrap().len(), 2);
    let keys = json_out(&run(&["keys", "list"]));
    assert_eq!(keys.as_array().unwrap().len(), 1);
    let section = keys[0]["section"].as_str().unwrap().to_string();
    assert_eq!(run(&["keys", "generate", "cli-topic", &section]).status.code(), Some(3));
    let rotated = json_out(&run(&["keys", "rotate", "cli-topic", &section]));
    assert_ne!(rotated["keyId"], keys[0]["keyId"]);

    // manual provisioning
    json_out(&run(&["topic", "create", "side-topic", "--schema", "Reading:1", "--policy", "transient", "--max-age-seconds", "30"]));
    assert_eq!(run(&["topic", "create", "Side_Topic", "--schema", "Reading:1"]).status.code(), Some(2));
    assert_eq!(run(&["topic", "create", "other", "--schema", "Missing:1"]).status.code(), Some(2));
    json_out(&run(&["acl", "grant", "cli-src", "side-topic", "send"]));
    assert_eq!(run(&["acl", "grant", "cli-src", "side-topic", "receive"]).status.code(), Some(2));
    json_out(&run(&["acl", "revoke", "cli-src", "side-topic", "send"]));
    json_out(&run(&["topic", "delete", "side-topic"]));
    let topics = json_out(&run(&["topic", "list"]));
    assert_eq!(topics.as_array().unwrap().len(), 1);

    json_out(&run(&["service", "register", "probe", "--url", "http://probe.invalid"]));
    let st = json_out(&run(&["service", "status", "probe", "--set", "ready"]));
    assert_eq!(st["status"], json!("ready"));
    json_out(&run(&["service", "deregister", "probe"]));
    assert_ne!(run(&["service", "status", "probe"]).status.code(), Some(0));

    let o = run(&["app", "decommission", "cli-app"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: not-confirmed"));
    assert_eq!(json_out(&run(&["app", "decommission", "cli-app", "--confirm"]))["state"], json!("decommissioned"));
    assert!(json_out(&run(&["acl", "list"])).as_array().unwrap().is_empty());

    let bad = run(&["app", "propose", "--file", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(4));
}

#[test]
fn admin_cli_reports_unreachable_broker() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(bin("dhlink-admin"))
        .args(["--broker-url", "http://127.0.0.1:1", "--security-url", "http://127.0.0.1:1"])
        .args(["--admin-token", ADMIN, "--data-dir", dir.path().to_str().unwrap(), "topic", "list"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn scenario_cli_runs_and_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.json");
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"userCount": 8, "durationDays": 6}"#).unwrap();
    let o = Command::new(bin("dhlink-scenario"))
        .args(["run", "proximity", "--config", cfg.to_str().unwrap(), "--seed", "5", "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let verify = |p: &Path| Command::new(bin("dhlink-scenario")).args(["verify", p.to_str().unwrap()]).output().unwrap();
    assert!(verify(&out).status.success());

    let mut t: Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(t["seed"], json!(5));
    let events = t["events"].as_array_mut().unwrap();
    let i = events.iter().position(|e| e["action"] == json!("alert-raised")).unwrap();
    events.remove(i);
    let tampered = dir.path().join("tampered.json");
    std::fs::write(&tampered, serde_json::to_vec(&t).unwrap()).unwrap();
    let o = verify(&tampered);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL digest"));
}
