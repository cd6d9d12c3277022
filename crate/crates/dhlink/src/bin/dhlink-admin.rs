//! Administrative command line for a running platform.
//!
//! Output is JSON on stdout. Exit codes: 0 success, 2 validation error,
//! 3 state error, 4 connectivity error.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use dhlink::admin::{self_test, Admin};
use dhlink::api::{Caller, Credentials, Endpoints};
use dhlink::broker::TopicSpec;
use dhlink::clock::SystemClock;
use dhlink::discovery::{EntryKind, EntryStatus, ServiceInfo};
use dhlink::error::{Code, Error, Result};
use dhlink_core::acl::{AccessControlEntry, Operation};
use dhlink_core::lifecycle::Proposal;
use dhlink_core::log::TopicPolicy;
use dhlink_core::schema::SchemaRef;

#[derive(Parser, Debug)]
#[command(name = "dhlink-admin", version, about = "Administer a DHLink platform")]
struct Cli {
    #[arg(long, global = true, env = "DHLINK_BROKER_URL", default_value = "http://127.0.0.1:8080")]
    broker_url: String,
    /// Defaults to the broker url.
    #[arg(long, global = true, env = "DHLINK_DISCOVERY_URL")]
    discovery_url: Option<String>,
    #[arg(long, global = true, env = "DHLINK_SECURITY_URL", default_value = "http://127.0.0.1:8081")]
    security_url: String,
    #[arg(long, global = true, env = "DHLINK_ADMIN_TOKEN", default_value = "")]
    admin_token: String,
    /// Defaults to the admin token.
    #[arg(long, global = true, env = "DHLINK_SECURITY_ADMIN_TOKEN")]
    security_admin_token: Option<String>,
    /// Holds the application records and the admin lock.
    #[arg(long, global = true, env = "DHLINK_ADMIN_DIR", default_value = "dhlink-admin")]
    data_dir: PathBuf,
    /// PEM bundle trusted for HTTPS endpoints.
    #[arg(long, global = true)]
    ca_cert: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Application lifecycle.
    #[command(subcommand)]
    App(AppCmd),
    #[command(subcommand)]
    Topic(TopicCmd),
    #[command(subcommand)]
    Acl(AclCmd),
    #[command(subcommand)]
    Keys(KeysCmd),
    #[command(subcommand)]
    Service(ServiceCmd),
}

#[derive(Subcommand, Debug)]
enum AppCmd {
    /// Records a proposal document.
    Propose {
        #[arg(long)]
        file: PathBuf,
        /// Defaults to the file stem.
        #[arg(long)]
        app_id: Option<String>,
    },
    /// Approves and provisions everything the proposal needs.
    Approve { app_id: String },
    /// Runs the connectivity self-test on behalf of one service.
    SelfTest {
        app_id: String,
        #[arg(long)]
        service: String,
        #[arg(long, env = "DHLINK_API_KEY")]
        api_key: String,
    },
    /// Moves an initialised application to working once its services checked in.
    Ready { app_id: String },
    Decommission {
        app_id: String,
        /// Confirms that developer and administrator agreed.
        #[arg(long)]
        confirm: bool,
    },
    Show { app_id: String },
    List,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Policy {
    Realtime,
    Retained,
    Transient,
}

#[derive(Subcommand, Debug)]
enum TopicCmd {
    Create {
        name: String,
        /// Schema as `name:version`.
        #[arg(long)]
        schema: String,
        #[arg(long, value_enum, default_value = "retained")]
        policy: Policy,
        #[arg(long)]
        max_age_seconds: Option<i64>,
        #[arg(long)]
        buffer_size: Option<usize>,
        /// Allocates a section for each receiver.
        #[arg(long = "receiver")]
        receivers: Vec<String>,
    },
    Delete {
        name: String,
    },
    List,
    /// Marks a topic ready for traffic.
    Ready {
        name: String,
    },
}

#[derive(Args, Debug)]
struct AclArgs {
    service: String,
    topic: String,
    #[arg(value_parser = parse_op)]
    operation: Operation,
    /// Required for receive entries.
    #[arg(long)]
    section: Option<String>,
}

#[derive(Subcommand, Debug)]
enum AclCmd {
    Grant(AclArgs),
    Revoke(AclArgs),
    List,
}

#[derive(Subcommand, Debug)]
enum KeysCmd {
    Generate { topic: String, section: String },
    Rotate { topic: String, section: String },
    List,
}

#[derive(Subcommand, Debug)]
enum ServiceCmd {
    Register {
        name: String,
        #[arg(long)]
        url: String,
        #[arg(long, default_value = "")]
        description: String,
        #[arg(long, default_value = "")]
        owner_app: String,
    },
    Deregister {
        name: String,
    },
    /// Shows a service, or sets its status with `--set`.
    Status {
        name: String,
        #[arg(long, value_parser = parse_status)]
        set: Option<EntryStatus>,
    },
}

fn parse_op(s: &str) -> std::result::Result<Operation, String> {
    match s {
        "send" => Ok(Operation::Send),
        "receive" => Ok(Operation::Receive),
        _ => Err(format!("expected send or receive, got `{s}`")),
    }
}

fn parse_status(s: &str) -> std::result::Result<EntryStatus, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("expected initialising, ready or retired, got `{s}`"))
}

fn bad(m: impl Into<String>) -> Error {
    Error::new(Code::BadRequest, m)
}

fn print<T: Serialize>(v: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(v).map_err(|e| Error::new(Code::Internal, e.to_string()))?;
    println!("{s}");
    Ok(())
}

fn acl_entry(a: AclArgs) -> Result<AccessControlEntry> {
    let e = AccessControlEntry { service_id: a.service, topic: a.topic, operation: a.operation, section_id: a.section };
    if !e.is_well_formed() {
        return Err(bad("receive entries need --section; send entries take none"));
    }
    Ok(e)
}

fn run(cli: Cli) -> Result<()> {
    let pem = cli.ca_cert.as_ref().map(std::fs::read).transpose()?;
    let disc = cli.discovery_url.as_deref().unwrap_or(&cli.broker_url);
    let ep = Endpoints::remote(&cli.broker_url, disc, &cli.security_url, pem.as_deref())?;
    let tok = cli.admin_token.as_str();
    let sec = cli.security_admin_token.as_deref().unwrap_or(tok);
    let user = std::env::var("USER").unwrap_or_else(|_| "admin".into());
    let mut admin = Admin::open(Some(&cli.data_dir), ep.clone(), tok, sec, &user, Arc::new(SystemClock))?;

    match cli.cmd {
        Cmd::App(c) => match c {
            AppCmd::Propose { file, app_id } => {
                let bytes = std::fs::read(&file)?;
                let p: Proposal = serde_json::from_slice(&bytes)
                    .map_err(|e| Error::new(Code::MalformedProposal, format!("{}: {e}", file.display())))?;
                let id = match app_id {
                    Some(id) => id,
                    None => file.file_stem().and_then(|s| s.to_str()).ok_or_else(|| bad("cannot derive an app id"))?.into(),
                };
                print(admin.propose(&id, p)?)
            }
            AppCmd::Approve { app_id } => print(&admin.approve_and_initialise(&app_id)?),
            AppCmd::SelfTest { app_id, service, api_key } => {
                let p = admin.app(&app_id)?.proposal.clone();
                self_test(&ep, &Credentials::new(&service, api_key), &p)?;
                print(&json!({ "service": service, "selfTest": "passed" }))
            }
            AppCmd::Ready { app_id } => {
                admin.mark_ready(&app_id)?;
                print(admin.app(&app_id)?)
            }
            AppCmd::Decommission { app_id, confirm } => print(&admin.decommission(&app_id, confirm)?),
            AppCmd::Show { app_id } => print(admin.app(&app_id)?),
            AppCmd::List => {
                let v: Vec<_> = admin.apps().map(|a| json!({ "appId": a.app_id, "state": a.state })).collect();
                print(&v)
            }
        },
        Cmd::Topic(c) => match c {
            TopicCmd::Create { name, schema, policy, max_age_seconds, buffer_size, receivers } => {
                let (sname, ver) = schema.rsplit_once(':').ok_or_else(|| bad("--schema takes name:version"))?;
                let ver: u32 = ver.parse().map_err(|_| bad("schema version must be a number"))?;
                let policy = match policy {
                    Policy::Realtime => TopicPolicy::Realtime { buffer_size: buffer_size.unwrap_or(1024) },
                    Policy::Retained => TopicPolicy::Retained { max_age_seconds },
                    Policy::Transient => TopicPolicy::Transient { max_age_seconds: max_age_seconds.unwrap_or(60) },
                };
                let spec = TopicSpec { name: name.clone(), policy, schema: SchemaRef::new(sname, ver) };
                ep.broker.create_topic(tok, &spec)?;
                for r in &receivers {
                    ep.broker.allocate_section(&Caller::Admin(tok.into()), &name, r)?;
                }
                let view = ep.broker.list_topics(tok)?.into_iter().find(|t| t.name == name);
                print(&view)
            }
            TopicCmd::Delete { name } => {
                ep.broker.delete_topic(tok, &name)?;
                print(&json!({ "deleted": name }))
            }
            TopicCmd::List => print(&ep.broker.list_topics(tok)?),
            TopicCmd::Ready { name } => {
                ep.broker.set_topic_status(tok, &name, dhlink::broker::TopicStatus::Ready)?;
                print(&json!({ "ready": name }))
            }
        },
        Cmd::Acl(c) => match c {
            AclCmd::Grant(a) => {
                let e = acl_entry(a)?;
                ep.security.add_acl(sec, &e)?;
                print(&e)
            }
            AclCmd::Revoke(a) => {
                let e = acl_entry(a)?;
                ep.security.remove_acl(sec, &e)?;
                print(&e)
            }
            AclCmd::List => print(&ep.security.list_acl(sec)?),
        },
        Cmd::Keys(c) => match c {
            KeysCmd::Generate { topic, section } => print(&ep.security.generate_key(sec, &topic, &section, false)?),
            KeysCmd::Rotate { topic, section } => print(&ep.security.generate_key(sec, &topic, &section, true)?),
            KeysCmd::List => print(&ep.security.list_keys(sec)?),
        },
        Cmd::Service(c) => match c {
            ServiceCmd::Register { name, url, description, owner_app } => {
                let info = ServiceInfo { name, description, url, status: EntryStatus::Initialising, owner_app_id: owner_app };
                ep.discovery.register_service(tok, &info)?;
                print(&info)
            }
            ServiceCmd::Deregister { name } => {
                ep.discovery.remove(tok, EntryKind::Service, &name)?;
                print(&json!({ "deregistered": name }))
            }
            ServiceCmd::Status { name, set } => {
                if let Some(s) = set {
                    ep.discovery.set_status(tok, EntryKind::Service, &name, s)?;
                }
                let found = ep.discovery.query_services(&Caller::Admin(tok.into()), &name)?;
                let hit = found.into_iter().find(|s| s.name == name).ok_or_else(|| {
                    Error::new(Code::UnknownName, format!("no service `{name}`"))
                })?;
                print(&hit)
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code.exit_code() as u8)
        }
    }
}
