//! Runs the broker and discovery on one listener and the security service
//! on another.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::Parser;

use dhlink::api::{BrokerApi, DiscoveryApi, SecurityApi};
use dhlink::clock::{Clock, SystemClock};
use dhlink::error::{Code, Error, Result};
use dhlink::http::server::{core_router, security_router, spawn, TlsFiles};
use dhlink::platform::Platform;

#[derive(Parser, Debug)]
#[command(name = "dhlink-server", version, about = "DHLink broker, discovery and security services")]
struct Args {
    /// Directory for section logs, the registry and the key store.
    /// Everything stays in memory when omitted.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: String,
    #[arg(long, default_value = "127.0.0.1:8081")]
    security_listen: String,
    #[arg(long, env = "DHLINK_ADMIN_TOKEN")]
    admin_token: String,
    /// Defaults to the platform admin token.
    #[arg(long, env = "DHLINK_SECURITY_ADMIN_TOKEN")]
    security_admin_token: Option<String>,
    #[arg(long, requires = "tls_key")]
    tls_cert: Option<PathBuf>,
    #[arg(long, requires = "tls_cert")]
    tls_key: Option<PathBuf>,
    /// Retention sweep period.
    #[arg(long, default_value_t = 1000)]
    sweep_ms: u64,
}

fn run(args: Args) -> Result<()> {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let sec_token = args.security_admin_token.clone().unwrap_or_else(|| args.admin_token.clone());
    let platform = Platform::open(args.data_dir.as_deref(), &args.admin_token, &sec_token, clock.clone())?;
    let tls = match (&args.tls_cert, &args.tls_key) {
        (Some(cert), Some(key)) => Some(TlsFiles { cert: cert.clone(), key: key.clone() }),
        _ => None,
    };
    let broker: Arc<dyn BrokerApi> = platform.broker.clone();
    let discovery: Arc<dyn DiscoveryApi> = platform.discovery.clone();
    let security: Arc<dyn SecurityApi> = platform.security.clone();
    let core = spawn(core_router(broker, discovery), &args.listen, tls.clone())?;
    let sec = spawn(security_router(security), &args.security_listen, tls)?;
    println!("core {}", core.url());
    println!("security {}", sec.url());

    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    rt.block_on(async {
        let mut tick = tokio::time::interval(Duration::from_millis(args.sweep_ms.max(10)));
        loop {
            tokio::select! {
                _ = tokio::signal::ctrl_c() => break,
                _ = tick.tick() => {
                    if let Err(e) = platform.broker.sweep(clock.now()) {
                        tracing::warn!("retention sweep: {e}");
                    }
                }
            }
        }
    });
    core.shutdown();
    sec.shutdown();
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let args = Args::parse();
    if args.admin_token.is_empty() {
        eprintln!("error: {}", Error::new(Code::BadRequest, "admin token must not be empty"));
        return ExitCode::from(2);
    }
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code.exit_code() as u8)
        }
    }
}
