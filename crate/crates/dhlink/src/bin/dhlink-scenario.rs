//! Runs the scripted scenarios and checks their transcripts.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dhlink::error::{Code, Error, Result};
use dhlink::scenario::{self, verify, Env, ScenarioConfig, ScenarioKind, Transcript};

#[derive(Parser, Debug)]
#[command(name = "dhlink-scenario", version, about = "Scripted DHLink scenarios")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Runs a scenario and writes its transcript.
    Run {
        /// ai2-mindtick or proximity
        scenario: ScenarioKind,
        /// Scenario config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "transcript.json")]
        out: PathBuf,
        /// Persists the in-process platform and actor stores here.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Extra questionnaire definitions.
        #[arg(long)]
        questionnaire_dir: Option<PathBuf>,
    },
    /// Re-runs the oracles against a transcript. Exits 0 iff all checks pass.
    Verify { transcript: PathBuf },
}

fn load_config(path: Option<&Path>) -> Result<ScenarioConfig> {
    let Some(p) = path else { return Ok(ScenarioConfig::default()) };
    let bytes = std::fs::read(p)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::new(Code::BadRequest, format!("{}: {e}", p.display())))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Run { scenario: kind, config, seed, out, data_dir, questionnaire_dir } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let mut env = Env::for_config(&cfg, data_dir.as_deref())?;
            if let Some(q) = &questionnaire_dir {
                env = env.with_questionnaire_dir(q);
            }
            let t = scenario::run(kind, &cfg, &env)?;
            let json = serde_json::to_vec_pretty(&t).map_err(|e| Error::new(Code::Internal, e.to_string()))?;
            std::fs::write(&out, json)?;
            println!("{} seed={} events={} digest={} wallMs={}", kind, t.seed, t.events.len(), t.digest, t.wall_ms);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Verify { transcript } => {
            let t = Transcript::load(&transcript)?;
            let report = verify::checks(&t);
            print!("{report}");
            Ok(if report.ok() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code.exit_code() as u8)
        }
    }
}
