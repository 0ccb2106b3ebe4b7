use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use climb_core::engine::{Engine, UserChannel, UserReply};
use climb_core::harness::persona::{PersonaScript, PersonaUser};
use climb_core::harness::run::{run_harness, write_results, HarnessConfig};
use climb_core::llm::endpoint::{EndpointConfig, EndpointPolicy};
use climb_core::llm::{ActionPolicy, ScriptedPolicy};
use climb_core::reasoning::EpisodeConfig;
use climb_core::session::api::{AppState, PolicyFactory};
use climb_core::session::archive::{persist, resume};
use climb_core::session::report::render_report;
use climb_core::session::store::{BlobDir, Clock, NewSession, SESSION_ROOT_ENV};
use climb_core::session::{LiveSession, SessionMode, SessionRecord, SessionStore, UserRequest};

#[derive(Parser)]
#[command(name = "climb", version, about = "Plan-driven, human-in-the-loop predictive modeling sessions")]
struct Cli {
    /// Directory holding one subdirectory per session.
    #[arg(long, global = true, env = SESSION_ROOT_ENV, default_value = "sessions")]
    session_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the HTTP and WebSocket API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// `endpoint` or `scripted:FILE`.
        #[arg(long, default_value = "endpoint")]
        policy: String,
    },
    /// Run a session headless. Questions go to the terminal unless a
    /// persona file answers them.
    Run {
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        /// `endpoint` or `scripted:FILE`.
        #[arg(long, default_value = "endpoint")]
        policy: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "climb")]
        mode: String,
        #[arg(long)]
        persona: Option<PathBuf>,
        #[arg(long, default_value = "")]
        problem: String,
        /// Timestamps derived from sequence numbers, for reproducible logs.
        #[arg(long)]
        logical_clock: bool,
    },
    /// Run persona replicates and write a comparison report.
    Harness {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        replicates: usize,
        /// May be repeated; defaults to both modes.
        #[arg(long)]
        mode: Vec<String>,
        #[arg(long, default_value = "harness_results")]
        out: PathBuf,
    },
    /// Regenerate and print the final report of a session.
    Report { session_id: String },
    /// Write a self-contained archive of a session.
    Persist {
        session_id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify and import an archive; continue the session when a policy is
    /// given.
    Resume {
        archive: PathBuf,
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        persona: Option<PathBuf>,
    },
}

fn policy_from(spec: &str) -> Result<Box<dyn ActionPolicy>> {
    if spec == "endpoint" {
        return Ok(Box::new(EndpointPolicy::new(EndpointConfig::from_env())?));
    }
    if let Some(path) = spec.strip_prefix("scripted:") {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading policy script {path}"))?;
        let script: ScriptedPolicy = serde_json::from_str(&text).with_context(|| format!("parsing policy script {path}"))?;
        return Ok(Box::new(script));
    }
    bail!("unknown policy `{spec}`; use `endpoint` or `scripted:FILE`")
}

fn parse_mode(s: &str) -> Result<SessionMode> {
    SessionMode::parse(s).with_context(|| format!("unknown mode `{s}`; use climb or baseline"))
}

/// Answers requests from the terminal.
struct TerminalUser;

impl UserChannel for TerminalUser {
    fn reply(&mut self, request: &UserRequest, _record: &SessionRecord) -> UserReply {
        let hint = match request {
            UserRequest::Validation { .. } => " [yes/no/skip/retry/abort]",
            UserRequest::AttemptsExhausted { .. } => " [skip/retry/abort]",
            _ => "",
        };
        print!("\n{}{hint}\n> ", request.prompt_text());
        let _ = std::io::stdout().flush();
        let mut line = String::new();
        match std::io::stdin().lock().read_line(&mut line) {
            Ok(0) | Err(_) => return UserReply::Abort("input closed".into()),
            Ok(_) => {}
        }
        let text = line.trim().to_string();
        match (request, text.to_ascii_lowercase().as_str()) {
            (_, "abort") => UserReply::Abort("aborted by the user".into()),
            (UserRequest::Validation { .. }, "skip") => UserReply::Skip,
            (UserRequest::Validation { .. }, "retry") => UserReply::Retry,
            (UserRequest::Validation { .. }, "no" | "n") => UserReply::Validate { approved: false, comment: None },
            _ => UserReply::Answer(text),
        }
    }
}

fn user_from(persona: Option<&Path>) -> Result<Box<dyn UserChannel>> {
    match persona {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading persona {}", p.display()))?;
            Ok(Box::new(PersonaUser::new(PersonaScript::from_json(&text)?)))
        }
        None => Ok(Box::new(TerminalUser)),
    }
}

fn run_engine(session: LiveSession, policy: Box<dyn ActionPolicy>, user: Box<dyn UserChannel>) -> Result<()> {
    let mut session = session;
    session.observe(|e| tracing::debug!(seq = e.seq, kind = e.body.kind(), "event"));
    let mut engine = Engine::new(session, policy, user);
    let status = engine.run()?;
    let session = engine.into_session();
    let record = session.record();
    println!("session {} finished: {:?}", record.session_id(), status);
    println!("workdir: {}", session.workdir().display());
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt().with_env_filter(tracing_subscriber::EnvFilter::from_default_env()).with_writer(std::io::stderr).init();
    let cli = Cli::parse();
    let store = SessionStore::new(&cli.session_root).with_context(|| format!("session root {}", cli.session_root.display()))?;
    match cli.command {
        Command::Serve { bind, policy } => {
            policy_from(&policy)?;
            let factory: PolicyFactory = Arc::new(move |_| policy_from(&policy).map_err(|e| e.to_string()));
            let state = AppState::new(store, factory);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(bind).await?;
                eprintln!("listening on http://{}", listener.local_addr()?);
                climb_core::session::api::serve(listener, state).await
            })?;
        }
        Command::Run { plan, dataset, policy, seed, mode, persona, problem, logical_clock } => {
            let bytes = std::fs::read(&dataset).with_context(|| format!("reading {}", dataset.display()))?;
            let name = dataset.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "data.csv".into());
            let mut spec = NewSession::new(&name, bytes);
            if let Some(p) = plan {
                spec.plan_document = std::fs::read_to_string(&p).with_context(|| format!("reading plan {}", p.display()))?;
            }
            spec.mode = parse_mode(&mode)?;
            if spec.mode == SessionMode::Baseline {
                spec.episode_config = EpisodeConfig::unguarded();
            }
            spec.seed = seed;
            spec.policy = policy.clone();
            spec.problem_statement = problem;
            if logical_clock {
                spec.clock = Clock::Logical;
            }
            let policy = policy_from(&policy)?;
            let user = user_from(persona.as_deref())?;
            run_engine(store.create(spec)?, policy, user)?;
        }
        Command::Harness { config, replicates, mode, out } => {
            let config = match config {
                Some(p) => HarnessConfig::from_json(&std::fs::read_to_string(&p)?)?,
                None => {
                    let modes = if mode.is_empty() {
                        vec![SessionMode::Climb, SessionMode::Baseline]
                    } else {
                        mode.iter().map(|m| parse_mode(m)).collect::<Result<_>>()?
                    };
                    HarnessConfig::synthetic(modes, replicates)
                }
            };
            let results = run_harness(&config, &store)?;
            let (report, json) = write_results(&results, &out)?;
            print!("{}", results.table.to_markdown());
            println!("\nwrote {} and {}", report.display(), json.display());
        }
        Command::Report { session_id } => {
            let record = store.load(&session_id)?;
            print!("{}", render_report(&record, &BlobDir::of_workdir(&store.workdir(&session_id))));
        }
        Command::Persist { session_id, out } => {
            let archive = persist(&store.workdir(&session_id), &out)?;
            println!("wrote {} ({} blobs, checksum {})", out.display(), archive.blobs.len(), archive.checksum);
        }
        Command::Resume { archive, policy, persona } => {
            let (record, dir) = resume(&store, &archive)?;
            println!("imported {} into {}", record.session_id(), dir.display());
            if let Some(p) = policy {
                let session = LiveSession::open(&dir, true, Clock::System)?;
                run_engine(session, policy_from(&p)?, user_from(persona.as_deref())?)?;
            }
        }
    }
    Ok(())
}
