//! Command-line entry points. Every command is non-interactive, prints JSON
//! on stdout (a table with `--pretty`), and reports failures as one JSON
//! object on stderr with exit status 1. Usage errors exit with status 2.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::calendar::CalendarStore;
use crate::checks::{self, Criterion};
use crate::clock::{Clock, RebasedClock, SystemClock};
use crate::sim::{self, Simulation, WorkerMode};
use crate::taskboard::http;
use crate::tier1::classifier::{evaluate, group_ballots};
use crate::tier1::corpus::{read_jsonl, write_jsonl};
use crate::tier1::{generate_corpus, train, BallotClassifier, FeatureDictionary, TrainParams};
use crate::workflow::{Agent, AgentConfig, Desk};

#[derive(Debug, Parser)]
#[command(name = "meetsched", version, about = "Email meeting scheduling with tiered worker escalation")]
pub struct Cli {
    /// Agent configuration file (TOML).
    #[arg(long, global = true, env = "SCHED_CONFIG")]
    pub config: Option<PathBuf>,
    /// Human-readable output instead of JSON.
    #[arg(long, global = true)]
    pub pretty: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write metrics.json, requests.csv, transcript.jsonl and state/.
    Simulate {
        /// Catalog name or path to a scenario JSON file.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        /// Leave tier-2/3 tasks to people using the HTTP API instead of scripted workers.
        #[arg(long, alias = "live_workers")]
        live_workers: bool,
        /// Port for the task API in live mode.
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
    /// Serve the task API for the worker console.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// State directory to load (if present) and to save after every change.
        #[arg(long)]
        snapshot_dir: PathBuf,
    },
    /// Write a synthetic labeled ballot-response corpus (JSON lines).
    GenCorpus {
        #[arg(long, default_value_t = crate::tier1::DEFAULT_CORPUS_SEED)]
        seed: u64,
        #[arg(long, default_value_t = crate::tier1::DEFAULT_CORPUS_BALLOTS)]
        ballots: usize,
        /// Options per ballot.
        #[arg(long, default_value_t = 3)]
        options: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the ballot classifier on a corpus and save the model.
    TrainClassifier {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out_model: PathBuf,
        #[arg(long, default_value_t = 500)]
        epochs: usize,
    },
    /// Score a saved model against a corpus and the most-frequent-label baseline.
    EvalClassifier {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Score duration/date selection on a fixtures file.
    EvalExtractor {
        #[arg(long)]
        fixtures: PathBuf,
    },
    /// Show one request from a saved state directory.
    Inspect {
        #[arg(long)]
        request_id: String,
        #[arg(long, default_value = "state")]
        state_dir: PathBuf,
    },
    /// Run one acceptance check, or all of them.
    Check {
        #[arg(value_enum)]
        criterion: Option<Criterion>,
        #[arg(long, conflicts_with = "criterion")]
        all: bool,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Simulation(String),
    #[error("{0}")]
    Tier1(String),
    #[error("{0}")]
    State(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Simulation(_) => "simulation",
            CliError::Tier1(_) => "tier1",
            CliError::State(_) => "state",
            CliError::Io(_) => "io",
            CliError::NotFound(_) => "not_found",
            CliError::CheckFailed(_) => "check_failed",
        }
    }

    pub fn to_json(&self) -> Value {
        json!({ "error": self.kind(), "message": self.to_string() })
    }
}

fn io(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

fn tier1(e: impl std::fmt::Display) -> CliError {
    CliError::Tier1(e.to_string())
}

/// Parses `argv`, runs the command and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let pretty = cli.pretty;
    match execute(cli) {
        Ok(out) => {
            println!("{}", render(&out, pretty));
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            1
        }
    }
}

fn render(v: &Value, pretty: bool) -> String {
    if !pretty {
        return v.to_string();
    }
    let mut lines = Vec::new();
    flatten("", v, &mut lines);
    let width = lines.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    lines.iter().map(|(k, v)| format!("{k:<width$}  {v}")).collect::<Vec<_>>().join("\n")
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        Value::Array(a) if a.iter().any(|x| x.is_object()) => {
            for (i, x) in a.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), x, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn agent_config(path: Option<&Path>) -> Result<Option<AgentConfig>, CliError> {
    path.map(|p| AgentConfig::load(p).map_err(|e| CliError::Config(e.to_string()))).transpose()
}

pub fn execute(cli: Cli) -> Result<Value, CliError> {
    let config = agent_config(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate { scenario, seed, out_dir, live_workers, port } => {
            simulate(&scenario, seed, &out_dir, live_workers, port, config)
        }
        Command::Serve { port, snapshot_dir } => serve(port, &snapshot_dir, config),
        Command::GenCorpus { seed, ballots, options, out } => {
            if ballots == 0 || options == 0 {
                return Err(CliError::Config("ballots and options must be positive".into()));
            }
            let records = generate_corpus(seed, ballots, options);
            write_jsonl(&out, &records).map_err(tier1)?;
            Ok(json!({ "ballots": ballots, "records": records.len(), "out": out }))
        }
        Command::TrainClassifier { corpus, out_model, epochs } => {
            let records = read_jsonl(&corpus).map_err(tier1)?;
            let params = TrainParams { epochs, ..TrainParams::default() };
            let (clf, metrics) = train(FeatureDictionary::default(), &records, &params).map_err(tier1)?;
            if let Some(dir) = out_model.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(io)?;
            }
            std::fs::write(&out_model, clf.to_json().map_err(tier1)?).map_err(io)?;
            Ok(json!({ "model": out_model, "metrics": metrics }))
        }
        Command::EvalClassifier { model, corpus } => {
            let text = std::fs::read_to_string(&model).map_err(io)?;
            let clf = BallotClassifier::from_json(&text).map_err(tier1)?;
            let records = read_jsonl(&corpus).map_err(tier1)?;
            let ballots = group_ballots(&records).map_err(tier1)?;
            let positives = records.iter().filter(|r| r.selected).count();
            let baseline_label = positives * 2 > records.len();
            let (m, b) = evaluate(&clf, baseline_label, &ballots);
            Ok(json!({
                "model": { "per_choice": m.per_choice, "exact_subset": m.exact_subset },
                "baseline": { "per_choice": b.per_choice, "exact_subset": b.exact_subset },
                "baseline_label": baseline_label,
                "ballots": ballots.len(),
                "choices": records.len(),
            }))
        }
        Command::EvalExtractor { fixtures } => {
            let fx = checks::load_fixtures(&fixtures).map_err(CliError::Io)?;
            Ok(checks::eval_extractor(&fx))
        }
        Command::Inspect { request_id, state_dir } => inspect(&request_id, &state_dir),
        Command::Check { criterion, all } => {
            let which: Vec<Criterion> = match (criterion, all) {
                (Some(c), _) => vec![c],
                (None, true) => Criterion::ALL.to_vec(),
                (None, false) => {
                    return Err(CliError::Config("name a criterion or pass --all".into()));
                }
            };
            let reports: Vec<_> = which.into_iter().map(checks::run).collect();
            let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.criterion.as_str()).collect();
            if !failed.is_empty() {
                return Err(CliError::CheckFailed(format!(
                    "failed: {}; {}",
                    failed.join(", "),
                    serde_json::to_string(&reports).unwrap_or_default()
                )));
            }
            Ok(json!({ "passed": true, "checks": reports }))
        }
    }
}

fn simulate(
    scenario: &str,
    seed: u64,
    out_dir: &Path,
    live: bool,
    port: u16,
    config: Option<AgentConfig>,
) -> Result<Value, CliError> {
    let mut cfg = sim::resolve(scenario, seed).map_err(|e| CliError::Simulation(e.to_string()))?;
    if let Some(c) = config {
        cfg.agent = c;
    }
    std::fs::create_dir_all(out_dir).map_err(io)?;
    let out = if live {
        let mode = WorkerMode::Live { poll: std::time::Duration::from_millis(200) };
        let sim = Simulation::new(cfg, mode).map_err(|e| CliError::Simulation(e.to_string()))?;
        let desk = sim.desk().clone();
        let rt = tokio::runtime::Runtime::new().map_err(io)?;
        let listener = rt.block_on(tokio::net::TcpListener::bind(SocketAddr::from(([127, 0, 0, 1], port)))).map_err(io)?;
        eprintln!("{}", json!({ "listening": listener.local_addr().map_err(io)?.to_string() }));
        rt.spawn(async move {
            let _ = axum::serve(listener, http::router(Arc::new(desk))).await;
        });
        let result = sim.run();
        rt.shutdown_background();
        result
    } else {
        sim::run(&cfg, WorkerMode::Scripted)
    }
    .map_err(|e| CliError::Simulation(e.to_string()))?;
    out.export(out_dir).map_err(|e| CliError::Simulation(e.to_string()))?;
    Ok(serde_json::to_value(&out.metrics).map_err(io)?)
}

fn serve(port: u16, dir: &Path, config: Option<AgentConfig>) -> Result<Value, CliError> {
    let (agent, clock): (Agent, Arc<dyn Clock>) = if dir.join("agent.json").exists() {
        let agent = Agent::load(dir).map_err(|e| CliError::State(e.to_string()))?;
        let last = agent.mailroom().transcript().iter().map(|m| m.sent_at).max();
        let clock: Arc<dyn Clock> = match last {
            Some(t) => Arc::new(RebasedClock::new(t)),
            None => Arc::new(SystemClock),
        };
        (agent, clock)
    } else {
        let agent = Agent::new(config.unwrap_or_default(), CalendarStore::new());
        agent.save(dir).map_err(|e| CliError::State(e.to_string()))?;
        (agent, Arc::new(SystemClock))
    };
    let desk = Desk::new(agent, clock, Some(dir.to_path_buf()));
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    let rt = tokio::runtime::Runtime::new().map_err(io)?;
    let listener = rt.block_on(tokio::net::TcpListener::bind(addr)).map_err(io)?;
    eprintln!("{}", json!({ "listening": listener.local_addr().map_err(io)?.to_string() }));
    rt.block_on(http::serve(Arc::new(desk), listener)).map_err(io)?;
    Ok(json!({ "stopped": true }))
}

fn inspect(rid: &str, dir: &Path) -> Result<Value, CliError> {
    if !dir.join("agent.json").exists() {
        return Err(CliError::NotFound(format!("no saved state in {}", dir.display())));
    }
    let agent = Agent::load(dir).map_err(|e| CliError::State(e.to_string()))?;
    let req = agent.request(rid).ok_or_else(|| CliError::NotFound(format!("unknown request {rid}")))?;
    let ballots: Vec<_> = req.ballots.iter().filter_map(|b| agent.ballot(b)).collect();
    let tasks: Vec<_> = agent.board().tasks().filter(|t| t.request_id.as_deref() == Some(rid)).collect();
    let timers: Vec<_> = agent.timers().filter(|t| t.request_id == rid).collect();
    let thread: Vec<_> = req.thread.iter().filter_map(|m| agent.mailroom().message(m)).collect();
    Ok(json!({
        "request": req,
        "ballots": ballots,
        "tasks": tasks,
        "timers": timers,
        "thread": thread,
    }))
}
