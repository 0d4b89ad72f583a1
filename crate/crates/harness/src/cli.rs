//! The `arena` command line.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use arena_core::lm::{perplexity, train_ngram, TrainOptions};
use arena_core::performers::Role;
use arena_core::protocol::{run_evaluation, verify, Binding, EvaluationConfig, JsonlSink, ParamValue, Transcript};
use arena_core::registry::{PerformerFactory, Registry, Resources};
use arena_core::scoring::{grid_evaluate, score, GridSpec, ScoreReport};
use arena_core::textdata::{load_corpus, Scheme};

use crate::client::{drive_claude, drive_zellig, ArenaClient};
use crate::server::{self, AppState};

#[derive(Parser, Debug)]
#[command(name = "arena", version, about = "Run and score real-versus-fake text evaluations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
pub enum Format {
    #[default]
    Table,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RemoteRole {
    Zellig,
    Claude,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SchemeArg {
    Whitespace,
    Lowercase,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Scheme {
        match s {
            SchemeArg::Whitespace => Scheme::Whitespace,
            SchemeArg::Lowercase => Scheme::WhitespaceLowercase,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train an n-gram model on a corpus file and save it as JSON.
    TrainLm {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 2)]
        order: usize,
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        #[arg(long)]
        unk_singletons: bool,
        #[arg(long, value_enum, default_value = "whitespace")]
        scheme: SchemeArg,
        #[arg(long)]
        out: PathBuf,
        /// Held-out corpus to report perplexity on.
        #[arg(long)]
        eval: Option<PathBuf>,
    },
    /// Run one evaluation; writes the transcript and prints the score.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Transcript path; defaults to `<evaluation id>.jsonl`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        /// Also write the running-S series as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Evaluate a grid of performers against a fixed one.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the full report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Score a transcript file.
    Score {
        transcript: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, env = "ARENA_DATA_DIR", default_value = "arena-data")]
        data_dir: PathBuf,
        /// Directory that relative corpus and model paths resolve against.
        #[arg(long, default_value = ".")]
        resources: PathBuf,
    },
    /// Verify a transcript's integrity and re-derive its score.
    Replay {
        transcript: PathBuf,
        /// Re-run the evaluation from its header and compare every record.
        #[arg(long)]
        rerun: bool,
        #[arg(long, default_value = ".")]
        resources: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Play a remote slot of a server-side evaluation with a built-in performer.
    Connect {
        #[arg(long)]
        server: String,
        #[arg(long)]
        evaluation: String,
        #[arg(long, value_enum)]
        role: RemoteRole,
        /// Built-in performer name, e.g. `claude-ngram`.
        #[arg(long)]
        performer: String,
        /// Performer parameter as `key=value`; repeatable.
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
        #[arg(long, default_value = ".")]
        resources: PathBuf,
    },
}

/// A failure with a stable machine-readable kind.
#[derive(Debug)]
pub struct Failure {
    pub kind: &'static str,
    pub message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for Failure {}

fn failure(kind: &'static str, message: impl fmt::Display) -> anyhow::Error {
    Failure { kind, message: message.to_string() }.into()
}

/// The one-line JSON error written to stderr on failure.
pub fn error_line(err: &anyhow::Error) -> String {
    let (kind, message) = match err.downcast_ref::<Failure>() {
        Some(f) => (f.kind, f.message.clone()),
        None => ("error", format!("{err:#}")),
    };
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

/// Reads a TOML or JSON document; JSON when the extension is `.json`.
pub fn load_document<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| failure("io", format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| failure("config", format!("{}: {e}", path.display())))
}

fn base_dir(config: &Path) -> PathBuf {
    match config.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn print_report(report: &ScoreReport, format: Format) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    match format {
        Format::Table => {
            writeln!(out, "S={}", report.s)?;
            write!(out, "{}", report.to_table())?;
        }
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(report)?)?,
    }
    Ok(())
}

fn write_csv(path: Option<&Path>, report: &ScoreReport) -> anyhow::Result<()> {
    if let Some(p) = path {
        std::fs::write(p, report.running_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn parse_param(raw: &str) -> anyhow::Result<(String, ParamValue)> {
    let (k, v) = raw.split_once('=').ok_or_else(|| failure("usage", format!("expected KEY=VALUE, got {raw:?}")))?;
    let value = if let Ok(i) = v.parse::<i64>() {
        ParamValue::Int(i)
    } else if let Ok(f) = v.parse::<f64>() {
        ParamValue::Float(f)
    } else if let Ok(b) = v.parse::<bool>() {
        ParamValue::Bool(b)
    } else {
        ParamValue::Str(v.to_string())
    };
    Ok((k.to_string(), value))
}

fn load_transcript(path: &Path) -> anyhow::Result<Transcript> {
    Transcript::load(path).map_err(|e| failure("transcript", format!("{}: {e}", path.display())))
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::TrainLm { corpus, order, k, unk_singletons, scheme, out, eval } => {
            let handle = load_corpus(&corpus, scheme.into()).map_err(|e| failure("corpus", e))?;
            let options = TrainOptions { order, k, unk_singletons };
            let model = train_ngram(&handle, options).map_err(|e| failure("config", e))?;
            model.save(&out).map_err(|e| failure("io", e))?;
            let mut summary = serde_json::json!({
                "model": out,
                "order": order,
                "k": k,
                "instances": handle.len(),
                "vocab": handle.vocab().len(),
            });
            if let Some(eval) = eval {
                let test = load_corpus(&eval, scheme.into()).map_err(|e| failure("corpus", e))?;
                let seqs: Vec<_> = test.sequences().cloned().collect();
                let ppl = perplexity(&model, &seqs).map_err(|e| failure("lm", e))?;
                summary["perplexity"] = ppl.into();
            }
            println!("{summary}");
        }
        Command::Run { config, seed, out, format, csv } => {
            let mut cfg: EvaluationConfig = load_document(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate().map_err(|e| failure("config", e))?;
            let registry = Registry::new(Resources::new(base_dir(&config)));
            let lineup = registry.build(&cfg).map_err(|e| failure("config", e))?;
            let out = out.unwrap_or_else(|| PathBuf::from(format!("{}.jsonl", cfg.derived_id())));
            let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut sink = JsonlSink::new(BufWriter::new(file));
            let transcript = run_evaluation(&cfg, lineup.john, lineup.zellig, lineup.claude, &mut sink)
                .map_err(|e| failure("run", e))?;
            log::info!("transcript written to {}", out.display());
            let report = score(&transcript).map_err(|e| failure("score", e))?;
            write_csv(csv.as_deref(), &report)?;
            print_report(&report, format)?;
            if let Some(status) = &transcript.status {
                return Err(failure("incomplete", serde_json::to_string(status)?));
            }
        }
        Command::Grid { config, seed, out, format } => {
            let mut spec: GridSpec = load_document(&config)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let registry = Registry::new(Resources::new(base_dir(&config)));
            let report = grid_evaluate(&spec, &registry).map_err(|e| failure("config", e))?;
            if let Some(p) = out {
                std::fs::write(&p, serde_json::to_string_pretty(&report)?)
                    .with_context(|| format!("writing {}", p.display()))?;
            }
            match format {
                Format::Table => print!("{}", report.to_table()),
                Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
            }
        }
        Command::Score { transcript, format, csv } => {
            let t = load_transcript(&transcript)?;
            let report = score(&t).map_err(|e| failure("score", e))?;
            write_csv(csv.as_deref(), &report)?;
            print_report(&report, format)?;
        }
        Command::Serve { addr, data_dir, resources } => {
            let registry = Arc::new(Registry::new(Resources::new(resources)));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let state = AppState::open(registry, &data_dir)?;
                let listener = tokio::net::TcpListener::bind(addr).await?;
                println!("listening on http://{}", listener.local_addr()?);
                log::info!("data directory {}", data_dir.display());
                server::serve(listener, state, async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await?;
                anyhow::Ok(())
            })?;
        }
        Command::Replay { transcript, rerun, resources, format } => {
            let t = load_transcript(&transcript)?;
            let problems = verify(&t);
            if !problems.is_empty() {
                return Err(failure("verification", problems.join("; ")));
            }
            let report = score(&t).map_err(|e| failure("verification", e))?;
            if rerun {
                let registry = Registry::new(Resources::new(resources));
                let lineup = registry.build(&t.header.config).map_err(|e| failure("config", e))?;
                let fresh = arena_core::protocol::Engine::new(t.header.config.clone())
                    .map_err(|e| failure("config", e))?
                    .with_id(t.header.evaluation_id.clone())
                    .run(lineup.john, lineup.zellig, lineup.claude, &mut arena_core::protocol::NullSink)
                    .map_err(|e| failure("run", e))?;
                if let Some(i) =
                    (0..t.records.len().max(fresh.records.len())).find(|&i| t.records.get(i) != fresh.records.get(i))
                {
                    return Err(failure("verification", format!("re-run diverges at round {i}")));
                }
            }
            print_report(&report, format)?;
        }
        Command::Connect { server, evaluation, role, performer, params, resources } => {
            let mut binding = Binding::new(performer);
            for raw in &params {
                let (k, v) = parse_param(raw)?;
                binding.params.insert(k, v);
            }
            let registry = Registry::new(Resources::new(resources));
            let client = ArenaClient::new(server);
            let rt = tokio::runtime::Runtime::new()?;
            let submitted = match role {
                RemoteRole::Zellig => {
                    let mut z = registry.build_zellig(&binding).map_err(|e| failure("config", e))?;
                    rt.block_on(drive_zellig(&client, &evaluation, z.as_mut()))
                }
                RemoteRole::Claude => {
                    let mut c = registry.build_claude(&binding).map_err(|e| failure("config", e))?;
                    rt.block_on(drive_claude(&client, &evaluation, c.as_mut()))
                }
            }
            .map_err(|e| failure("remote", e))?;
            let role = match role {
                RemoteRole::Zellig => Role::Zellig,
                RemoteRole::Claude => Role::Claude,
            };
            println!("{}", serde_json::json!({ "role": role, "submitted": submitted }));
        }
    }
    Ok(())
}
