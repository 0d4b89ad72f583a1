//! One evaluation on the server: its engine thread, its transcript file, and
//! the mailboxes through which remote performers receive challenges and
//! return answers.

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use arena_core::performers::{
    Claude, ClaudeChoice, ClaudeRequest, PerformerDescriptor, PerformerError, Position, Role, Zellig, ZelligOutput,
    ZelligRequest,
};
use arena_core::protocol::{
    AbortHandle, Deadline, Engine, EvaluationConfig, JsonlSink, RoundRecord, Transcript, TranscriptHeader,
    TranscriptSink, TranscriptStatus, TransparencyPacket, DEADLINE_GRACE,
};
use arena_core::registry::{Lineup, Registry, RegistryError};
use arena_core::scoring::{ScoreReport, ScoringError};
use arena_core::textdata::{Metadata, TokenSequence};
use tokio::sync::watch;

use crate::api::{self, CChallenge, EvaluationView, SessionState, ZChallenge, REMOTE, SCHEMA_VERSION};

/// A challenge waiting for a remote answer.
struct Mailbox<P, R> {
    round: u64,
    payload: P,
    issued: Instant,
    /// Taken by the first submission.
    reply: Option<mpsc::SyncSender<R>>,
}

type ZMailbox = Mailbox<(TokenSequence, Option<Metadata>), TokenSequence>;
type CMailbox = Mailbox<([TokenSequence; 2], Option<Metadata>), Position>;

#[derive(Default)]
struct Inner {
    started: bool,
    finished: bool,
    header: Option<TranscriptHeader>,
    records: Vec<RoundRecord>,
    status: Option<TranscriptStatus>,
    z: Option<ZMailbox>,
    c: Option<CMailbox>,
    last_z_round: Option<u64>,
    last_c_round: Option<u64>,
    z_feedback: Vec<TransparencyPacket>,
    c_feedback: Vec<TransparencyPacket>,
}

/// Why a submission was refused; maps to an HTTP status upstream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubmitError {
    NotReady,
    WrongRound { expected: u64 },
    Resolved,
    Duplicate,
    Closed,
}

impl SubmitError {
    pub fn code(&self) -> &'static str {
        match self {
            SubmitError::NotReady => "not_ready",
            SubmitError::WrongRound { .. } => "wrong_round",
            SubmitError::Resolved => "resolved",
            SubmitError::Duplicate => "duplicate",
            SubmitError::Closed => "closed",
        }
    }

    pub fn message(&self) -> String {
        match self {
            SubmitError::NotReady => "no challenge is open for this role".into(),
            SubmitError::WrongRound { expected } => {
                format!("the open challenge is round {expected}")
            }
            SubmitError::Resolved => "that round is already resolved".into(),
            SubmitError::Duplicate => "a submission for this round was already accepted".into(),
            SubmitError::Closed => "the evaluation has ended".into(),
        }
    }
}

pub struct Session {
    id: String,
    config: EvaluationConfig,
    path: PathBuf,
    inner: Mutex<Inner>,
    committed: watch::Sender<u64>,
    abort: AbortHandle,
}

impl Session {
    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().expect("session lock poisoned")
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &EvaluationConfig {
        &self.config
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn total_rounds(&self) -> u64 {
        self.config.validate().map(|s| s.len() as u64).unwrap_or(0)
    }

    pub fn state(&self) -> SessionState {
        let inner = self.lock();
        if inner.finished {
            return match inner.status {
                None => SessionState::Finished,
                Some(_) => SessionState::Aborted,
            };
        }
        if inner.z.is_some() {
            SessionState::AwaitingZ
        } else if inner.c.is_some() {
            SessionState::AwaitingC
        } else if inner.started {
            SessionState::Running
        } else {
            SessionState::Created
        }
    }

    pub fn view(&self) -> EvaluationView {
        let state = self.state();
        let inner = self.lock();
        EvaluationView {
            schema_version: SCHEMA_VERSION,
            evaluation_id: self.id.clone(),
            state,
            config: self.config.clone(),
            rounds_completed: inner.records.len() as u64,
            total_rounds: self.total_rounds(),
            status: inner.status.clone(),
        }
    }

    /// Score over the rounds persisted so far; `None` before the first
    /// scored round.
    pub fn score(&self) -> Result<Option<ScoreReport>, ScoringError> {
        let complete = self.state() == SessionState::Finished;
        let inner = self.lock();
        let schedule = self
            .config
            .validate()
            .map_err(|e| ScoringError::Config { field: "rounds".into(), message: e.to_string() })?;
        if !inner.records.iter().any(|r| schedule.is_scored(r.n)) {
            return Ok(None);
        }
        ScoreReport::from_records(&self.id, &self.config, &inner.records, complete).map(Some)
    }

    pub fn abort(&self, reason: &str) {
        self.abort.abort();
        let mut inner = self.lock();
        // dropping the reply senders wakes remote performers blocked on them
        inner.z = None;
        inner.c = None;
        log::info!("{}: abort requested ({reason})", self.id);
    }

    fn remaining_ms(&self, issued: Instant) -> Option<u64> {
        match self.config.deadline {
            Deadline::Logical => None,
            Deadline::WallClock(d) => Some(d.saturating_sub(issued.elapsed()).as_millis() as u64),
        }
    }

    pub fn z_challenge(&self) -> Result<ZChallenge, SubmitError> {
        let state = self.state();
        let inner = self.lock();
        match &inner.z {
            Some(mb) if mb.reply.is_some() => Ok(ZChallenge {
                schema_version: SCHEMA_VERSION,
                evaluation_id: self.id.clone(),
                round: mb.round,
                x: mb.payload.0.clone(),
                m: mb.payload.1.clone(),
                deadline_ms: self.remaining_ms(mb.issued),
                feedback: inner.z_feedback.clone(),
            }),
            _ if state.is_terminal() => Err(SubmitError::Closed),
            _ => Err(SubmitError::NotReady),
        }
    }

    pub fn c_challenge(&self) -> Result<CChallenge, SubmitError> {
        let state = self.state();
        let inner = self.lock();
        match &inner.c {
            Some(mb) if mb.reply.is_some() => Ok(CChallenge {
                schema_version: SCHEMA_VERSION,
                evaluation_id: self.id.clone(),
                round: mb.round,
                items: mb.payload.0.clone(),
                m: mb.payload.1.clone(),
                deadline_ms: self.remaining_ms(mb.issued),
                feedback: inner.c_feedback.clone(),
            }),
            _ if state.is_terminal() => Err(SubmitError::Closed),
            _ => Err(SubmitError::NotReady),
        }
    }

    pub fn submit_z(&self, round: u64, y: TokenSequence) -> Result<(), SubmitError> {
        let state = self.state();
        let mut inner = self.lock();
        let last = inner.last_z_round;
        deliver(&mut inner.z, last, round, y, state)
    }

    pub fn submit_c(&self, round: u64, choice: Position) -> Result<(), SubmitError> {
        let state = self.state();
        let mut inner = self.lock();
        let last = inner.last_c_round;
        deliver(&mut inner.c, last, round, choice, state)
    }

    /// Waits until round `round` is persisted and returns its record.
    pub async fn wait_for_record(&self, round: u64, timeout: Duration) -> Option<RoundRecord> {
        let mut rx = self.committed.subscribe();
        let reached = tokio::time::timeout(timeout, rx.wait_for(|&n| n > round)).await;
        if !matches!(reached, Ok(Ok(_))) {
            return None;
        }
        self.lock().records.get(round as usize).cloned()
    }

    fn open_mailbox_z(&self, round: u64, x: TokenSequence, m: Option<Metadata>) -> mpsc::Receiver<TokenSequence> {
        let (tx, rx) = mpsc::sync_channel(1);
        self.lock().z = Some(Mailbox { round, payload: (x, m), issued: Instant::now(), reply: Some(tx) });
        rx
    }

    fn open_mailbox_c(&self, round: u64, items: [TokenSequence; 2], m: Option<Metadata>) -> mpsc::Receiver<Position> {
        let (tx, rx) = mpsc::sync_channel(1);
        self.lock().c = Some(Mailbox { round, payload: (items, m), issued: Instant::now(), reply: Some(tx) });
        rx
    }

    fn close_mailbox(&self, role: Role, round: u64) {
        let mut inner = self.lock();
        match role {
            Role::Zellig => {
                if inner.z.as_ref().is_some_and(|mb| mb.round == round) {
                    inner.z = None;
                }
                inner.last_z_round = Some(round);
            }
            Role::Claude => {
                if inner.c.as_ref().is_some_and(|mb| mb.round == round) {
                    inner.c = None;
                }
                inner.last_c_round = Some(round);
            }
            Role::John => {}
        }
    }
}

fn deliver<P, R>(
    slot: &mut Option<Mailbox<P, R>>,
    last_resolved: Option<u64>,
    round: u64,
    answer: R,
    state: SessionState,
) -> Result<(), SubmitError> {
    match slot {
        Some(mb) if mb.round == round => {
            let tx = mb.reply.take().ok_or(SubmitError::Duplicate)?;
            tx.try_send(answer).map_err(|_| SubmitError::Resolved)
        }
        Some(mb) if round < mb.round => Err(SubmitError::Resolved),
        Some(mb) => Err(SubmitError::WrongRound { expected: mb.round }),
        None if last_resolved.is_some_and(|last| round <= last) => Err(SubmitError::Resolved),
        None if state.is_terminal() => Err(SubmitError::Closed),
        None => Err(SubmitError::NotReady),
    }
}

fn remote_descriptor(role: Role) -> PerformerDescriptor {
    PerformerDescriptor::new(role, REMOTE, "remote HTTP client; resources declared by its operator")
        .expect("non-empty resources")
}

fn remote_limit(config: &EvaluationConfig) -> Option<Duration> {
    match config.deadline {
        Deadline::Logical => None,
        Deadline::WallClock(d) => Some(d.mul_f64(DEADLINE_GRACE)),
    }
}

/// A Zellig played over HTTP.
pub struct RemoteZellig {
    session: Arc<Session>,
    limit: Option<Duration>,
    descriptor: PerformerDescriptor,
}

impl Zellig for RemoteZellig {
    fn descriptor(&self) -> &PerformerDescriptor {
        &self.descriptor
    }

    fn corrupt(&mut self, request: &ZelligRequest) -> Result<ZelligOutput, PerformerError> {
        let issued = Instant::now();
        let rx = self.session.open_mailbox_z(request.round, request.x.clone(), request.m.clone());
        let answer = wait(&rx, self.limit);
        self.session.close_mailbox(Role::Zellig, request.round);
        answer.map(|y| ZelligOutput { y, elapsed: issued.elapsed(), declared_distance: None })
    }

    fn observe(&mut self, packet: &TransparencyPacket) {
        self.session.lock().z_feedback.push(packet.clone());
    }
}

/// A Claude played over HTTP.
pub struct RemoteClaude {
    session: Arc<Session>,
    limit: Option<Duration>,
    descriptor: PerformerDescriptor,
}

impl Claude for RemoteClaude {
    fn descriptor(&self) -> &PerformerDescriptor {
        &self.descriptor
    }

    fn choose(&mut self, request: &ClaudeRequest) -> Result<ClaudeChoice, PerformerError> {
        let issued = Instant::now();
        let rx = self.session.open_mailbox_c(request.round, request.items.clone(), request.m.clone());
        let answer = wait(&rx, self.limit);
        self.session.close_mailbox(Role::Claude, request.round);
        answer.map(|position| ClaudeChoice { position, elapsed: issued.elapsed() })
    }

    fn observe(&mut self, packet: &TransparencyPacket) {
        self.session.lock().c_feedback.push(packet.clone());
    }
}

fn wait<R>(rx: &mpsc::Receiver<R>, limit: Option<Duration>) -> Result<R, PerformerError> {
    match limit {
        None => rx.recv().map_err(|_| PerformerError::Crashed("evaluation aborted".into())),
        Some(d) => rx.recv_timeout(d).map_err(|e| match e {
            mpsc::RecvTimeoutError::Timeout => PerformerError::Timeout,
            mpsc::RecvTimeoutError::Disconnected => PerformerError::Crashed("evaluation aborted".into()),
        }),
    }
}

/// Persists each line before publishing it to API readers.
struct SessionSink {
    file: JsonlSink<BufWriter<File>>,
    session: Arc<Session>,
}

impl TranscriptSink for SessionSink {
    fn begin(&mut self, header: &TranscriptHeader) -> io::Result<()> {
        self.file.begin(header)?;
        self.session.lock().header = Some(header.clone());
        Ok(())
    }

    fn record(&mut self, record: &RoundRecord) -> io::Result<()> {
        self.file.record(record)?;
        let n = {
            let mut inner = self.session.lock();
            inner.records.push(record.clone());
            inner.records.len() as u64
        };
        self.session.committed.send_replace(n);
        Ok(())
    }

    fn finish(&mut self, status: Option<&TranscriptStatus>) -> io::Result<()> {
        self.file.finish(status)?;
        self.session.lock().status = status.cloned();
        Ok(())
    }
}

#[derive(Debug)]
pub enum CreateError {
    Invalid { field: Option<String>, message: String },
    Io(io::Error),
}

impl From<RegistryError> for CreateError {
    fn from(e: RegistryError) -> Self {
        let field = match &e {
            RegistryError::Param { field, .. } => Some(field.clone()),
            RegistryError::UnknownPerformer { role, .. } => Some(format!("{role}.name")),
            _ => None,
        };
        CreateError::Invalid { field, message: e.to_string() }
    }
}

/// Validates `config`, binds performers, and starts the engine thread.
/// Returns the session with its view as of creation, before the engine runs.
pub fn start(
    id: String,
    config: EvaluationConfig,
    registry: &Registry,
    data_dir: &Path,
) -> Result<(Arc<Session>, EvaluationView), CreateError> {
    if let Err(e) = config.validate() {
        let field = match &e {
            arena_core::protocol::ProtocolError::Config { field, .. } => Some(field.clone()),
            _ => None,
        };
        return Err(CreateError::Invalid { field, message: e.to_string() });
    }
    if config.john.name == REMOTE {
        return Err(CreateError::Invalid { field: Some("john.name".into()), message: "John cannot be remote".into() });
    }
    let path = data_dir.join(format!("{id}.jsonl"));
    let (committed, _) = watch::channel(0u64);
    let session = Arc::new(Session {
        id: id.clone(),
        config: config.clone(),
        path: path.clone(),
        inner: Mutex::new(Inner::default()),
        committed,
        abort: AbortHandle::default(),
    });
    let limit = remote_limit(&config);
    let lineup = Lineup {
        john: registry.build_john(&config.john)?,
        zellig: if config.zellig.name == REMOTE {
            Box::new(RemoteZellig { session: session.clone(), limit, descriptor: remote_descriptor(Role::Zellig) })
        } else {
            registry.build_zellig(&config.zellig)?
        },
        claude: if config.claude.name == REMOTE {
            Box::new(RemoteClaude { session: session.clone(), limit, descriptor: remote_descriptor(Role::Claude) })
        } else {
            registry.build_claude(&config.claude)?
        },
    };
    let file = OpenOptions::new().create_new(true).write(true).open(&path).map_err(CreateError::Io)?;
    let engine = Engine::new(config)
        .map_err(|e| CreateError::Invalid { field: None, message: e.to_string() })?
        .with_id(id)
        .with_abort(session.abort.clone());
    let created = session.view();
    let worker = session.clone();
    std::thread::Builder::new()
        .name(format!("session-{}", worker.id))
        .spawn(move || {
            worker.lock().started = true;
            let mut sink = SessionSink { file: JsonlSink::new(BufWriter::new(file)), session: worker.clone() };
            if let Err(e) = engine.run(lineup.john, lineup.zellig, lineup.claude, &mut sink) {
                log::error!("{}: run failed: {e}", worker.id);
                let status = TranscriptStatus::Aborted { reason: e.to_string() };
                let _ = sink.finish(Some(&status));
            }
            worker.lock().finished = true;
            // wake any reader waiting on a record that will never come
            worker.committed.send_modify(|_| {});
        })
        .map_err(CreateError::Io)?;
    Ok((session, created))
}

/// Reloads a transcript left in the data directory. A run that was cut off
/// gets an `aborted` status line appended; it is never resumed.
pub fn recover(path: &Path) -> io::Result<Option<Arc<Session>>> {
    let mut transcript = match Transcript::load(path) {
        Ok(t) => t,
        Err(e) => {
            log::warn!("skipping unreadable transcript {}: {e}", path.display());
            return Ok(None);
        }
    };
    let expected = transcript.header.config.validate().map(|s| s.len()).unwrap_or(0);
    if transcript.status.is_none() && transcript.records.len() < expected {
        let status = TranscriptStatus::Aborted { reason: "server restarted before the run finished".into() };
        let mut file = OpenOptions::new().append(true).open(path)?;
        io::Write::write_all(&mut file, format!("{}\n", serde_json::to_string(&status)?).as_bytes())?;
        transcript.status = Some(status);
    }
    let (committed, _) = watch::channel(transcript.records.len() as u64);
    let session = Session {
        id: transcript.header.evaluation_id.clone(),
        config: transcript.header.config.clone(),
        path: path.to_path_buf(),
        inner: Mutex::new(Inner {
            started: true,
            finished: true,
            header: Some(transcript.header),
            records: transcript.records,
            status: transcript.status,
            ..Default::default()
        }),
        committed,
        abort: AbortHandle::default(),
    };
    Ok(Some(Arc::new(session)))
}

pub fn listing() -> api::PerformerListing {
    let mut performers: Vec<api::ListedPerformer> = arena_core::registry::CATALOG
        .iter()
        .map(|e| api::ListedPerformer {
            role: e.role,
            name: e.name.to_string(),
            params: e.params.iter().map(|p| p.to_string()).collect(),
            description: e.description.to_string(),
        })
        .collect();
    for role in [Role::Zellig, Role::Claude] {
        performers.push(api::ListedPerformer {
            role,
            name: REMOTE.into(),
            params: vec![],
            description: "played by an HTTP client (program or person)".into(),
        });
    }
    api::PerformerListing { schema_version: SCHEMA_VERSION, performers }
}
