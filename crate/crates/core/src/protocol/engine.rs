//! The round loop and the executors that put deadlines around performers.
//!
//! Logical-time runs call performers inline on the engine thread. Wall-clock
//! and pipelined runs give Zellig and Claude one worker thread each; the
//! engine waits on a reply channel with the deadline plus grace. A reply that
//! arrives after its round was defaulted is discarded. Each worker has at
//! most one call in flight: if it is still busy with a stale call when the
//! next round begins (after a short settle window), that round is defaulted
//! without calling it.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use super::{
    emit_transparency, permute_pair, resolve_claude_timeout, resolve_zellig_timeout, Deadline, EvaluationConfig, Item,
    Mode, PerformerSet, ProtocolError, RoundRecord, Transcript, TranscriptHeader, TranscriptSink, TranscriptStatus,
    TransparencyPacket,
};
use crate::clock::Stopwatch;
use crate::performers::{
    Claude, ClaudeChoice, ClaudeRequest, John, PerformerError, Position, Role, Zellig, ZelligOutput, ZelligRequest,
};
use crate::rng;
use crate::textdata::{Instance, Metadata, TokenSequence};

/// Multiplier on the configured deadline before a call counts as late.
pub const DEADLINE_GRACE: f64 = 1.05;

/// How long a new call waits for a late reply to the previous one before the
/// new round is defaulted.
const STALE_SETTLE: Duration = Duration::from_millis(20);

/// Cooperative cancellation, checked between rounds.
#[derive(Debug, Clone, Default)]
pub struct AbortHandle(Arc<AtomicBool>);

impl AbortHandle {
    pub fn abort(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_aborted(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

trait Callable: Send + 'static {
    type Req: Send + 'static;
    type Resp: Send + 'static;
    fn call(&mut self, req: &Self::Req) -> Result<Self::Resp, PerformerError>;
    fn observe(&mut self, packet: &TransparencyPacket);
}

struct ZelligCall(Box<dyn Zellig>);

impl Callable for ZelligCall {
    type Req = ZelligRequest;
    type Resp = ZelligOutput;

    fn call(&mut self, req: &ZelligRequest) -> Result<ZelligOutput, PerformerError> {
        self.0.corrupt(req)
    }

    fn observe(&mut self, packet: &TransparencyPacket) {
        self.0.observe(packet)
    }
}

struct ClaudeCall(Box<dyn Claude>);

impl Callable for ClaudeCall {
    type Req = ClaudeRequest;
    type Resp = ClaudeChoice;

    fn call(&mut self, req: &ClaudeRequest) -> Result<ClaudeChoice, PerformerError> {
        self.0.choose(req)
    }

    fn observe(&mut self, packet: &TransparencyPacket) {
        self.0.observe(packet)
    }
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".to_string()
    }
}

fn guarded<T>(f: impl FnOnce() -> Result<T, PerformerError>) -> Result<T, PerformerError> {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| Err(PerformerError::Crashed(panic_message(p))))
}

enum Outcome<T> {
    Done(T, Duration),
    Late(Duration),
    Failed(String, Duration),
}

enum Msg<Req> {
    Call(u64, Req),
    Observe(TransparencyPacket),
}

/// Round, result, and when the performer returned.
type Reply<T> = (u64, Result<T, PerformerError>, Instant);

struct Worker<C: Callable> {
    tx: mpsc::Sender<Msg<C::Req>>,
    rx: mpsc::Receiver<Reply<C::Resp>>,
    /// Round of the call the thread is executing, if any.
    busy: Option<u64>,
    issued: Option<(u64, Instant)>,
    skipped: Option<u64>,
    dead: bool,
}

impl<C: Callable> Worker<C> {
    fn spawn(mut performer: C, label: &str) -> Self {
        let (tx, call_rx) = mpsc::channel::<Msg<C::Req>>();
        let (reply_tx, rx) = mpsc::channel::<Reply<C::Resp>>();
        // Detached: a stuck performer must not block engine shutdown.
        let spawned = thread::Builder::new().name(format!("arena-{label}")).spawn(move || {
            for msg in call_rx {
                match msg {
                    Msg::Call(round, req) => {
                        let res = guarded(|| performer.call(&req));
                        if reply_tx.send((round, res, Instant::now())).is_err() {
                            break;
                        }
                    }
                    Msg::Observe(p) => {
                        let _ = guarded(|| {
                            performer.observe(&p);
                            Ok(())
                        });
                    }
                }
            }
        });
        Worker { tx, rx, busy: None, issued: None, skipped: None, dead: spawned.is_err() }
    }

    fn drain_stale(&mut self) {
        let settle_until = Instant::now() + STALE_SETTLE;
        while self.busy.is_some() {
            match self.rx.recv_timeout(settle_until.saturating_duration_since(Instant::now())) {
                Ok((r, _, _)) if Some(r) == self.busy => self.busy = None,
                Ok(_) => {}
                Err(mpsc::RecvTimeoutError::Timeout) => break,
                Err(mpsc::RecvTimeoutError::Disconnected) => {
                    self.dead = true;
                    break;
                }
            }
        }
    }

    fn issue(&mut self, round: u64, req: C::Req) {
        self.drain_stale();
        if self.busy.is_some() || self.dead || self.tx.send(Msg::Call(round, req)).is_err() {
            self.skipped = Some(round);
            return;
        }
        self.busy = Some(round);
        self.issued = Some((round, Instant::now()));
    }

    fn wait(&mut self, round: u64, limit: Option<Duration>) -> Outcome<C::Resp> {
        if self.skipped == Some(round) {
            self.skipped = None;
            let why = if self.dead { "performer thread is gone" } else { "still busy with an earlier round" };
            return Outcome::Failed(why.into(), Duration::ZERO);
        }
        let (issued_round, start) = self.issued.take().expect("wait follows issue");
        debug_assert_eq!(issued_round, round);
        loop {
            let msg = match limit {
                None => self.rx.recv().map_err(|_| mpsc::RecvTimeoutError::Disconnected),
                Some(d) => self.rx.recv_timeout(d.saturating_sub(start.elapsed())),
            };
            match msg {
                Ok((r, res, done)) => {
                    if self.busy == Some(r) {
                        self.busy = None;
                    }
                    if r != round {
                        continue;
                    }
                    // judged by when the performer returned, so a late wakeup
                    // of this thread cannot admit an overdue reply
                    let elapsed = done.saturating_duration_since(start);
                    if limit.is_some_and(|d| elapsed > d) {
                        return Outcome::Late(elapsed);
                    }
                    return match res {
                        Ok(v) => Outcome::Done(v, elapsed),
                        Err(e) => Outcome::Failed(e.to_string(), elapsed),
                    };
                }
                Err(mpsc::RecvTimeoutError::Timeout) => return Outcome::Late(start.elapsed()),
                Err(mpsc::RecvTimeoutError::Disconnected) => {
                    self.dead = true;
                    return Outcome::Failed("performer thread exited".into(), start.elapsed());
                }
            }
        }
    }

    fn observe(&mut self, packet: TransparencyPacket) {
        let _ = self.tx.send(Msg::Observe(packet));
    }
}

enum Slot<C: Callable> {
    Inline { performer: C, result: Option<(u64, Result<C::Resp, PerformerError>, Duration)> },
    Threaded(Worker<C>),
}

impl<C: Callable> Slot<C> {
    fn new(performer: C, threaded: bool, label: &str) -> Self {
        if threaded {
            Slot::Threaded(Worker::spawn(performer, label))
        } else {
            Slot::Inline { performer, result: None }
        }
    }

    fn issue(&mut self, round: u64, req: C::Req) {
        match self {
            Slot::Inline { performer, result } => {
                let watch = Stopwatch::start();
                let res = guarded(|| performer.call(&req));
                *result = Some((round, res, watch.elapsed()));
            }
            Slot::Threaded(w) => w.issue(round, req),
        }
    }

    fn wait(&mut self, round: u64, limit: Option<Duration>) -> Outcome<C::Resp> {
        match self {
            Slot::Inline { result, .. } => {
                let (r, res, elapsed) = result.take().expect("wait follows issue");
                debug_assert_eq!(r, round);
                match (res, limit) {
                    (_, Some(d)) if elapsed > d => Outcome::Late(elapsed),
                    (Ok(v), _) => Outcome::Done(v, elapsed),
                    (Err(e), _) => Outcome::Failed(e.to_string(), elapsed),
                }
            }
            Slot::Threaded(w) => w.wait(round, limit),
        }
    }

    fn observe(&mut self, packet: TransparencyPacket) {
        match self {
            Slot::Inline { performer, .. } => {
                let _ = guarded(|| {
                    performer.observe(&packet);
                    Ok(())
                });
            }
            Slot::Threaded(w) => w.observe(packet),
        }
    }
}

/// A round whose Claude call is outstanding.
struct Pending {
    n: u64,
    mode: Mode,
    x: TokenSequence,
    m: Option<Metadata>,
    y: TokenSequence,
    truth: Position,
    zellig_elapsed: Duration,
}

pub struct Engine {
    config: EvaluationConfig,
    evaluation_id: String,
    abort: AbortHandle,
}

impl Engine {
    pub fn new(config: EvaluationConfig) -> Result<Self, ProtocolError> {
        config.validate()?;
        Ok(Engine { evaluation_id: config.derived_id(), config, abort: AbortHandle::default() })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.evaluation_id = id.into();
        self
    }

    pub fn with_abort(mut self, abort: AbortHandle) -> Self {
        self.abort = abort;
        self
    }

    pub fn evaluation_id(&self) -> &str {
        &self.evaluation_id
    }

    pub fn abort_handle(&self) -> AbortHandle {
        self.abort.clone()
    }

    /// Runs every round, streaming records to `sink`. A John failure or an
    /// abort ends the run early with a status; only config and sink errors
    /// are returned as `Err`.
    pub fn run(
        self,
        mut john: Box<dyn John>,
        zellig: Box<dyn Zellig>,
        claude: Box<dyn Claude>,
        sink: &mut dyn TranscriptSink,
    ) -> Result<Transcript, ProtocolError> {
        let schedule = self.config.validate()?;
        let header = TranscriptHeader {
            evaluation_id: self.evaluation_id.clone(),
            config: self.config.clone(),
            performers: PerformerSet {
                john: john.descriptor().clone(),
                zellig: zellig.descriptor().clone(),
                claude: claude.descriptor().clone(),
            },
            engine_version: crate::ENGINE_VERSION.to_string(),
        };
        sink.begin(&header)?;

        let limit = match self.config.deadline {
            Deadline::Logical => None,
            Deadline::WallClock(d) => Some(d.mul_f64(DEADLINE_GRACE)),
        };
        let threaded = limit.is_some() || self.config.pipelined;
        let mut run = Run {
            config: &self.config,
            logical: self.config.deadline.is_logical(),
            limit,
            john: john.as_mut(),
            zellig: Slot::new(ZelligCall(zellig), threaded, "zellig"),
            claude: Slot::new(ClaudeCall(claude), threaded, "claude"),
            records: Vec::with_capacity(schedule.len()),
            sink,
            abort: &self.abort,
        };

        let mut pending: Option<Pending> = None;
        let mut status = None;
        for (n, &mode) in schedule.modes.iter().enumerate() {
            let n = n as u64;
            if self.abort.is_aborted() {
                status = Some(TranscriptStatus::Aborted { reason: format!("aborted before round {n}") });
                break;
            }
            let Instance { x, m, .. } = match guarded(|| run.john.next_instance(n)) {
                Ok(inst) => inst,
                Err(e) => {
                    log::warn!("john failed at round {n}: {e}");
                    status = Some(TranscriptStatus::Incomplete { reason: format!("john failed at round {n}: {e}") });
                    break;
                }
            };
            run.zellig.issue(n, ZelligRequest { round: n, x: x.clone(), m: m.clone() });
            if let Some(p) = pending.take() {
                run.finish_claude(p)?;
            }

            let (y, forfeit, zellig_elapsed) = match run.zellig.wait(n, limit) {
                Outcome::Done(out, el) => {
                    let (y, forfeit) = resolve_zellig_timeout(&x, Some(out), false);
                    (y, forfeit, el)
                }
                Outcome::Late(el) => {
                    log::warn!("round {n}: zellig missed the deadline; forfeit");
                    (resolve_zellig_timeout(&x, None, true).0, true, el)
                }
                Outcome::Failed(msg, el) => {
                    log::warn!("round {n}: zellig failed ({msg}); forfeit");
                    (resolve_zellig_timeout(&x, None, true).0, true, el)
                }
            };

            if forfeit {
                let record = RoundRecord {
                    n,
                    mode,
                    x,
                    m,
                    y,
                    y_position: None,
                    choice: None,
                    z: None,
                    zellig_forfeit: true,
                    claude_defaulted: false,
                    zellig_elapsed_us: run.micros(zellig_elapsed),
                    claude_elapsed_us: 0,
                    claude_correct: true,
                };
                run.commit(record)?;
                continue;
            }

            let pair = permute_pair(n, &x, &y, m.clone(), &mut rng::stream(self.config.seed, "permute", n));
            run.claude.issue(n, pair.claude_request(self.config.claude_sees_metadata));
            let p = Pending { n, mode, x, m, y, truth: pair.truth, zellig_elapsed };
            if self.config.pipelined && mode == Mode::Opaque {
                pending = Some(p);
            } else {
                run.finish_claude(p)?;
            }
        }
        if let Some(p) = pending.take() {
            run.finish_claude(p)?;
        }
        if status.is_none() && run.records.len() < schedule.len() {
            status = Some(TranscriptStatus::Aborted { reason: format!("aborted after {} rounds", run.records.len()) });
        }
        run.sink.finish(status.as_ref())?;
        Ok(Transcript { header, records: run.records, status })
    }
}

struct Run<'a> {
    config: &'a EvaluationConfig,
    logical: bool,
    limit: Option<Duration>,
    john: &'a mut dyn John,
    zellig: Slot<ZelligCall>,
    claude: Slot<ClaudeCall>,
    records: Vec<RoundRecord>,
    sink: &'a mut dyn TranscriptSink,
    abort: &'a AbortHandle,
}

impl Run<'_> {
    fn micros(&self, d: Duration) -> u64 {
        if self.logical {
            0
        } else {
            d.as_micros().try_into().unwrap_or(u64::MAX)
        }
    }

    fn finish_claude(&mut self, p: Pending) -> Result<(), ProtocolError> {
        let n = p.n;
        let mut coin = rng::stream(self.config.seed, "claude-default", n);
        let (choice, defaulted, elapsed) = match self.claude.wait(n, self.limit) {
            Outcome::Done(c, el) => {
                let (pos, d) = resolve_claude_timeout(Some(c), false, &mut coin);
                (pos, d, el)
            }
            Outcome::Late(el) => {
                log::warn!("round {n}: claude missed the deadline; coin default");
                let (pos, d) = resolve_claude_timeout(None, true, &mut coin);
                (pos, d, el)
            }
            Outcome::Failed(msg, el) => {
                log::warn!("round {n}: claude failed ({msg}); coin default");
                let (pos, d) = resolve_claude_timeout(None, true, &mut coin);
                (pos, d, el)
            }
        };
        let z = if choice == p.truth { Item::Y } else { Item::X };
        let record = RoundRecord {
            n,
            mode: p.mode,
            x: p.x,
            m: p.m,
            y: p.y,
            y_position: Some(p.truth),
            choice: Some(choice),
            z: Some(z),
            zellig_forfeit: false,
            claude_defaulted: defaulted,
            zellig_elapsed_us: self.micros(p.zellig_elapsed),
            claude_elapsed_us: self.micros(elapsed),
            claude_correct: z == Item::Y,
        };
        self.commit(record)
    }

    /// Rounds resolved after an abort are dropped, not recorded.
    fn commit(&mut self, record: RoundRecord) -> Result<(), ProtocolError> {
        if self.abort.is_aborted() {
            log::info!("round {}: dropped after abort", record.n);
            return Ok(());
        }
        self.sink.record(&record)?;
        if record.mode == Mode::Transparent {
            let john_packet = emit_transparency(&record, Role::John)?;
            let _ = guarded(|| {
                self.john.observe(&john_packet);
                Ok(())
            });
            self.zellig.observe(emit_transparency(&record, Role::Zellig)?);
            self.claude.observe(emit_transparency(&record, Role::Claude)?);
        }
        self.records.push(record);
        Ok(())
    }
}

/// Runs `config` under its content-derived evaluation id.
pub fn run_evaluation(
    config: &EvaluationConfig,
    john: Box<dyn John>,
    zellig: Box<dyn Zellig>,
    claude: Box<dyn Claude>,
    sink: &mut dyn TranscriptSink,
) -> Result<Transcript, ProtocolError> {
    Engine::new(config.clone())?.run(john, zellig, claude, sink)
}
