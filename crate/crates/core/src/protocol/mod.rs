//! The round protocol.
//!
//! Each round: John emits `(x, m)`; Zellig turns `x` (and `m`, when present)
//! into `y` under a deadline; the pair is shown to Claude in seeded random
//! order, with `m` only if the configuration allows it; Claude picks the item
//! it believes is fake under the same deadline. A late or crashed Zellig
//! forfeits the round (`y = x`, Claude credited without being asked); a late
//! or crashed Claude gets a seeded fair coin.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::performers::{ClaudeChoice, ClaudeRequest, Position, Role, ZelligOutput};
use crate::textdata::{Metadata, TokenSequence};

mod engine;
mod transcript;

pub use engine::{run_evaluation, AbortHandle, Engine, DEADLINE_GRACE};
pub use transcript::{
    verify, JsonlSink, NullSink, PerformerSet, RoundRecord, Transcript, TranscriptError, TranscriptHeader,
    TranscriptSink, TranscriptStatus,
};

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("protocol violation: {0}")]
    Violation(String),
    #[error("transcript sink failed: {0}")]
    Sink(#[from] std::io::Error),
}

impl ProtocolError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        ProtocolError::Config { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Transparent,
    Opaque,
}

/// Which underlying item Claude's choice points at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Item {
    X,
    Y,
}

/// Observation rounds before scoring begins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScheduleKind {
    #[default]
    Zero,
    Supervised {
        transparent: u64,
    },
    Semi {
        transparent: u64,
        opaque: u64,
    },
    Unsupervised {
        opaque: u64,
    },
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleKind::Zero => f.write_str("zero"),
            ScheduleKind::Supervised { transparent } => write!(f, "supervised:{transparent}"),
            ScheduleKind::Semi { transparent, opaque } => write!(f, "semi:{transparent},{opaque}"),
            ScheduleKind::Unsupervised { opaque } => write!(f, "unsupervised:{opaque}"),
        }
    }
}

impl FromStr for ScheduleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        let nums: Vec<u64> = if args.is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|a| a.trim().parse::<u64>().map_err(|e| format!("{s:?}: {e}")))
                .collect::<Result<_, _>>()?
        };
        match (kind.trim(), nums.as_slice()) {
            ("zero", []) => Ok(ScheduleKind::Zero),
            ("supervised", [t]) => Ok(ScheduleKind::Supervised { transparent: *t }),
            ("semi", [t, o]) => Ok(ScheduleKind::Semi { transparent: *t, opaque: *o }),
            ("unsupervised", [o]) => Ok(ScheduleKind::Unsupervised { opaque: *o }),
            _ => Err(format!("unknown schedule {s:?}; expected zero, supervised:N, semi:N,M or unsupervised:N")),
        }
    }
}

impl Serialize for ScheduleKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ScheduleKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub modes: Vec<Mode>,
    pub scored_from: usize,
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn scored_rounds(&self) -> usize {
        self.modes.len() - self.scored_from
    }

    pub fn is_scored(&self, round: u64) -> bool {
        round as usize >= self.scored_from
    }
}

pub fn make_schedule(kind: ScheduleKind, scored: u64) -> Result<Schedule, ProtocolError> {
    if scored == 0 {
        return Err(ProtocolError::config("rounds", "at least one scored round is required"));
    }
    let (transparent, opaque) = match kind {
        ScheduleKind::Zero => (0, 0),
        ScheduleKind::Supervised { transparent } => (transparent, 0),
        ScheduleKind::Semi { transparent, opaque } => (transparent, opaque),
        ScheduleKind::Unsupervised { opaque } => (0, opaque),
    };
    let mut modes = vec![Mode::Transparent; transparent as usize];
    modes.extend(std::iter::repeat_n(Mode::Opaque, (opaque + scored) as usize));
    Ok(Schedule { scored_from: (transparent + opaque) as usize, modes })
}

/// Per-call time limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Deadline {
    /// Untimed, reproducible mode: every call is on time and no wall-clock
    /// reading reaches the transcript.
    #[default]
    Logical,
    WallClock(Duration),
}

impl Deadline {
    pub fn is_logical(&self) -> bool {
        matches!(self, Deadline::Logical)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DeadlineRepr {
    Named(String),
    Millis(u64),
}

impl Serialize for Deadline {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Deadline::Logical => DeadlineRepr::Named("logical".into()),
            Deadline::WallClock(d) => DeadlineRepr::Millis(d.as_millis() as u64),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Deadline {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match DeadlineRepr::deserialize(d)? {
            DeadlineRepr::Named(s) if s == "logical" => Ok(Deadline::Logical),
            DeadlineRepr::Named(s) => {
                Err(serde::de::Error::custom(format!("deadline must be \"logical\" or milliseconds, got {s:?}")))
            }
            DeadlineRepr::Millis(ms) => Ok(Deadline::WallClock(Duration::from_millis(ms))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

/// A performer slot: a registry name plus its parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binding {
    pub name: String,
    #[serde(flatten)]
    pub params: BTreeMap<String, ParamValue>,
}

impl Binding {
    pub fn new(name: impl Into<String>) -> Self {
        Binding { name: name.into(), params: BTreeMap::new() }
    }

    pub fn with(mut self, key: &str, value: impl Into<ParamValue>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn str_param(&self, key: &str) -> Option<&str> {
        match self.params.get(key) {
            Some(ParamValue::Str(s)) => Some(s),
            _ => None,
        }
    }

    pub fn int_param(&self, key: &str) -> Option<i64> {
        match self.params.get(key) {
            Some(ParamValue::Int(i)) => Some(*i),
            _ => None,
        }
    }

    pub fn float_param(&self, key: &str) -> Option<f64> {
        match self.params.get(key) {
            Some(ParamValue::Float(f)) => Some(*f),
            Some(ParamValue::Int(i)) => Some(*i as f64),
            _ => None,
        }
    }
}

impl From<&str> for ParamValue {
    fn from(s: &str) -> Self {
        ParamValue::Str(s.to_string())
    }
}

impl From<String> for ParamValue {
    fn from(s: String) -> Self {
        ParamValue::Str(s)
    }
}

impl From<i64> for ParamValue {
    fn from(i: i64) -> Self {
        ParamValue::Int(i)
    }
}

impl From<f64> for ParamValue {
    fn from(f: f64) -> Self {
        ParamValue::Float(f)
    }
}

impl From<bool> for ParamValue {
    fn from(b: bool) -> Self {
        ParamValue::Bool(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Scored rounds `N`.
    pub rounds: u64,
    #[serde(default)]
    pub deadline: Deadline,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub schedule: ScheduleKind,
    #[serde(default)]
    pub claude_sees_metadata: bool,
    /// Overlap Zellig's round `n` with Claude's round `n - 1`.
    #[serde(default)]
    pub pipelined: bool,
    pub john: Binding,
    pub zellig: Binding,
    pub claude: Binding,
}

impl EvaluationConfig {
    pub fn validate(&self) -> Result<Schedule, ProtocolError> {
        if let Deadline::WallClock(d) = self.deadline {
            if d.is_zero() {
                return Err(ProtocolError::config("deadline", "must be positive in wall-clock mode"));
            }
        }
        for (field, b) in [("john", &self.john), ("zellig", &self.zellig), ("claude", &self.claude)] {
            if b.name.trim().is_empty() {
                return Err(ProtocolError::config(format!("{field}.name"), "performer name is empty"));
            }
        }
        make_schedule(self.schedule, self.rounds)
    }

    /// Content-derived id, stable across runs of the same configuration.
    pub fn derived_id(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        format!("eval-{hex}")
    }
}

/// The pair as presented to Claude, plus the hidden truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ChallengePair {
    pub round: u64,
    pub items: [TokenSequence; 2],
    /// Slot holding `y`. Never shown to Claude.
    pub truth: Position,
    pub m: Option<Metadata>,
}

impl ChallengePair {
    pub fn claude_request(&self, sees_metadata: bool) -> ClaudeRequest {
        ClaudeRequest {
            round: self.round,
            items: self.items.clone(),
            m: if sees_metadata { self.m.clone() } else { None },
        }
    }
}

/// Fair seeded coin for presentation order; blind to content.
pub fn permute_pair<R: Rng + ?Sized>(
    round: u64,
    x: &TokenSequence,
    y: &TokenSequence,
    m: Option<Metadata>,
    rng: &mut R,
) -> ChallengePair {
    let truth = Position::coin(rng);
    let items = match truth {
        Position::First => [y.clone(), x.clone()],
        Position::Second => [x.clone(), y.clone()],
    };
    ChallengePair { round, items, truth, m }
}

/// `(y, forfeit)`. Late or missing output forfeits with `y = x`; an
/// on-time `y == x` is not a forfeit and still goes to Claude.
pub fn resolve_zellig_timeout(
    x: &TokenSequence,
    output: Option<ZelligOutput>,
    timed_out: bool,
) -> (TokenSequence, bool) {
    match output {
        Some(out) if !timed_out => (out.y, false),
        _ => (x.clone(), true),
    }
}

/// `(choice, defaulted)`. Late or missing choices become a seeded coin.
pub fn resolve_claude_timeout<R: Rng + ?Sized>(
    choice: Option<ClaudeChoice>,
    timed_out: bool,
    rng: &mut R,
) -> (Position, bool) {
    match choice {
        Some(c) if !timed_out => (c.position, false),
        _ => (Position::coin(rng), true),
    }
}

/// What a performer learns after a transparent round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "viewer", rename_all = "snake_case")]
pub enum TransparencyPacket {
    /// Labeled real/fake pair.
    Claude { round: u64, m: Option<Metadata>, x: TokenSequence, y: TokenSequence },
    /// Claude's response to this Zellig's output.
    Zellig { round: u64, m: Option<Metadata>, x: TokenSequence, y: TokenSequence, z: Option<Item> },
    /// What the other two did with this John's instance.
    John { round: u64, y: TokenSequence, z: Option<Item> },
}

pub fn emit_transparency(record: &RoundRecord, viewer: Role) -> Result<TransparencyPacket, ProtocolError> {
    if record.mode != Mode::Transparent {
        return Err(ProtocolError::Violation(format!("round {} is opaque; nothing may be revealed", record.n)));
    }
    Ok(match viewer {
        Role::Claude => TransparencyPacket::Claude {
            round: record.n,
            m: record.m.clone(),
            x: record.x.clone(),
            y: record.y.clone(),
        },
        Role::Zellig => TransparencyPacket::Zellig {
            round: record.n,
            m: record.m.clone(),
            x: record.x.clone(),
            y: record.y.clone(),
            z: record.z,
        },
        Role::John => TransparencyPacket::John { round: record.n, y: record.y.clone(), z: record.z },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::textdata::{tokenize, Scheme};
    use Mode::{Opaque as O, Transparent as T};

    fn seq(text: &str) -> TokenSequence {
        tokenize(text, Scheme::Whitespace).unwrap()
    }

    #[test]
    fn schedule_layouts() {
        let s = make_schedule(ScheduleKind::Supervised { transparent: 2 }, 3).unwrap();
        assert_eq!((s.modes.as_slice(), s.scored_from), ([T, T, O, O, O].as_slice(), 2));
        let s = make_schedule(ScheduleKind::Zero, 1).unwrap();
        assert_eq!((s.modes.as_slice(), s.scored_from), ([O].as_slice(), 0));
        let s = make_schedule(ScheduleKind::Semi { transparent: 1, opaque: 1 }, 2).unwrap();
        assert_eq!((s.modes.as_slice(), s.scored_from), ([T, O, O, O].as_slice(), 2));
        let s = make_schedule(ScheduleKind::Unsupervised { opaque: 2 }, 1).unwrap();
        assert_eq!((s.modes.as_slice(), s.scored_from), ([O, O, O].as_slice(), 2));
        match make_schedule(ScheduleKind::Zero, 0) {
            Err(ProtocolError::Config { field, .. }) => assert_eq!(field, "rounds"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn scored_rounds_are_never_transparent() {
        for kind in ["zero", "supervised:3", "semi:2,2", "unsupervised:4"] {
            let s = make_schedule(kind.parse().unwrap(), 5).unwrap();
            assert!(s.modes[s.scored_from..].iter().all(|m| *m == O), "{kind}");
        }
    }

    #[test]
    fn schedule_kind_strings() {
        for s in ["zero", "supervised:2", "semi:1,3", "unsupervised:7"] {
            assert_eq!(s.parse::<ScheduleKind>().unwrap().to_string(), s);
        }
        assert!("semi:1".parse::<ScheduleKind>().is_err());
        assert!("bogus".parse::<ScheduleKind>().is_err());
    }

    #[test]
    fn permutation_is_fair_and_replayable() {
        let (x, y) = (seq("a b"), seq("b a"));
        let n = 10_000;
        let y_first = (0..n)
            .filter(|&r| permute_pair(r, &x, &y, None, &mut rng::stream(99, "permute", r)).truth == Position::First)
            .count();
        let rate = y_first as f64 / n as f64;
        assert!((0.47..=0.53).contains(&rate), "{rate}");

        let a = permute_pair(5, &x, &y, None, &mut rng::stream(1, "permute", 5));
        let b = permute_pair(5, &x, &y, None, &mut rng::stream(1, "permute", 5));
        assert_eq!(a, b);
        assert_eq!(a.items[a.truth.index()], y);

        let same = permute_pair(0, &x, &x, None, &mut rng::stream(1, "permute", 0));
        assert_eq!(same.items, [x.clone(), x.clone()]);
    }

    #[test]
    fn zellig_timeouts() {
        let x = seq("a b");
        let out = |y: &str| ZelligOutput { y: seq(y), elapsed: Duration::from_millis(1), declared_distance: None };
        assert_eq!(resolve_zellig_timeout(&x, Some(out("b a")), true), (x.clone(), true));
        assert_eq!(resolve_zellig_timeout(&x, None, false), (x.clone(), true));
        assert_eq!(resolve_zellig_timeout(&x, Some(out("b a")), false), (seq("b a"), false));
        assert_eq!(resolve_zellig_timeout(&x, Some(out("a b")), false), (x.clone(), false));
    }

    #[test]
    fn claude_timeouts() {
        let c = ClaudeChoice { position: Position::First, elapsed: Duration::from_millis(1) };
        assert_eq!(resolve_claude_timeout(Some(c), false, &mut rng::stream(0, "d", 0)), (Position::First, false));
        let a = resolve_claude_timeout(Some(c), true, &mut rng::stream(3, "d", 0));
        let b = resolve_claude_timeout(None, false, &mut rng::stream(3, "d", 0));
        assert!(a.1 && b.1);
        assert_eq!(a, b);

        // a defaulted Claude is right about half the time whatever the truth
        let n = 10_000;
        let correct = (0..n)
            .filter(|&r| {
                let truth = permute_pair(r, &seq("a b"), &seq("b a"), None, &mut rng::stream(5, "permute", r)).truth;
                resolve_claude_timeout(None, true, &mut rng::stream(5, "claude-default", r)).0 == truth
            })
            .count();
        let rate = correct as f64 / n as f64;
        assert!((0.47..=0.53).contains(&rate), "{rate}");
    }

    #[test]
    fn deadline_serde() {
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct W {
            d: Deadline,
        }
        let logical: W = serde_json::from_str(r#"{"d": "logical"}"#).unwrap();
        assert_eq!(logical.d, Deadline::Logical);
        let timed: W = serde_json::from_str(r#"{"d": 250}"#).unwrap();
        assert_eq!(timed.d, Deadline::WallClock(Duration::from_millis(250)));
        assert_eq!(serde_json::to_string(&timed).unwrap(), r#"{"d":250}"#);
        assert!(serde_json::from_str::<W>(r#"{"d": "soon"}"#).is_err());
    }
}
