//! Performer roles and the baseline performers.
//!
//! The three roles are traits. Each baseline is a plain function (the
//! operation itself) plus a small struct that binds it to a seed and its
//! resources so the engine can drive it round by round. Per-round randomness
//! is drawn from `rng::stream(seed, name, round)`, which makes every baseline
//! a pure function of its inputs and seed.

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::lm::LmError;
use crate::protocol::TransparencyPacket;
use crate::textdata::{Instance, Metadata, TextError, TokenSequence};

mod claude;
mod john;
mod search;
mod zellig;

pub use claude::{claude_choice_from_scores, claude_lm, claude_uniform, ClaudeNgram, ClaudeUniform};
pub use john::{JohnIid, JohnSequential};
pub use search::{
    brute_force_argmax_oracle, zellig_search, zellig_search_with_stats, SearchMode, SearchStats, ZelligSearch,
    ORACLE_MAX_ALPHABET, ORACLE_MAX_DELTA, ORACLE_MAX_LEN,
};
pub use zellig::{zellig_copy, zellig_sampler, zellig_swap, ZelligCopy, ZelligSampler, ZelligSwap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    John,
    Zellig,
    Claude,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::John => "john",
            Role::Zellig => "zellig",
            Role::Claude => "claude",
        })
    }
}

/// Who a performer is and what it was built from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerformerDescriptor {
    pub role: Role,
    pub name: String,
    /// Training data, models, or other resources the performer relies on.
    pub resources: String,
    pub version: String,
}

impl PerformerDescriptor {
    pub fn new(role: Role, name: impl Into<String>, resources: impl Into<String>) -> Result<Self, PerformerError> {
        let resources = resources.into();
        if resources.trim().is_empty() {
            return Err(PerformerError::Precondition("performers must declare their resources".into()));
        }
        Ok(PerformerDescriptor { role, name: name.into(), resources, version: env!("CARGO_PKG_VERSION").into() })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PerformerError {
    #[error("no candidate corruption exists: {0}")]
    NoCandidate(String),
    #[error("oracle input too large: {0}")]
    OracleTooLarge(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("performer timed out")]
    Timeout,
    #[error("performer failed: {0}")]
    Crashed(String),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Text(#[from] TextError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZelligOutput {
    pub y: TokenSequence,
    pub elapsed: Duration,
    /// When present, equals the token-Hamming distance from `x` to `y`.
    pub declared_distance: Option<usize>,
}

/// Presentation slot of a challenge item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Position {
    First,
    Second,
}

impl Position {
    pub fn index(self) -> usize {
        match self {
            Position::First => 0,
            Position::Second => 1,
        }
    }

    pub fn other(self) -> Position {
        match self {
            Position::First => Position::Second,
            Position::Second => Position::First,
        }
    }

    pub fn from_index(index: usize) -> Option<Position> {
        match index {
            0 => Some(Position::First),
            1 => Some(Position::Second),
            _ => None,
        }
    }

    pub(crate) fn coin<R: rand::Rng + ?Sized>(rng: &mut R) -> Position {
        if rng.random::<bool>() {
            Position::First
        } else {
            Position::Second
        }
    }
}

impl From<Position> for u8 {
    fn from(p: Position) -> u8 {
        p.index() as u8
    }
}

impl TryFrom<u8> for Position {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Position::from_index(v as usize).ok_or_else(|| format!("position must be 0 or 1, got {v}"))
    }
}

/// Claude's pick of the *fake* item.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClaudeChoice {
    pub position: Position,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZelligRequest {
    pub round: u64,
    pub x: TokenSequence,
    pub m: Option<Metadata>,
}

/// What Claude sees: two items in presentation order, never the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaudeRequest {
    pub round: u64,
    pub items: [TokenSequence; 2],
    pub m: Option<Metadata>,
}

pub trait John: Send {
    fn descriptor(&self) -> &PerformerDescriptor;
    fn next_instance(&mut self, round: u64) -> Result<Instance, PerformerError>;
    fn observe(&mut self, _packet: &TransparencyPacket) {}
}

pub trait Zellig: Send {
    fn descriptor(&self) -> &PerformerDescriptor;
    fn corrupt(&mut self, request: &ZelligRequest) -> Result<ZelligOutput, PerformerError>;
    fn observe(&mut self, _packet: &TransparencyPacket) {}
}

pub trait Claude: Send {
    fn descriptor(&self) -> &PerformerDescriptor;
    fn choose(&mut self, request: &ClaudeRequest) -> Result<ClaudeChoice, PerformerError>;
    fn observe(&mut self, _packet: &TransparencyPacket) {}
}
