//! Wire types for the HTTP API. Every body carries `schema_version`; request
//! bodies reject unknown fields.

use serde::{Deserialize, Serialize};

use arena_core::performers::{Position, Role};
use arena_core::protocol::{EvaluationConfig, TranscriptStatus, TransparencyPacket};
use arena_core::scoring::ScoreReport;
use arena_core::textdata::{Metadata, TokenSequence};

pub const SCHEMA_VERSION: u32 = 1;

/// Binding name that makes a Zellig or Claude slot an HTTP client.
pub const REMOTE: &str = "remote";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Created,
    Running,
    AwaitingZ,
    AwaitingC,
    Finished,
    Aborted,
}

impl SessionState {
    pub fn is_terminal(self) -> bool {
        matches!(self, SessionState::Finished | SessionState::Aborted)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateEvaluation {
    pub schema_version: u32,
    pub config: EvaluationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationView {
    pub schema_version: u32,
    pub evaluation_id: String,
    pub state: SessionState,
    /// Echo of the configuration with defaults filled in.
    pub config: EvaluationConfig,
    pub rounds_completed: u64,
    pub total_rounds: u64,
    pub status: Option<TranscriptStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZChallenge {
    pub schema_version: u32,
    pub evaluation_id: String,
    pub round: u64,
    pub x: TokenSequence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<Metadata>,
    /// Milliseconds left; absent in logical-time runs.
    pub deadline_ms: Option<u64>,
    /// Every transparency packet addressed to this Zellig so far.
    pub feedback: Vec<TransparencyPacket>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZSubmit {
    pub schema_version: u32,
    pub evaluation_id: String,
    pub round: u64,
    pub y: TokenSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CChallenge {
    pub schema_version: u32,
    pub evaluation_id: String,
    pub round: u64,
    pub items: [TokenSequence; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<Metadata>,
    pub deadline_ms: Option<u64>,
    pub feedback: Vec<TransparencyPacket>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CSubmit {
    pub schema_version: u32,
    pub evaluation_id: String,
    pub round: u64,
    /// Index of the item believed fake: 0 or 1.
    pub choice: Position,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub schema_version: u32,
    pub evaluation_id: String,
    pub round: u64,
    pub accepted: bool,
    /// For Claude submissions: whether the persisted record used the
    /// submitted choice (false when it arrived after the engine defaulted).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recorded: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreView {
    pub schema_version: u32,
    pub evaluation_id: String,
    pub state: SessionState,
    /// `None` until the first scored round completes.
    pub report: Option<ScoreReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListedPerformer {
    pub role: Role,
    pub name: String,
    pub params: Vec<String>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformerListing {
    pub schema_version: u32,
    pub performers: Vec<ListedPerformer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub schema_version: u32,
    /// Machine-readable code: `invalid`, `not_found`, `not_ready`,
    /// `wrong_round`, `resolved`, `duplicate`, `closed`, `internal`.
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}
