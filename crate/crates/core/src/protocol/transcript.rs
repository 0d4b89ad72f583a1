//! Round records and the JSONL transcript: a header line, one line per round,
//! and a status line only when the run stopped early.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{EvaluationConfig, Item, Mode};
use crate::performers::{PerformerDescriptor, Position};
use crate::textdata::{Metadata, TokenSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundRecord {
    pub n: u64,
    pub mode: Mode,
    pub x: TokenSequence,
    pub m: Option<Metadata>,
    pub y: TokenSequence,
    /// Slot `y` was shown in; `None` when Zellig forfeited.
    pub y_position: Option<Position>,
    /// Slot Claude called fake; `None` when Claude was not consulted.
    pub choice: Option<Position>,
    pub z: Option<Item>,
    pub zellig_forfeit: bool,
    pub claude_defaulted: bool,
    /// Zero in logical-time runs.
    pub zellig_elapsed_us: u64,
    pub claude_elapsed_us: u64,
    pub claude_correct: bool,
}

impl RoundRecord {
    /// Checks the fields that must agree with each other.
    pub fn consistency_error(&self) -> Option<String> {
        let n = self.n;
        if self.zellig_forfeit {
            if self.y != self.x {
                return Some(format!("round {n}: forfeit with y != x"));
            }
            if !self.claude_correct || self.choice.is_some() || self.z.is_some() || self.y_position.is_some() {
                return Some(format!("round {n}: forfeit must credit Claude without a choice"));
            }
            return None;
        }
        let (Some(choice), Some(truth), Some(z)) = (self.choice, self.y_position, self.z) else {
            return Some(format!("round {n}: missing choice, y_position or z"));
        };
        let expected_z = if choice == truth { Item::Y } else { Item::X };
        if z != expected_z {
            return Some(format!("round {n}: z does not match choice and y_position"));
        }
        if self.claude_correct != (z == Item::Y) {
            return Some(format!("round {n}: claude_correct does not match z"));
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerformerSet {
    pub john: PerformerDescriptor,
    pub zellig: PerformerDescriptor,
    pub claude: PerformerDescriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptHeader {
    pub evaluation_id: String,
    pub config: EvaluationConfig,
    pub performers: PerformerSet,
    pub engine_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "status", rename_all = "snake_case")]
pub enum TranscriptStatus {
    /// A performer failure ended the run early.
    Incomplete { reason: String },
    /// Stopped from outside (shutdown, cancellation, restart).
    Aborted { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub header: TranscriptHeader,
    pub records: Vec<RoundRecord>,
    /// `None` for a complete run.
    pub status: Option<TranscriptStatus>,
}

#[derive(Debug, thiserror::Error)]
pub enum TranscriptError {
    #[error("transcript is empty")]
    Empty,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Transcript {
    pub fn is_complete(&self) -> bool {
        self.status.is_none()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        write_line(&mut w, &self.header)?;
        for r in &self.records {
            write_line(&mut w, r)?;
        }
        if let Some(s) = &self.status {
            write_line(&mut w, s)?;
        }
        w.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, TranscriptError> {
        let mut lines = reader.lines().enumerate().filter(|(_, l)| match l {
            Ok(s) => !s.trim().is_empty(),
            Err(_) => true,
        });
        let (_, first) = lines.next().ok_or(TranscriptError::Empty)?;
        let header: TranscriptHeader = parse_line(1, &first?)?;
        let mut records = Vec::new();
        let mut status = None;
        for (i, line) in lines {
            let line = line?;
            let lineno = i + 1;
            if status.is_some() {
                return Err(TranscriptError::Parse { line: lineno, message: "content after the status line".into() });
            }
            if let Ok(r) = serde_json::from_str::<RoundRecord>(&line) {
                records.push(r);
            } else {
                status = Some(parse_line::<TranscriptStatus>(lineno, &line).map_err(|_| {
                    let message =
                        serde_json::from_str::<RoundRecord>(&line).err().map(|e| e.to_string()).unwrap_or_default();
                    TranscriptError::Parse { line: lineno, message }
                })?);
            }
        }
        Ok(Transcript { header, records, status })
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TranscriptError> {
        Self::read_jsonl(text.as_bytes())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, TranscriptError> {
        let f = std::fs::File::open(path)?;
        Self::read_jsonl(io::BufReader::new(f))
    }
}

/// Structural checks that need no performers: record numbering and modes
/// against the schedule, internal consistency of each record, and the seeded
/// presentation and default coins. Returns every problem found.
pub fn verify(transcript: &Transcript) -> Vec<String> {
    let mut problems = Vec::new();
    let config = &transcript.header.config;
    let schedule = match super::make_schedule(config.schedule, config.rounds) {
        Ok(s) => s,
        Err(e) => return vec![format!("header config: {e}")],
    };
    if transcript.is_complete() && transcript.records.len() != schedule.len() {
        problems.push(format!(
            "complete transcript has {} records, schedule needs {}",
            transcript.records.len(),
            schedule.len()
        ));
    }
    if transcript.records.len() > schedule.len() {
        problems.push("more records than the schedule allows".into());
    }
    for (i, r) in transcript.records.iter().enumerate() {
        if r.n != i as u64 {
            problems.push(format!("record {i} is numbered {}", r.n));
            continue;
        }
        if schedule.modes.get(i) != Some(&r.mode) {
            problems.push(format!("round {i}: mode does not match the schedule"));
        }
        if let Some(p) = r.consistency_error() {
            problems.push(p);
        }
        if let Some(truth) = r.y_position {
            let coin = Position::coin(&mut crate::rng::stream(config.seed, "permute", r.n));
            if coin != truth {
                problems.push(format!("round {i}: y_position differs from the seeded permutation"));
            }
        }
        if r.claude_defaulted {
            let coin = Position::coin(&mut crate::rng::stream(config.seed, "claude-default", r.n));
            if r.choice != Some(coin) {
                problems.push(format!("round {i}: defaulted choice differs from the seeded coin"));
            }
        }
    }
    problems
}

fn write_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> io::Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")
}

fn parse_line<T: for<'de> Deserialize<'de>>(line: usize, text: &str) -> Result<T, TranscriptError> {
    serde_json::from_str(text).map_err(|e| TranscriptError::Parse { line, message: e.to_string() })
}

/// Receives the transcript as the engine produces it, in round order.
pub trait TranscriptSink {
    fn begin(&mut self, header: &TranscriptHeader) -> io::Result<()>;
    fn record(&mut self, record: &RoundRecord) -> io::Result<()>;
    fn finish(&mut self, status: Option<&TranscriptStatus>) -> io::Result<()>;
}

pub struct NullSink;

impl TranscriptSink for NullSink {
    fn begin(&mut self, _: &TranscriptHeader) -> io::Result<()> {
        Ok(())
    }

    fn record(&mut self, _: &RoundRecord) -> io::Result<()> {
        Ok(())
    }

    fn finish(&mut self, _: Option<&TranscriptStatus>) -> io::Result<()> {
        Ok(())
    }
}

/// Streams JSONL, flushing after every line so a crash loses at most the
/// round in flight.
pub struct JsonlSink<W: Write> {
    out: W,
}

impl<W: Write> JsonlSink<W> {
    pub fn new(out: W) -> Self {
        JsonlSink { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> TranscriptSink for JsonlSink<W> {
    fn begin(&mut self, header: &TranscriptHeader) -> io::Result<()> {
        write_line(&mut self.out, header)?;
        self.out.flush()
    }

    fn record(&mut self, record: &RoundRecord) -> io::Result<()> {
        write_line(&mut self.out, record)?;
        self.out.flush()
    }

    fn finish(&mut self, status: Option<&TranscriptStatus>) -> io::Result<()> {
        if let Some(s) = status {
            write_line(&mut self.out, s)?;
        }
        self.out.flush()
    }
}
