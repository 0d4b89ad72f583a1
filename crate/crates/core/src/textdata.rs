//! Corpora, tokenization, metadata sidecars and the baseline Johns.
//!
//! A corpus file is UTF-8 text with one instance per LF-terminated line.
//! Instance ids are zero-based line indices; blank lines are skipped but
//! still consume an index, so ids stay stable when a sidecar refers to them.
//! Metadata lives in a JSON-lines sidecar of `{"id": <int>, "meta": {..}}`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum TextError {
    #[error("instance text is empty or whitespace-only")]
    EmptyInstance,
    #[error("invalid token {0:?}: tokens must be non-empty and contain no whitespace")]
    InvalidToken(String),
    #[error("corpus contains no instances")]
    CorpusEmpty,
    #[error("corpus provenance must be declared")]
    MissingProvenance,
    #[error("duplicate instance id {0}")]
    DuplicateId(u64),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: invalid UTF-8")]
    InvalidUtf8 { path: String, line: usize },
    #[error("sidecar record {record}: {message}")]
    SidecarParse { record: usize, message: String },
    #[error("cursor {cursor} out of range for corpus of {len} instances")]
    CursorOutOfRange { cursor: usize, len: usize },
}

/// A non-empty sequence of whitespace-free tokens.
///
/// Serializes as a JSON array of strings; the plain-text form joins tokens
/// with single spaces and round-trips through [`tokenize`] with
/// [`Scheme::Whitespace`].
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self, TextError> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(TextError::EmptyInstance);
        }
        if let Some(bad) = tokens.iter().find(|t| t.is_empty() || t.chars().any(char::is_whitespace)) {
            return Err(TextError::InvalidToken(bad.clone()));
        }
        Ok(TokenSequence(tokens))
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.0
    }

    /// Copy with position `index` replaced by `token`.
    pub(crate) fn with_token(&self, index: usize, token: &str) -> TokenSequence {
        let mut tokens = self.0.clone();
        tokens[index] = token.to_string();
        TokenSequence(tokens)
    }

    /// Space-joined text form.
    pub fn to_text(&self) -> String {
        self.0.join(" ")
    }

    /// Token-level Hamming distance; `None` when lengths differ.
    pub fn hamming(&self, other: &TokenSequence) -> Option<usize> {
        (self.len() == other.len()).then(|| self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count())
    }
}

impl TryFrom<Vec<String>> for TokenSequence {
    type Error = TextError;

    fn try_from(tokens: Vec<String>) -> Result<Self, Self::Error> {
        TokenSequence::new(tokens)
    }
}

impl From<TokenSequence> for Vec<String> {
    fn from(seq: TokenSequence) -> Self {
        seq.0
    }
}

impl fmt::Debug for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Whitespace,
    WhitespaceLowercase,
}

pub fn tokenize(text: &str, scheme: Scheme) -> Result<TokenSequence, TextError> {
    let tokens: Vec<String> = match scheme {
        Scheme::Whitespace => text.split_whitespace().map(str::to_string).collect(),
        Scheme::WhitespaceLowercase => text.split_whitespace().map(str::to_lowercase).collect(),
    };
    // lowercasing never introduces whitespace, so `new` only rejects emptiness
    TokenSequence::new(tokens)
}

pub type Metadata = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: u64,
    pub x: TokenSequence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<Metadata>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub lines: usize,
    pub skipped_blank: usize,
}

/// An immutable, shareable collection of instances.
#[derive(Debug, Clone)]
pub struct CorpusHandle {
    instances: Vec<Instance>,
    by_id: HashMap<u64, usize>,
    vocab: BTreeSet<String>,
    provenance: String,
    report: LoadReport,
}

impl CorpusHandle {
    pub fn from_instances(instances: Vec<Instance>, provenance: impl Into<String>) -> Result<Self, TextError> {
        let provenance = provenance.into();
        if provenance.trim().is_empty() {
            return Err(TextError::MissingProvenance);
        }
        if instances.is_empty() {
            return Err(TextError::CorpusEmpty);
        }
        let mut by_id = HashMap::with_capacity(instances.len());
        for (i, inst) in instances.iter().enumerate() {
            if by_id.insert(inst.id, i).is_some() {
                return Err(TextError::DuplicateId(inst.id));
            }
        }
        let vocab = instances.iter().flat_map(|i| i.x.tokens().iter().cloned()).collect();
        Ok(CorpusHandle { instances, by_id, vocab, provenance, report: LoadReport::default() })
    }

    /// Builds a corpus from in-memory lines using the same rules as [`load_corpus`].
    pub fn from_lines<'a>(
        lines: impl IntoIterator<Item = &'a str>,
        scheme: Scheme,
        provenance: impl Into<String>,
    ) -> Result<Self, TextError> {
        let mut instances = Vec::new();
        let mut report = LoadReport::default();
        for (index, line) in lines.into_iter().enumerate() {
            report.lines += 1;
            match tokenize(line, scheme) {
                Ok(x) => instances.push(Instance { id: index as u64, x, m: None }),
                Err(TextError::EmptyInstance) => report.skipped_blank += 1,
                Err(e) => return Err(e),
            }
        }
        let mut corpus = Self::from_instances(instances, provenance)?;
        corpus.report = report;
        Ok(corpus)
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&Instance> {
        self.by_id.get(&id).map(|&i| &self.instances[i])
    }

    pub fn vocab(&self) -> &BTreeSet<String> {
        &self.vocab
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn load_report(&self) -> &LoadReport {
        &self.report
    }

    /// Token sequences in corpus order.
    pub fn sequences(&self) -> impl Iterator<Item = &TokenSequence> {
        self.instances.iter().map(|i| &i.x)
    }
}

pub fn load_corpus(path: impl AsRef<Path>, scheme: Scheme) -> Result<CorpusHandle, TextError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| TextError::Io { path: display.clone(), source })?;
    let mut lines = Vec::new();
    let body = bytes.strip_suffix(b"\n").unwrap_or(&bytes);
    if !bytes.is_empty() {
        for (index, raw) in body.split(|&b| b == b'\n').enumerate() {
            let line = std::str::from_utf8(raw)
                .map_err(|_| TextError::InvalidUtf8 { path: display.clone(), line: index + 1 })?;
            lines.push(line);
        }
    }
    CorpusHandle::from_lines(lines, scheme, format!("file:{display}"))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SidecarRecord {
    id: u64,
    meta: Metadata,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SidecarReport {
    pub matched: usize,
    pub unmatched_ids: Vec<u64>,
    /// Ids with more than one record; the last record won.
    pub duplicate_ids: Vec<u64>,
}

/// Joins sidecar metadata onto a corpus by instance id.
///
/// Unmatched records are reported, not fatal. Duplicate records for one id
/// resolve to the last one, with a warning.
pub fn attach_metadata(
    corpus: &CorpusHandle,
    sidecar: impl AsRef<Path>,
) -> Result<(CorpusHandle, SidecarReport), TextError> {
    let path = sidecar.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|source| TextError::Io { path: path.display().to_string(), source })?;
    attach_metadata_str(corpus, &text)
}

pub fn attach_metadata_str(corpus: &CorpusHandle, sidecar: &str) -> Result<(CorpusHandle, SidecarReport), TextError> {
    let mut latest: BTreeMap<u64, Metadata> = BTreeMap::new();
    let mut report = SidecarReport::default();
    for (record, line) in sidecar.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: SidecarRecord =
            serde_json::from_str(line).map_err(|e| TextError::SidecarParse { record, message: e.to_string() })?;
        if latest.insert(rec.id, rec.meta).is_some() {
            log::warn!("sidecar: duplicate record for id {}, last one wins", rec.id);
            if !report.duplicate_ids.contains(&rec.id) {
                report.duplicate_ids.push(rec.id);
            }
        }
    }
    let mut out = corpus.clone();
    for (id, meta) in latest {
        match out.by_id.get(&id) {
            Some(&i) => {
                out.instances[i].m = Some(meta);
                report.matched += 1;
            }
            None => report.unmatched_ids.push(id),
        }
    }
    Ok((out, report))
}

/// One i.i.d. uniform draw, with replacement.
pub fn john_iid_next<'c, R: Rng + ?Sized>(corpus: &'c CorpusHandle, rng: &mut R) -> Result<&'c Instance, TextError> {
    if corpus.is_empty() {
        return Err(TextError::CorpusEmpty);
    }
    Ok(&corpus.instances[rng.random_range(0..corpus.len())])
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequentialDraw<'c> {
    pub instance: &'c Instance,
    pub next: usize,
    /// The returned cursor wrapped back to 0.
    pub wrapped: bool,
}

pub fn john_sequential_next(corpus: &CorpusHandle, cursor: usize) -> Result<SequentialDraw<'_>, TextError> {
    if corpus.is_empty() {
        return Err(TextError::CorpusEmpty);
    }
    if cursor >= corpus.len() {
        return Err(TextError::CursorOutOfRange { cursor, len: corpus.len() });
    }
    let wrapped = cursor + 1 == corpus.len();
    Ok(SequentialDraw { instance: &corpus.instances[cursor], next: if wrapped { 0 } else { cursor + 1 }, wrapped })
}
