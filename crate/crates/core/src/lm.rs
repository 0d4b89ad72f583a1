//! Add-k smoothed n-gram language models over token sequences.
//!
//! A model is a distribution over variable-length sequences: every sequence
//! is scored as the product of its token conditionals followed by one
//! terminal end-of-sequence event, and out-of-vocabulary tokens are mapped to
//! a reserved unknown symbol. All logarithms are base 2.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::textdata::{CorpusHandle, TokenSequence};

pub const UNK: &str = "<unk>";
pub const EOS: &str = "</s>";
/// Context-only start padding; never predicted, not part of the vocabulary.
pub const BOS: &str = "<s>";

const BOS_ID: u32 = u32::MAX;
const FORMAT_TAG: &str = "arena-ngram";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum LmError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("perplexity needs at least one test sequence")]
    EmptyTestSet,
    #[error("model has no emittable tokens")]
    EmptyAlphabet,
    #[error("malformed model file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A base-2 log-probability: finite and `<= 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct LogProb(f64);

impl LogProb {
    pub fn new(value: f64) -> Option<Self> {
        (value.is_finite() && value <= 0.0).then_some(LogProb(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn prob(self) -> f64 {
        self.0.exp2()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub order: usize,
    pub k: f64,
    /// Map tokens seen exactly once in training to [`UNK`].
    #[serde(default)]
    pub unk_singletons: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { order: 2, k: 1.0, unk_singletons: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: HashMap<u32, u64>,
    /// Running sums of the non-reserved counts in id order; built by
    /// `index_counts` once counting is done.
    cumulative: Vec<(u32, u64)>,
}

#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    k: f64,
    unk_singletons: bool,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    unk: u32,
    eos: u32,
    counts: HashMap<Vec<u32>, ContextCounts>,
    trained_on: String,
}

fn check_options(order: usize, k: f64) -> Result<(), LmError> {
    if order < 1 {
        return Err(LmError::Config(format!("order must be >= 1, got {order}")));
    }
    if !(k.is_finite() && k > 0.0) {
        return Err(LmError::Config(format!("k must be a positive real, got {k}")));
    }
    Ok(())
}

pub fn train_ngram(corpus: &CorpusHandle, options: TrainOptions) -> Result<NGramModel, LmError> {
    check_options(options.order, options.k)?;
    if corpus.is_empty() {
        return Err(LmError::Config("training corpus is empty".into()));
    }
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for seq in corpus.sequences() {
        for tok in seq.tokens() {
            *freq.entry(tok.as_str()).or_default() += 1;
        }
    }
    let kept = freq.iter().filter(|(_, &n)| !(options.unk_singletons && n == 1)).map(|(t, _)| t.to_string());
    let mut model = NGramModel::empty(options.order, options.k, kept, format!("corpus {}", corpus.provenance()));
    model.unk_singletons = options.unk_singletons;
    for seq in corpus.sequences() {
        let ids = model.encode(seq);
        let padded = model.padded(&ids);
        let width = model.order - 1;
        for pos in 0..=ids.len() {
            let context = padded[pos..pos + width].to_vec();
            let next = if pos < ids.len() { ids[pos] } else { model.eos };
            let entry = model.counts.entry(context).or_default();
            entry.total += 1;
            *entry.next.entry(next).or_default() += 1;
        }
    }
    model.index_counts();
    Ok(model)
}

impl NGramModel {
    fn empty(order: usize, k: f64, tokens: impl IntoIterator<Item = String>, trained_on: String) -> Self {
        let mut vocab: Vec<String> = tokens.into_iter().filter(|t| t != UNK && t != EOS && t != BOS).collect();
        vocab.push(UNK.into());
        vocab.push(EOS.into());
        vocab.sort();
        vocab.dedup();
        let index: HashMap<String, u32> = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        NGramModel {
            order,
            k,
            unk_singletons: false,
            unk: index[UNK],
            eos: index[EOS],
            vocab,
            index,
            counts: HashMap::new(),
            trained_on,
        }
    }

    /// A model with no counts: every conditional is `1 / |vocab|`, where the
    /// vocabulary is `tokens` plus [`UNK`] and [`EOS`].
    pub fn uniform(tokens: impl IntoIterator<Item = impl Into<String>>, order: usize) -> Result<Self, LmError> {
        check_options(order, 1.0)?;
        Ok(Self::empty(order, 1.0, tokens.into_iter().map(Into::into), "uniform (no training data)".into()))
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn trained_on(&self) -> &str {
        &self.trained_on
    }

    /// Sorted vocabulary, including [`UNK`] and [`EOS`].
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Vocabulary without the reserved symbols, in sorted order: the tokens a
    /// corruption may substitute in.
    pub fn alphabet(&self) -> impl Iterator<Item = &str> {
        self.vocab.iter().map(String::as_str).filter(|t| *t != UNK && *t != EOS)
    }

    /// Id of an in-sequence token. Unknown tokens, and a literal [`EOS`]
    /// appearing inside a sequence, map to [`UNK`].
    pub fn token_id(&self, token: &str) -> u32 {
        match self.index.get(token) {
            Some(&id) if id != self.eos => id,
            _ => self.unk,
        }
    }

    pub fn token(&self, id: u32) -> &str {
        &self.vocab[id as usize]
    }

    pub fn eos_id(&self) -> u32 {
        self.eos
    }

    pub fn unk_id(&self) -> u32 {
        self.unk
    }

    pub fn encode(&self, seq: &TokenSequence) -> Vec<u32> {
        seq.tokens().iter().map(|t| self.token_id(t)).collect()
    }

    fn index_counts(&mut self) {
        let (unk, eos) = (self.unk, self.eos);
        for c in self.counts.values_mut() {
            let mut seen: Vec<(u32, u64)> =
                c.next.iter().filter(|(&id, _)| id != unk && id != eos).map(|(&id, &n)| (id, n)).collect();
            seen.sort_unstable();
            let mut run = 0;
            for entry in &mut seen {
                run += entry.1;
                entry.1 = run;
            }
            c.cumulative = seen;
        }
    }

    fn padded(&self, ids: &[u32]) -> Vec<u32> {
        let mut padded = vec![BOS_ID; self.order - 1];
        padded.extend_from_slice(ids);
        padded
    }

    fn context_of<'a>(&self, padded: &'a [u32], pos: usize) -> &'a [u32] {
        &padded[pos..pos + self.order - 1]
    }

    fn count(&self, context: &[u32], next: u32) -> (u64, u64) {
        match self.counts.get(context) {
            Some(c) => (c.next.get(&next).copied().unwrap_or(0), c.total),
            None => (0, 0),
        }
    }

    /// `log2 p(next | context)` where `context` holds the `order - 1`
    /// preceding ids (start padding included).
    fn log_cond(&self, context: &[u32], next: u32) -> f64 {
        let (c, total) = self.count(context, next);
        let v = self.vocab.len() as f64;
        ((c as f64 + self.k) / (total as f64 + self.k * v)).log2()
    }

    /// Conditional probability of `next` after the tokens in `history`
    /// (only the last `order - 1` matter; shorter histories are start-padded).
    pub fn conditional(&self, history: &[&str], next: &str) -> f64 {
        let ids: Vec<u32> = history.iter().map(|t| self.token_id(t)).collect();
        let padded = self.padded(&ids);
        let context = &padded[padded.len() - (self.order - 1)..];
        let next = if next == EOS { self.eos } else { self.token_id(next) };
        self.log_cond(context, next).exp2()
    }

    /// Per-position log2 conditionals, including the terminal EOS event.
    pub(crate) fn log_cond_terms(&self, ids: &[u32]) -> Vec<f64> {
        let padded = self.padded(ids);
        (0..=ids.len())
            .map(|pos| {
                let next = if pos < ids.len() { ids[pos] } else { self.eos };
                self.log_cond(self.context_of(&padded, pos), next)
            })
            .collect()
    }

    /// Sum of the log conditionals whose factor involves any position in
    /// `first..=last` (the terms a substitution there can change).
    pub(crate) fn log_cond_window(&self, ids: &[u32], first: usize, last: usize) -> f64 {
        let padded = self.padded(ids);
        let end = (last + self.order - 1).min(ids.len());
        (first..=end)
            .map(|pos| {
                let next = if pos < ids.len() { ids[pos] } else { self.eos };
                self.log_cond(self.context_of(&padded, pos), next)
            })
            .sum()
    }

    pub fn log_prob(&self, x: &TokenSequence) -> LogProb {
        let total: f64 = self.log_cond_terms(&self.encode(x)).into_iter().sum();
        LogProb::new(total).expect("add-k smoothing keeps every sequence probability in (0, 1]")
    }

    /// Ancestral sampling until EOS or `max_len` tokens. [`UNK`] is never
    /// emitted and EOS is excluded at the first position, so samples are
    /// never empty.
    pub fn sample_sequence<R: Rng + ?Sized>(&self, max_len: usize, rng: &mut R) -> Result<TokenSequence, LmError> {
        if max_len < 1 {
            return Err(LmError::Config("max_len must be >= 1".into()));
        }
        if self.alphabet().next().is_none() {
            return Err(LmError::EmptyAlphabet);
        }
        let mut ids: Vec<u32> = Vec::new();
        while ids.len() < max_len {
            let padded = self.padded(&ids);
            let context = self.context_of(&padded, ids.len());
            let allow_eos = !ids.is_empty();
            let chosen = self.sample_next(context, allow_eos, rng);
            if chosen == self.eos {
                break;
            }
            ids.push(chosen);
        }
        Ok(TokenSequence::new(ids.iter().map(|&id| self.token(id).to_string())).expect("vocabulary tokens are valid"))
    }

    /// Draws from `(count + k)` weights over every id except [`UNK`] (and
    /// EOS unless allowed). The weight splits into the EOS count, observed
    /// counts in id order, and a flat `k` share, so a draw is a binary search
    /// rather than a walk over the vocabulary.
    fn sample_next<R: Rng + ?Sized>(&self, context: &[u32], allow_eos: bool, rng: &mut R) -> u32 {
        let mut excluded = vec![self.unk];
        if !allow_eos {
            excluded.push(self.eos);
        }
        excluded.sort_unstable();
        let (eos_mass, seen): (u64, &[(u32, u64)]) = match self.counts.get(context) {
            Some(c) => (if allow_eos { c.next.get(&self.eos).copied().unwrap_or(0) } else { 0 }, &c.cumulative),
            None => (0, &[]),
        };
        let seen_mass = seen.last().map_or(0, |&(_, n)| n);
        let counted = (eos_mass + seen_mass) as f64;
        let allowed = self.vocab.len() - excluded.len();
        let target = rng.random::<f64>() * (counted + self.k * allowed as f64);
        if target < counted {
            let t = target as u64;
            if t < eos_mass {
                return self.eos;
            }
            let i = seen.partition_point(|&(_, run)| run <= t - eos_mass);
            return seen[i.min(seen.len() - 1)].0;
        }
        let mut id = (((target - counted) / self.k) as usize).min(allowed - 1) as u32;
        for &ex in &excluded {
            if id >= ex {
                id += 1;
            }
        }
        id
    }

    pub fn to_json(&self) -> String {
        let mut counts: Vec<CountRecord> = self
            .counts
            .iter()
            .map(|(context, c)| CountRecord {
                context: context
                    .iter()
                    .map(|&id| if id == BOS_ID { BOS.to_string() } else { self.token(id).to_string() })
                    .collect(),
                total: c.total,
                next: c.next.iter().map(|(&id, &n)| (self.token(id).to_string(), n)).collect(),
            })
            .collect();
        counts.sort_by(|a, b| a.context.cmp(&b.context));
        let file = ModelFile {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            order: self.order,
            k: self.k,
            unk_singletons: self.unk_singletons,
            trained_on: self.trained_on.clone(),
            vocab: self.vocab.clone(),
            counts,
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LmError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| LmError::Format(e.to_string()))?;
        if file.format != FORMAT_TAG || file.version != FORMAT_VERSION {
            return Err(LmError::Format(format!("unsupported format {} v{}", file.format, file.version)));
        }
        check_options(file.order, file.k)?;
        if !file.vocab.windows(2).all(|w| w[0] < w[1]) {
            return Err(LmError::Format("vocabulary must be sorted and unique".into()));
        }
        if !file.vocab.iter().any(|t| t == UNK) || !file.vocab.iter().any(|t| t == EOS) {
            return Err(LmError::Format("vocabulary lacks reserved symbols".into()));
        }
        let mut model = NGramModel::empty(file.order, file.k, file.vocab.clone(), file.trained_on);
        if model.vocab != file.vocab {
            return Err(LmError::Format("vocabulary contains the start symbol".into()));
        }
        model.unk_singletons = file.unk_singletons;
        let lookup = |t: &str| -> Result<u32, LmError> {
            model.index.get(t).copied().ok_or_else(|| LmError::Format(format!("token {t:?} not in vocabulary")))
        };
        let mut counts = HashMap::new();
        for rec in file.counts {
            if rec.context.len() != file.order - 1 {
                return Err(LmError::Format("context length does not match order".into()));
            }
            let context = rec
                .context
                .iter()
                .map(|t| if t == BOS { Ok(BOS_ID) } else { lookup(t) })
                .collect::<Result<Vec<_>, _>>()?;
            let next =
                rec.next.iter().map(|(t, &n)| Ok((lookup(t)?, n))).collect::<Result<HashMap<_, _>, LmError>>()?;
            if next.values().sum::<u64>() != rec.total {
                return Err(LmError::Format("context total does not match its counts".into()));
            }
            counts.insert(context, ContextCounts { total: rec.total, next, cumulative: Vec::new() });
        }
        model.counts = counts;
        model.index_counts();
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LmError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| LmError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LmError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|source| LmError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    order: usize,
    k: f64,
    unk_singletons: bool,
    trained_on: String,
    vocab: Vec<String>,
    counts: Vec<CountRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CountRecord {
    context: Vec<String>,
    total: u64,
    next: BTreeMap<String, u64>,
}

/// Perplexity over whole-sequence events: `exp2(-(1/N) * sum log2 p(x_n))`.
pub fn perplexity_of(log_probs: impl IntoIterator<Item = LogProb>) -> Result<f64, LmError> {
    let (sum, n) = log_probs.into_iter().fold((0.0, 0usize), |(s, n), lp| (s + lp.value(), n + 1));
    if n == 0 {
        return Err(LmError::EmptyTestSet);
    }
    Ok((-sum / n as f64).exp2())
}

pub fn perplexity(model: &NGramModel, test: &[TokenSequence]) -> Result<f64, LmError> {
    perplexity_of(test.iter().map(|x| model.log_prob(x)))
}
