//! Highest-probability corruption within a token-Hamming radius.
//!
//! The candidate set for `x` is every equal-length sequence that differs
//! from `x` in between 1 and `delta` positions, with substitutes drawn from
//! the model alphabet (vocabulary minus the reserved symbols). The winner
//! maximizes the full sequence log-probability, EOS factor included; exact
//! ties go to the lexicographically smallest token sequence.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{PerformerDescriptor, PerformerError, Role, Zellig, ZelligOutput, ZelligRequest};
use crate::clock::Stopwatch;
use crate::lm::NGramModel;
use crate::textdata::TokenSequence;

pub const ORACLE_MAX_LEN: usize = 6;
pub const ORACLE_MAX_ALPHABET: usize = 12;
pub const ORACLE_MAX_DELTA: usize = 2;

/// Candidates whose incremental score is within this of the best are
/// rescored in full before the tie rule is applied.
const RESCORE_MARGIN: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SearchMode {
    Exact,
    /// `width: None` means the alphabet size.
    Beam {
        width: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    /// Number of distinct candidate sequences scored.
    pub candidates: u64,
}

pub fn zellig_search(
    model: &NGramModel,
    x: &TokenSequence,
    delta: usize,
    mode: SearchMode,
) -> Result<ZelligOutput, PerformerError> {
    zellig_search_with_stats(model, x, delta, mode).map(|(out, _)| out)
}

pub fn zellig_search_with_stats(
    model: &NGramModel,
    x: &TokenSequence,
    delta: usize,
    mode: SearchMode,
) -> Result<(ZelligOutput, SearchStats), PerformerError> {
    let watch = Stopwatch::start();
    if delta < 1 {
        return Err(PerformerError::Precondition("delta must be >= 1".into()));
    }
    let alphabet: Vec<&str> = model.alphabet().collect();
    if alphabet.len() < 2 {
        return Err(PerformerError::NoCandidate(format!(
            "alphabet of {} token(s) cannot corrupt {x:?}",
            alphabet.len()
        )));
    }
    let search = Search::new(model, x, &alphabet);
    let (y, stats) = match mode {
        SearchMode::Exact => search.exact(delta),
        SearchMode::Beam { width } => search.beam(delta, width.unwrap_or(alphabet.len()).max(1)),
    };
    let distance = y.hamming(x).expect("substitutions preserve length");
    debug_assert!((1..=delta).contains(&distance));
    Ok((ZelligOutput { y, elapsed: watch.elapsed(), declared_distance: Some(distance) }, stats))
}

/// Callback receiving each candidate's log2 score and its substitutions.
type Visit<'f, 'a> = dyn FnMut(f64, &[(usize, &'a str)]) + 'f;

struct Search<'a> {
    model: &'a NGramModel,
    x: &'a TokenSequence,
    x_ids: Vec<u32>,
    x_total: f64,
    /// Per position: `(token, id)` of every alphabet token other than `x[i]`.
    alternatives: Vec<Vec<(&'a str, u32)>>,
}

/// Picks the better of two fully scored candidates under the tie rule.
fn better(candidate: &(f64, TokenSequence), best: &Option<(f64, TokenSequence)>) -> bool {
    match best {
        None => true,
        Some((score, seq)) => candidate.0 > *score || (candidate.0 == *score && candidate.1 < *seq),
    }
}

impl<'a> Search<'a> {
    fn new(model: &'a NGramModel, x: &'a TokenSequence, alphabet: &[&'a str]) -> Self {
        let x_ids = model.encode(x);
        let x_total = model.log_cond_terms(&x_ids).into_iter().sum();
        let alternatives = x
            .tokens()
            .iter()
            .map(|tok| alphabet.iter().filter(|a| **a != tok).map(|a| (*a, model.token_id(a))).collect())
            .collect();
        Search { model, x, x_ids, x_total, alternatives }
    }

    fn apply(&self, subs: &[(usize, &str)]) -> TokenSequence {
        subs.iter().fold(self.x.clone(), |seq, (pos, tok)| seq.with_token(*pos, tok))
    }

    /// Enumerates every substitution set, ranking by an incremental score
    /// that only recomputes the factors a substitution touches, then rescores
    /// the near-best candidates in full.
    fn exact(&self, delta: usize) -> (TokenSequence, SearchStats) {
        let mut stats = SearchStats::default();
        let mut ids = self.x_ids.clone();
        let mut chosen: Vec<(usize, &str)> = Vec::with_capacity(delta);
        let mut best_approx = f64::NEG_INFINITY;
        let mut near: Vec<Vec<(usize, &str)>> = Vec::new();
        self.enumerate(0, delta, &mut ids, &mut chosen, &mut |approx, subs| {
            stats.candidates += 1;
            if approx > best_approx + RESCORE_MARGIN {
                near.clear();
            }
            if approx >= best_approx - RESCORE_MARGIN {
                near.push(subs.to_vec());
            }
            best_approx = best_approx.max(approx);
        });
        let mut best: Option<(f64, TokenSequence)> = None;
        for subs in near {
            let y = self.apply(&subs);
            let candidate = (self.model.log_prob(&y).value(), y);
            if better(&candidate, &best) {
                best = Some(candidate);
            }
        }
        (best.expect("alphabet of >= 2 guarantees a candidate").1, stats)
    }

    fn enumerate<'s>(
        &'s self,
        start: usize,
        remaining: usize,
        ids: &mut Vec<u32>,
        chosen: &mut Vec<(usize, &'a str)>,
        visit: &mut Visit<'_, 'a>,
    ) {
        for pos in start..ids.len() {
            let original = ids[pos];
            for &(tok, id) in &self.alternatives[pos] {
                ids[pos] = id;
                chosen.push((pos, tok));
                let first = chosen[0].0;
                let before = self.model.log_cond_window(&self.x_ids, first, pos);
                let after = self.model.log_cond_window(ids, first, pos);
                visit(self.x_total - before + after, chosen);
                if remaining > 1 {
                    self.enumerate(pos + 1, remaining - 1, ids, chosen, visit);
                }
                chosen.pop();
            }
            ids[pos] = original;
        }
    }

    /// Beam search over substitution sets. Positions are visited in order of
    /// their best single-substitution score; states are bucketed by how many
    /// substitutions they hold and each bucket keeps its top `width`. With
    /// `delta == 1` every single substitution competes only with other
    /// singles, so the result equals exact search.
    fn beam(&self, delta: usize, width: usize) -> (TokenSequence, SearchStats) {
        let mut stats = SearchStats::default();
        let score = |ids: &[u32]| -> f64 { self.model.log_cond_terms(ids).into_iter().sum() };

        let mut order: Vec<(usize, f64)> = (0..self.x_ids.len())
            .map(|pos| {
                let mut ids = self.x_ids.clone();
                let gain = self.alternatives[pos]
                    .iter()
                    .map(|&(_, id)| {
                        ids[pos] = id;
                        score(&ids)
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                (pos, gain)
            })
            .collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

        struct State {
            ids: Vec<u32>,
            seq: TokenSequence,
            score: f64,
        }
        let mut buckets: Vec<Vec<State>> = (0..=delta).map(|_| Vec::new()).collect();
        buckets[0].push(State { ids: self.x_ids.clone(), seq: self.x.clone(), score: self.x_total });
        for &(pos, _) in &order {
            for count in (0..delta).rev() {
                let mut grown = Vec::new();
                for state in &buckets[count] {
                    for &(tok, id) in &self.alternatives[pos] {
                        let mut ids = state.ids.clone();
                        ids[pos] = id;
                        let s = score(&ids);
                        stats.candidates += 1;
                        grown.push(State { seq: state.seq.with_token(pos, tok), ids, score: s });
                    }
                }
                let bucket = &mut buckets[count + 1];
                bucket.extend(grown);
                bucket.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.seq.cmp(&b.seq)));
                bucket.truncate(width);
            }
        }
        let mut best: Option<(f64, TokenSequence)> = None;
        for state in buckets.into_iter().skip(1).flatten() {
            let candidate = (self.model.log_prob(&state.seq).value(), state.seq);
            if better(&candidate, &best) {
                best = Some(candidate);
            }
        }
        (best.expect("alphabet of >= 2 guarantees a candidate").1, stats)
    }
}

/// Reference maximizer by plain enumeration: every position mask with
/// `1..=delta` bits, every assignment of differing alphabet tokens to the
/// masked positions, each scored from scratch.
pub fn brute_force_argmax_oracle(
    model: &NGramModel,
    x: &TokenSequence,
    delta: usize,
) -> Result<TokenSequence, PerformerError> {
    if delta < 1 {
        return Err(PerformerError::Precondition("delta must be >= 1".into()));
    }
    let alphabet: Vec<&str> = model.alphabet().collect();
    if x.len() > ORACLE_MAX_LEN || alphabet.len() > ORACLE_MAX_ALPHABET || delta > ORACLE_MAX_DELTA {
        return Err(PerformerError::OracleTooLarge(format!(
            "|x| = {}, alphabet = {}, delta = {delta}",
            x.len(),
            alphabet.len()
        )));
    }
    let n = x.len();
    let mut best: Option<(f64, TokenSequence)> = None;
    for mask in 1u32..(1 << n) {
        let bits = mask.count_ones() as usize;
        if bits > delta {
            continue;
        }
        let positions: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let mut digits = vec![0usize; positions.len()];
        'assignments: loop {
            let mut tokens: Vec<String> = x.tokens().to_vec();
            let mut valid = true;
            for (slot, &pos) in positions.iter().enumerate() {
                let tok = alphabet[digits[slot]];
                valid &= tok != x.tokens()[pos];
                tokens[pos] = tok.to_string();
            }
            if valid {
                let y = TokenSequence::new(tokens).expect("alphabet tokens are valid");
                let candidate = (model.log_prob(&y).value(), y);
                if better(&candidate, &best) {
                    best = Some(candidate);
                }
            }
            // odometer
            for d in digits.iter_mut() {
                *d += 1;
                if *d < alphabet.len() {
                    continue 'assignments;
                }
                *d = 0;
            }
            break;
        }
    }
    best.map(|(_, y)| y).ok_or_else(|| PerformerError::NoCandidate(format!("no substitution of {x:?} exists")))
}

/// Registry name `zellig-search`.
pub struct ZelligSearch {
    model: Arc<NGramModel>,
    delta: usize,
    mode: SearchMode,
    descriptor: PerformerDescriptor,
}

impl ZelligSearch {
    pub const NAME: &'static str = "zellig-search";

    pub fn new(model: Arc<NGramModel>, delta: usize, mode: SearchMode) -> Result<Self, PerformerError> {
        if delta < 1 {
            return Err(PerformerError::Precondition("delta must be >= 1".into()));
        }
        let descriptor = PerformerDescriptor::new(
            Role::Zellig,
            Self::NAME,
            format!(
                "argmax within Hamming radius {delta} ({mode:?}) under an order-{} model trained on {}",
                model.order(),
                model.trained_on()
            ),
        )?;
        Ok(ZelligSearch { model, delta, mode, descriptor })
    }
}

impl Zellig for ZelligSearch {
    fn descriptor(&self) -> &PerformerDescriptor {
        &self.descriptor
    }

    fn corrupt(&mut self, request: &ZelligRequest) -> Result<ZelligOutput, PerformerError> {
        zellig_search(&self.model, &request.x, self.delta, self.mode)
    }
}
