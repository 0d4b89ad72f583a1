//! Seeded generator of English-like sentences from a small agreement grammar.
//!
//! Used to build desk-scale corpora for demos and tests: the output has real
//! local structure (determiner-noun agreement, verb agreement, prepositional
//! phrases) so an n-gram model trained on it can tell grammatical word order
//! from corrupted order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Register {
    /// Animals and households, short clauses.
    #[default]
    Story,
    /// Institutions and markets, longer clauses with more modifiers.
    News,
}

struct Lexicon {
    nouns: &'static [(&'static str, &'static str)],
    adjectives: &'static [&'static str],
    intransitive: &'static [(&'static str, &'static str)],
    transitive: &'static [(&'static str, &'static str)],
    adverbs: &'static [&'static str],
    modifier_rate: f64,
}

const STORY: Lexicon = Lexicon {
    nouns: &[
        ("cat", "cats"),
        ("dog", "dogs"),
        ("bird", "birds"),
        ("child", "children"),
        ("farmer", "farmers"),
        ("horse", "horses"),
        ("girl", "girls"),
        ("boy", "boys"),
        ("teacher", "teachers"),
        ("fox", "foxes"),
        ("baker", "bakers"),
        ("neighbor", "neighbors"),
    ],
    adjectives: &["small", "old", "happy", "quiet", "brown", "young", "clever", "tired"],
    intransitive: &[
        ("sleeps", "sleep"),
        ("runs", "run"),
        ("sings", "sing"),
        ("waits", "wait"),
        ("laughs", "laugh"),
        ("sits", "sit"),
    ],
    transitive: &[
        ("sees", "see"),
        ("likes", "like"),
        ("follows", "follow"),
        ("feeds", "feed"),
        ("helps", "help"),
        ("finds", "find"),
        ("watches", "watch"),
    ],
    adverbs: &["quickly", "slowly", "often", "again", "quietly"],
    modifier_rate: 0.3,
};

const NEWS: Lexicon = Lexicon {
    nouns: &[
        ("minister", "ministers"),
        ("company", "companies"),
        ("market", "markets"),
        ("council", "councils"),
        ("bank", "banks"),
        ("report", "reports"),
        ("union", "unions"),
        ("court", "courts"),
        ("investor", "investors"),
        ("agency", "agencies"),
    ],
    adjectives: &["national", "local", "major", "new", "financial", "public", "senior", "former"],
    intransitive: &[
        ("falls", "fall"),
        ("rises", "rise"),
        ("resigns", "resign"),
        ("expands", "expand"),
        ("recovers", "recover"),
    ],
    transitive: &[
        ("approves", "approve"),
        ("rejects", "reject"),
        ("announces", "announce"),
        ("criticizes", "criticize"),
        ("supports", "support"),
        ("reviews", "review"),
        ("acquires", "acquire"),
    ],
    adverbs: &["sharply", "today", "again", "publicly", "formally"],
    modifier_rate: 0.55,
};

const PREPOSITIONS: &[&str] = &["near", "behind", "with", "beside", "under"];

fn pick<'a, T>(rng: &mut StreamRng, items: &'a [T]) -> &'a T {
    &items[rng.random_range(0..items.len())]
}

fn noun_phrase(rng: &mut StreamRng, lex: &Lexicon, out: &mut Vec<&'static str>) -> bool {
    let plural = rng.random_bool(0.35);
    let (sg, pl) = *pick(rng, lex.nouns);
    out.push(match (plural, rng.random_bool(0.5)) {
        (false, true) => "the",
        (false, false) => "a",
        (true, true) => "the",
        (true, false) => "some",
    });
    if rng.random_bool(lex.modifier_rate) {
        out.push(pick(rng, lex.adjectives));
    }
    out.push(if plural { pl } else { sg });
    plural
}

fn clause(rng: &mut StreamRng, lex: &Lexicon, out: &mut Vec<&'static str>) {
    let plural = noun_phrase(rng, lex, out);
    if rng.random_bool(0.55) {
        let (s, p) = *pick(rng, lex.transitive);
        out.push(if plural { p } else { s });
        noun_phrase(rng, lex, out);
    } else {
        let (s, p) = *pick(rng, lex.intransitive);
        out.push(if plural { p } else { s });
    }
    if rng.random_bool(lex.modifier_rate * 0.6) {
        out.push(pick(rng, PREPOSITIONS));
        noun_phrase(rng, lex, out);
    }
    if rng.random_bool(0.25) {
        out.push(pick(rng, lex.adverbs));
    }
}

/// Sentence `index` of the corpus `(seed, register)`.
pub fn sentence(seed: u64, register: Register, index: u64) -> String {
    let lex = match register {
        Register::Story => &STORY,
        Register::News => &NEWS,
    };
    let mut rng = rng::stream(seed, "synth-sentence", index);
    let mut words = Vec::new();
    clause(&mut rng, lex, &mut words);
    if rng.random_bool(0.2) {
        words.push(if rng.random_bool(0.5) { "and" } else { "but" });
        clause(&mut rng, lex, &mut words);
    }
    words.join(" ")
}

pub fn generate_corpus(n: usize, seed: u64) -> Vec<String> {
    generate_register(n, seed, Register::Story)
}

pub fn generate_register(n: usize, seed: u64, register: Register) -> Vec<String> {
    (0..n as u64).map(|i| sentence(seed, register, i)).collect()
}
