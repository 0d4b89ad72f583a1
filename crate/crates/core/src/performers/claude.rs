use std::cmp::Ordering;
use std::sync::Arc;

use rand::Rng;

use super::{Claude, ClaudeChoice, ClaudeRequest, PerformerDescriptor, PerformerError, Position, Role};
use crate::clock::Stopwatch;
use crate::lm::NGramModel;
use crate::rng;
use crate::textdata::TokenSequence;

/// Picks the lower-scoring item as the fake; exact ties go to a fair coin.
///
/// Only the sign of `score_first - score_second` matters, so any strictly
/// increasing transform applied to both scores leaves the choice unchanged.
pub fn claude_choice_from_scores<R: Rng + ?Sized>(score_first: f64, score_second: f64, rng: &mut R) -> Position {
    match score_first.partial_cmp(&score_second) {
        Some(Ordering::Less) => Position::First,
        Some(Ordering::Greater) => Position::Second,
        _ => Position::coin(rng),
    }
}

pub fn claude_lm<R: Rng + ?Sized>(
    model: &NGramModel,
    a: &TokenSequence,
    b: &TokenSequence,
    rng: &mut R,
) -> ClaudeChoice {
    let watch = Stopwatch::start();
    let position = claude_choice_from_scores(model.log_prob(a).value(), model.log_prob(b).value(), rng);
    ClaudeChoice { position, elapsed: watch.elapsed() }
}

pub fn claude_uniform<R: Rng + ?Sized>(rng: &mut R) -> ClaudeChoice {
    let watch = Stopwatch::start();
    let position = Position::coin(rng);
    ClaudeChoice { position, elapsed: watch.elapsed() }
}

/// Registry name `claude-ngram`.
pub struct ClaudeNgram {
    model: Arc<NGramModel>,
    seed: u64,
    descriptor: PerformerDescriptor,
}

impl ClaudeNgram {
    pub const NAME: &'static str = "claude-ngram";

    pub fn new(model: Arc<NGramModel>, seed: u64) -> Result<Self, PerformerError> {
        let descriptor = PerformerDescriptor::new(
            Role::Claude,
            Self::NAME,
            format!("order-{} add-{} n-gram model trained on {}", model.order(), model.k(), model.trained_on()),
        )?;
        Ok(ClaudeNgram { model, seed, descriptor })
    }
}

impl Claude for ClaudeNgram {
    fn descriptor(&self) -> &PerformerDescriptor {
        &self.descriptor
    }

    fn choose(&mut self, request: &ClaudeRequest) -> Result<ClaudeChoice, PerformerError> {
        let mut rng = rng::stream(self.seed, Self::NAME, request.round);
        Ok(claude_lm(&self.model, &request.items[0], &request.items[1], &mut rng))
    }
}

/// Registry name `claude-uniform`: the chance floor.
pub struct ClaudeUniform {
    seed: u64,
    descriptor: PerformerDescriptor,
}

impl ClaudeUniform {
    pub const NAME: &'static str = "claude-uniform";

    pub fn new(seed: u64) -> Self {
        ClaudeUniform {
            seed,
            descriptor: PerformerDescriptor::new(Role::Claude, Self::NAME, "none: fair coin")
                .expect("non-empty resources"),
        }
    }
}

impl Claude for ClaudeUniform {
    fn descriptor(&self) -> &PerformerDescriptor {
        &self.descriptor
    }

    fn choose(&mut self, request: &ClaudeRequest) -> Result<ClaudeChoice, PerformerError> {
        Ok(claude_uniform(&mut rng::stream(self.seed, Self::NAME, request.round)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{train_ngram, TrainOptions};
    use crate::textdata::{CorpusHandle, Scheme};
    use proptest::prelude::*;

    fn seq(text: &str) -> TokenSequence {
        crate::textdata::tokenize(text, Scheme::Whitespace).unwrap()
    }

    #[test]
    fn lower_score_is_the_fake() {
        let mut r = rng::stream(0, "t", 0);
        assert_eq!(claude_choice_from_scores(-5.0, -9.0, &mut r), Position::Second);
        assert_eq!(claude_choice_from_scores(-9.0, -5.0, &mut r), Position::First);
    }

    #[test]
    fn identical_items_split_evenly() {
        let c = CorpusHandle::from_lines(["the cat sat", "a dog ran"], Scheme::Whitespace, "t").unwrap();
        let m = train_ngram(&c, TrainOptions::default()).unwrap();
        let x = seq("the cat sat");
        let mut r = rng::stream(31, "claude", 0);
        let n = 10_000;
        let firsts = (0..n).filter(|_| claude_lm(&m, &x, &x, &mut r).position == Position::First).count();
        let rate = firsts as f64 / n as f64;
        assert!((0.47..=0.53).contains(&rate), "rate {rate}");
    }

    #[test]
    fn uniform_claude() {
        let draws = |seed| {
            let mut c = ClaudeUniform::new(seed);
            let items = [seq("a"), seq("b")];
            (0..100)
                .map(|round| c.choose(&ClaudeRequest { round, items: items.clone(), m: None }).unwrap().position)
                .collect::<Vec<_>>()
        };
        assert_eq!(draws(4), draws(4));
        let mut r = rng::stream(8, "u", 0);
        let n = 10_000;
        let firsts = (0..n).filter(|_| claude_uniform(&mut r).position == Position::First).count();
        let rate = firsts as f64 / n as f64;
        assert!((0.47..=0.53).contains(&rate), "rate {rate}");
    }

    #[test]
    fn position_wire_form() {
        assert_eq!(serde_json::to_string(&Position::Second).unwrap(), "1");
        assert_eq!(serde_json::from_str::<Position>("0").unwrap(), Position::First);
        assert!(serde_json::from_str::<Position>("2").is_err());
    }

    proptest! {
        #[test]
        fn choice_invariant_under_shift(a in -500.0f64..0.0, b in -500.0f64..0.0, shift in -100.0f64..100.0, seed: u64) {
            let base = claude_choice_from_scores(a, b, &mut rng::stream(seed, "t", 0));
            let shifted = claude_choice_from_scores(a + shift, b + shift, &mut rng::stream(seed, "t", 0));
            // additive shifts can collapse or create float ties only at the last ulp
            if (a - b).abs() > 1e-9 {
                prop_assert_eq!(base, shifted);
            }
        }

        #[test]
        fn choice_invariant_under_monotone_map(a in 0.001f64..1.0, b in 0.001f64..1.0, seed: u64) {
            let raw = claude_choice_from_scores(a, b, &mut rng::stream(seed, "t", 0));
            let logged = claude_choice_from_scores(a.ln(), b.ln(), &mut rng::stream(seed, "t", 0));
            prop_assert_eq!(raw, logged);
        }
    }
}
