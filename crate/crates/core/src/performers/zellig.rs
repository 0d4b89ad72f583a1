use std::collections::BTreeSet;
use std::sync::Arc;

use rand::Rng;

use super::{PerformerDescriptor, PerformerError, Role, Zellig, ZelligOutput, ZelligRequest};
use crate::clock::Stopwatch;
use crate::lm::NGramModel;
use crate::protocol::TransparencyPacket;
use crate::rng;
use crate::textdata::TokenSequence;

/// Attempts the sampler makes before falling back to [`zellig_swap`].
const SAMPLER_ATTEMPTS: usize = 9;

pub fn zellig_copy(x: &TokenSequence) -> ZelligOutput {
    let watch = Stopwatch::start();
    let y = x.clone();
    ZelligOutput { y, elapsed: watch.elapsed(), declared_distance: Some(0) }
}

/// Transposes a random adjacent pair of differing tokens. When no such pair
/// exists (all tokens equal, or a single token), substitutes position 0 with
/// a random vocabulary token different from it.
pub fn zellig_swap<'v, R: Rng + ?Sized>(
    x: &TokenSequence,
    vocab: impl IntoIterator<Item = &'v str>,
    rng: &mut R,
) -> Result<ZelligOutput, PerformerError> {
    let watch = Stopwatch::start();
    let tokens = x.tokens();
    let sites: Vec<usize> = (0..tokens.len().saturating_sub(1)).filter(|&i| tokens[i] != tokens[i + 1]).collect();
    let y = if sites.is_empty() {
        let first = tokens[0].as_str();
        let alternatives: Vec<&str> =
            vocab.into_iter().filter(|t| *t != first).collect::<BTreeSet<_>>().into_iter().collect();
        if alternatives.is_empty() {
            return Err(PerformerError::NoCandidate(format!(
                "no adjacent pair differs in {x:?} and the vocabulary has no substitute for {first:?}"
            )));
        }
        x.with_token(0, alternatives[rng.random_range(0..alternatives.len())])
    } else {
        let i = sites[rng.random_range(0..sites.len())];
        x.with_token(i, &tokens[i + 1]).with_token(i + 1, &tokens[i])
    };
    let distance = y.hamming(x);
    Ok(ZelligOutput { y, elapsed: watch.elapsed(), declared_distance: distance })
}

/// Samples a fresh sequence of up to `2 |x|` tokens, ignoring `x` except to
/// avoid returning it verbatim.
pub fn zellig_sampler<R: Rng + ?Sized>(
    model: &NGramModel,
    x: &TokenSequence,
    rng: &mut R,
) -> Result<ZelligOutput, PerformerError> {
    let watch = Stopwatch::start();
    for _ in 0..SAMPLER_ATTEMPTS {
        let y = model.sample_sequence(x.len() * 2, rng)?;
        if &y != x {
            return Ok(ZelligOutput { y, elapsed: watch.elapsed(), declared_distance: None });
        }
    }
    let fallback = zellig_swap(x, model.alphabet(), rng)?;
    Ok(ZelligOutput { y: fallback.y, elapsed: watch.elapsed(), declared_distance: None })
}

/// Registry name `zellig-copy`.
pub struct ZelligCopy {
    descriptor: PerformerDescriptor,
}

impl ZelligCopy {
    pub const NAME: &'static str = "zellig-copy";

    pub fn new() -> Self {
        ZelligCopy {
            descriptor: PerformerDescriptor::new(Role::Zellig, Self::NAME, "none: returns x")
                .expect("non-empty resources"),
        }
    }
}

impl Default for ZelligCopy {
    fn default() -> Self {
        Self::new()
    }
}

impl Zellig for ZelligCopy {
    fn descriptor(&self) -> &PerformerDescriptor {
        &self.descriptor
    }

    fn corrupt(&mut self, request: &ZelligRequest) -> Result<ZelligOutput, PerformerError> {
        Ok(zellig_copy(&request.x))
    }
}

/// Registry name `zellig-sampler`.
pub struct ZelligSampler {
    model: Arc<NGramModel>,
    seed: u64,
    descriptor: PerformerDescriptor,
}

impl ZelligSampler {
    pub const NAME: &'static str = "zellig-sampler";

    pub fn new(model: Arc<NGramModel>, seed: u64) -> Result<Self, PerformerError> {
        let descriptor = PerformerDescriptor::new(
            Role::Zellig,
            Self::NAME,
            format!("samples from an order-{} model trained on {}", model.order(), model.trained_on()),
        )?;
        Ok(ZelligSampler { model, seed, descriptor })
    }
}

impl Zellig for ZelligSampler {
    fn descriptor(&self) -> &PerformerDescriptor {
        &self.descriptor
    }

    fn corrupt(&mut self, request: &ZelligRequest) -> Result<ZelligOutput, PerformerError> {
        let mut rng = rng::stream(self.seed, Self::NAME, request.round);
        zellig_sampler(&self.model, &request.x, &mut rng)
    }
}

/// Registry name `zellig-swap`.
///
/// The substitution fallback draws from a fixed vocabulary when one is
/// given, otherwise from every token this performer has been shown so far.
pub struct ZelligSwap {
    vocab: BTreeSet<String>,
    learn_vocab: bool,
    seed: u64,
    descriptor: PerformerDescriptor,
}

impl ZelligSwap {
    pub const NAME: &'static str = "zellig-swap";

    pub fn new(vocab: Option<Vec<String>>, seed: u64) -> Self {
        let resources = match &vocab {
            Some(v) => format!("fixed substitution vocabulary of {} tokens", v.len()),
            None => "none: substitution vocabulary accumulated from observed instances".into(),
        };
        ZelligSwap {
            learn_vocab: vocab.is_none(),
            vocab: vocab.unwrap_or_default().into_iter().collect(),
            seed,
            descriptor: PerformerDescriptor::new(Role::Zellig, Self::NAME, resources).expect("non-empty resources"),
        }
    }
}

impl Zellig for ZelligSwap {
    fn descriptor(&self) -> &PerformerDescriptor {
        &self.descriptor
    }

    fn corrupt(&mut self, request: &ZelligRequest) -> Result<ZelligOutput, PerformerError> {
        if self.learn_vocab {
            self.vocab.extend(request.x.tokens().iter().cloned());
        }
        let mut rng = rng::stream(self.seed, Self::NAME, request.round);
        zellig_swap(&request.x, self.vocab.iter().map(String::as_str), &mut rng)
    }

    fn observe(&mut self, packet: &TransparencyPacket) {
        if let (true, TransparencyPacket::Zellig { x, .. }) = (self.learn_vocab, packet) {
            self.vocab.extend(x.tokens().iter().cloned());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{train_ngram, TrainOptions};
    use crate::textdata::{tokenize, CorpusHandle, Scheme};
    use proptest::prelude::*;

    fn seq(text: &str) -> TokenSequence {
        tokenize(text, Scheme::Whitespace).unwrap()
    }

    #[test]
    fn copy_is_identity() {
        for x in [seq("a b"), seq("x")] {
            let out = zellig_copy(&x);
            assert_eq!(out.y, x);
            assert_eq!(out.declared_distance, Some(0));
            assert!(out.elapsed > std::time::Duration::ZERO);
        }
    }

    #[test]
    fn swap_single_site() {
        let mut r = rng::stream(0, "swap", 0);
        let out = zellig_swap(&seq("a b"), ["a", "b"], &mut r).unwrap();
        assert_eq!(out.y, seq("b a"));
        assert_eq!(out.declared_distance, Some(2));
    }

    #[test]
    fn swap_substitution_fallback() {
        let mut r = rng::stream(0, "swap", 0);
        let out = zellig_swap(&seq("a a a"), ["a", "b", "c"], &mut r).unwrap();
        assert_ne!(out.y.tokens()[0], "a");
        assert_eq!(&out.y.tokens()[1..], &["a", "a"]);
        assert_eq!(out.declared_distance, Some(1));

        let out = zellig_swap(&seq("a"), ["a", "b"], &mut r).unwrap();
        assert_eq!(out.y, seq("b"));
        assert!(matches!(zellig_swap(&seq("a"), ["a"], &mut r), Err(PerformerError::NoCandidate(_))));
        assert!(matches!(zellig_swap(&seq("a a"), std::iter::empty(), &mut r), Err(PerformerError::NoCandidate(_))));
    }

    #[test]
    fn swap_performer_learns_vocab() {
        let mut z = ZelligSwap::new(None, 1);
        let req = |round, text| ZelligRequest { round, x: seq(text), m: None };
        z.corrupt(&req(0, "p q")).unwrap();
        let out = z.corrupt(&req(1, "p")).unwrap();
        assert_eq!(out.y, seq("q"));
    }

    #[test]
    fn sampler_is_seeded_and_differs_from_x() {
        let c = CorpusHandle::from_lines(["the cat sat", "the dog ran far"], Scheme::Whitespace, "t").unwrap();
        let m = train_ngram(&c, TrainOptions::default()).unwrap();
        let x = seq("the cat sat");
        let draw = |seed| zellig_sampler(&m, &x, &mut rng::stream(seed, "s", 0)).unwrap().y;
        assert_eq!(draw(5), draw(5));
        for seed in 0..200 {
            let out = zellig_sampler(&m, &x, &mut rng::stream(seed, "s", 0)).unwrap();
            assert_ne!(out.y, x);
            assert!(out.y.len() <= 6);
            assert!(out.declared_distance.is_none());
        }
    }

    #[test]
    fn sampler_differs_on_shuffled_character_model() {
        use rand::seq::SliceRandom;
        let real = crate::synth::generate_corpus(300, 17);
        let mut shuffle_rng = rng::stream(3, "shuffle", 0);
        let shuffled: Vec<String> = real
            .iter()
            .map(|line| {
                let mut chars: Vec<char> = line.chars().collect();
                chars.shuffle(&mut shuffle_rng);
                chars.into_iter().collect()
            })
            .collect();
        let c = CorpusHandle::from_lines(shuffled.iter().map(String::as_str), Scheme::Whitespace, "shuffled").unwrap();
        let m = train_ngram(&c, TrainOptions { order: 1, k: 1.0, unk_singletons: false }).unwrap();
        let mut same = 0;
        for round in 0..1_000u64 {
            let x = seq(&real[round as usize % real.len()]);
            let out = zellig_sampler(&m, &x, &mut rng::stream(42, "s", round)).unwrap();
            same += usize::from(out.y == x);
        }
        assert!(same <= 10, "{same} of 1000 samples equal to x");
    }

    #[test]
    fn sampler_falls_back_to_swap_on_degenerate_model() {
        // After "a", EOS is near-certain, so every sample is exactly [a]; the
        // swap fallback then has no substitute in a one-token alphabet.
        let c = CorpusHandle::from_lines(["a"; 4], Scheme::Whitespace, "t").unwrap();
        let m = train_ngram(&c, TrainOptions { order: 2, k: 1e-12, unk_singletons: false }).unwrap();
        let x = seq("a");
        let res = zellig_sampler(&m, &x, &mut rng::stream(0, "s", 0));
        assert!(matches!(res, Err(PerformerError::NoCandidate(_))), "{res:?}");
    }

    proptest! {
        #[test]
        fn swap_always_changes_x(tokens in proptest::collection::vec("[abc]", 1..8), seed: u64) {
            let x = TokenSequence::new(tokens).unwrap();
            let out = zellig_swap(&x, ["a", "b", "c"], &mut rng::stream(seed, "p", 0)).unwrap();
            prop_assert_ne!(&out.y, &x);
            prop_assert_eq!(out.declared_distance, out.y.hamming(&x));
        }
    }
}
