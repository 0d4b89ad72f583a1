//! Engine for adversarial three-performer text evaluations.
//!
//! A *John* supplies real instances `x` (optionally with metadata `m`), a
//! *Zellig* corrupts each one into a fake `y`, and a *Claude* is shown the
//! pair in random order and must pick the fake. The score `S` is the fraction
//! of scored rounds in which Claude picked `y`; Zelligs want it low, Claudes
//! and Johns want it high.
//!
//! Module map:
//!
//! - [`textdata`]: tokenization, corpora, metadata sidecars and the baseline Johns.
//! - [`lm`]: add-k smoothed n-gram models, sequence log-probabilities, perplexity, sampling.
//! - [`performers`]: the performer traits and baseline Claudes and Zelligs.
//! - [`protocol`]: schedules, timeout defaults, transparency and the round engine.
//! - [`scoring`]: score reports, Wilson intervals, winner rules and grid evaluations.
//! - [`registry`]: construction of performers from named configuration bindings.

pub mod clock;
pub mod lm;
pub mod performers;
pub mod protocol;
pub mod registry;
pub mod rng;
pub mod scoring;
pub mod synth;
pub mod textdata;

pub use lm::{LogProb, NGramModel};
pub use textdata::{CorpusHandle, Instance, Metadata, TokenSequence};

/// Version string written into every transcript header.
pub const ENGINE_VERSION: &str = concat!("arena-core/", env!("CARGO_PKG_VERSION"));
