//! Browser demo: corrupt a sentence, judge a pair, and simulate a whole
//! evaluation, all in logical time. Every operation returns a JSON string.
//!
//! The plain-Rust [`Demo`] methods carry the logic and are tested natively;
//! the `wasm_bindgen` wrappers only convert errors into JS exceptions.

use std::sync::Arc;

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use arena_core::lm::TrainOptions;
use arena_core::performers::{ClaudeRequest, Position, ZelligRequest};
use arena_core::protocol::{run_evaluation, Binding, EvaluationConfig, NullSink};
use arena_core::registry::{Registry, Resources};
use arena_core::scoring::score;
use arena_core::textdata::{tokenize, Scheme};
use arena_core::{NGramModel, TokenSequence};

/// Zellig performers the demo offers; all run without files or threads.
pub const ZELLIGS: [&str; 4] = ["zellig-copy", "zellig-swap", "zellig-sampler", "zellig-search"];

pub struct Demo {
    registry: Registry,
    corpus: String,
    model: Arc<NGramModel>,
}

impl Demo {
    /// Trains a bigram on `synth:<size>:<seed>`, shared by every operation.
    pub fn new(size: u32, seed: u32) -> Result<Demo, String> {
        if size == 0 {
            return Err("corpus size must be positive".into());
        }
        let registry = Registry::new(Resources::new("."));
        let corpus = format!("synth:{size}:{seed}");
        let model = registry
            .resources()
            .trained_model(&corpus, TrainOptions { order: 2, k: 1.0, unk_singletons: false })
            .map_err(|e| e.to_string())?;
        Ok(Demo { registry, corpus, model })
    }

    pub fn corpus(&self) -> &str {
        &self.corpus
    }

    /// Sample sentences from the training corpus, for seeding the inputs.
    pub fn examples(&self, n: usize) -> Value {
        let corpus =
            self.registry.resources().corpus(&self.corpus, Scheme::Whitespace).expect("corpus loaded at construction");
        let lines: Vec<String> = corpus.sequences().take(n).map(|s| s.to_string()).collect();
        json!(lines)
    }

    fn zellig_binding(&self, name: &str, seed: u32) -> Result<Binding, String> {
        let b = Binding::new(name);
        Ok(match name {
            "zellig-copy" => b,
            "zellig-swap" => b.with("seed", i64::from(seed)).with("vocab_corpus", self.corpus.as_str()),
            "zellig-sampler" => {
                b.with("seed", i64::from(seed)).with("train_corpus", self.corpus.as_str()).with("order", 2)
            }
            "zellig-search" => b.with("train_corpus", self.corpus.as_str()).with("order", 2).with("delta", 1),
            other => return Err(format!("unknown zellig {other:?}; expected one of {ZELLIGS:?}")),
        })
    }

    fn log2(&self, seq: &TokenSequence) -> f64 {
        self.model.log_prob(seq).value()
    }

    /// Runs one Zellig on `text` and reports both sequences with their
    /// log2 probabilities under the demo bigram.
    pub fn corrupt(&self, text: &str, zellig: &str, seed: u32) -> Result<Value, String> {
        let x = tokenize(text, Scheme::Whitespace).map_err(|e| e.to_string())?;
        let mut performer =
            self.registry.build_zellig(&self.zellig_binding(zellig, seed)?).map_err(|e| e.to_string())?;
        let out = performer.corrupt(&ZelligRequest { round: 0, x: x.clone(), m: None }).map_err(|e| e.to_string())?;
        Ok(json!({
            "zellig": zellig,
            "x": x.to_string(),
            "y": out.y.to_string(),
            "distance": x.hamming(&out.y),
            "log2_px": self.log2(&x),
            "log2_py": self.log2(&out.y),
        }))
    }

    /// Asks the bigram Claude which of `first` and `second` is the fake.
    pub fn judge(&self, first: &str, second: &str) -> Result<Value, String> {
        let a = tokenize(first, Scheme::Whitespace).map_err(|e| format!("first: {e}"))?;
        let b = tokenize(second, Scheme::Whitespace).map_err(|e| format!("second: {e}"))?;
        let binding =
            Binding::new("claude-ngram").with("train_corpus", self.corpus.as_str()).with("order", 2).with("seed", 0);
        let mut claude = self.registry.build_claude(&binding).map_err(|e| e.to_string())?;
        let log2 = [self.log2(&a), self.log2(&b)];
        let choice = claude.choose(&ClaudeRequest { round: 0, items: [a, b], m: None }).map_err(|e| e.to_string())?;
        Ok(json!({
            "fake": match choice.position {
                Position::First => 0,
                Position::Second => 1,
            },
            "log2": log2,
        }))
    }

    /// Runs a full evaluation from a JSON config and returns its score
    /// report. Only logical, non-pipelined configs are accepted: the browser
    /// has neither threads nor a usable clock.
    pub fn simulate(&self, config_json: &str) -> Result<Value, String> {
        let config: EvaluationConfig = serde_json::from_str(config_json).map_err(|e| format!("config: {e}"))?;
        if !config.deadline.is_logical() || config.pipelined {
            return Err("the demo runs logical, non-pipelined evaluations only".into());
        }
        let john = self.registry.build_john(&config.john).map_err(|e| e.to_string())?;
        let zellig = self.registry.build_zellig(&config.zellig).map_err(|e| e.to_string())?;
        let claude = self.registry.build_claude(&config.claude).map_err(|e| e.to_string())?;
        let t = run_evaluation(&config, john, zellig, claude, &mut NullSink).map_err(|e| e.to_string())?;
        let report = score(&t).map_err(|e| e.to_string())?;
        serde_json::to_value(report).map_err(|e| e.to_string())
    }

    /// A ready-to-edit config for [`Demo::simulate`] pitting `zellig`
    /// against the bigram Claude.
    pub fn default_config(&self, zellig: &str, rounds: u32, seed: u32) -> Result<Value, String> {
        let config = EvaluationConfig {
            rounds: u64::from(rounds),
            deadline: Default::default(),
            seed: u64::from(seed),
            schedule: Default::default(),
            claude_sees_metadata: false,
            pipelined: false,
            john: Binding::new("john-iid").with("corpus", self.corpus.as_str()).with("seed", i64::from(seed)),
            zellig: self.zellig_binding(zellig, seed)?,
            claude: Binding::new("claude-ngram")
                .with("train_corpus", self.corpus.as_str())
                .with("order", 2)
                .with("seed", i64::from(seed)),
        };
        serde_json::to_value(config).map_err(|e| e.to_string())
    }
}

fn js(r: Result<Value, String>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = Demo)]
pub struct WasmDemo(Demo);

#[wasm_bindgen(js_class = Demo)]
impl WasmDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(size: u32, seed: u32) -> Result<WasmDemo, JsError> {
        Demo::new(size, seed).map(WasmDemo).map_err(|e| JsError::new(&e))
    }

    pub fn examples(&self, n: usize) -> String {
        self.0.examples(n).to_string()
    }

    pub fn corrupt(&self, text: &str, zellig: &str, seed: u32) -> Result<String, JsError> {
        js(self.0.corrupt(text, zellig, seed))
    }

    pub fn judge(&self, first: &str, second: &str) -> Result<String, JsError> {
        js(self.0.judge(first, second))
    }

    pub fn simulate(&self, config_json: &str) -> Result<String, JsError> {
        js(self.0.simulate(config_json))
    }

    #[wasm_bindgen(js_name = defaultConfig)]
    pub fn default_config(&self, zellig: &str, rounds: u32, seed: u32) -> Result<String, JsError> {
        js(self.0.default_config(zellig, rounds, seed))
    }
}
