//! Builds performers from configuration bindings.
//!
//! Corpus references accept a file path (relative to the resource base
//! directory), `mem:<name>` for corpora registered in process, or
//! `synth:<n>:<seed>` / `synth:<register>:<n>:<seed>` for generated text.
//! Model references accept a model file path or `mem:<name>`; alternatively a
//! performer may give `train_corpus` (plus optional `order` and `k`) and the
//! model is trained on first use. Loaded corpora and models are cached and
//! shared.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::Serialize;

use crate::lm::{train_ngram, NGramModel, TrainOptions};
use crate::performers::{
    Claude, ClaudeNgram, ClaudeUniform, John, JohnIid, JohnSequential, PerformerError, Role, SearchMode, Zellig,
    ZelligCopy, ZelligSampler, ZelligSearch, ZelligSwap,
};
use crate::protocol::{Binding, EvaluationConfig, ParamValue};
use crate::synth::{self, Register};
use crate::textdata::{attach_metadata, load_corpus, CorpusHandle, Scheme};

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("no {role} performer named `{name}`")]
    UnknownPerformer { role: Role, name: String },
    #[error("invalid parameter `{field}`: {message}")]
    Param { field: String, message: String },
    #[error("resource `{reference}` unavailable: {message}")]
    Resource { reference: String, message: String },
    #[error(transparent)]
    Performer(#[from] PerformerError),
}

impl RegistryError {
    pub fn param(field: impl Into<String>, message: impl Into<String>) -> Self {
        RegistryError::Param { field: field.into(), message: message.into() }
    }

    fn resource(reference: &str, message: impl ToString) -> Self {
        RegistryError::Resource { reference: reference.to_string(), message: message.to_string() }
    }
}

/// The three performers of one evaluation.
pub struct Lineup {
    pub john: Box<dyn John>,
    pub zellig: Box<dyn Zellig>,
    pub claude: Box<dyn Claude>,
}

pub trait PerformerFactory: Sync {
    fn build(&self, config: &EvaluationConfig) -> Result<Lineup, RegistryError>;
}

#[derive(Debug, Clone, Serialize)]
pub struct CatalogEntry {
    pub role: Role,
    pub name: &'static str,
    pub params: &'static [&'static str],
    pub description: &'static str,
}

const MODEL_PARAMS: &[&str] = &["model", "train_corpus", "order", "k", "seed"];

pub const CATALOG: &[CatalogEntry] = &[
    CatalogEntry {
        role: Role::John,
        name: JohnIid::NAME,
        params: &["corpus", "scheme", "metadata", "seed"],
        description: "uniform draws with replacement from a corpus",
    },
    CatalogEntry {
        role: Role::John,
        name: JohnSequential::NAME,
        params: &["corpus", "scheme", "metadata", "start"],
        description: "corpus order, wrapping at the end",
    },
    CatalogEntry { role: Role::Zellig, name: ZelligCopy::NAME, params: &[], description: "returns x unchanged" },
    CatalogEntry {
        role: Role::Zellig,
        name: ZelligSwap::NAME,
        params: &["vocab_corpus", "scheme", "seed"],
        description: "transposes one adjacent pair of differing tokens",
    },
    CatalogEntry {
        role: Role::Zellig,
        name: ZelligSampler::NAME,
        params: MODEL_PARAMS,
        description: "samples a fresh sequence from an n-gram model",
    },
    CatalogEntry {
        role: Role::Zellig,
        name: ZelligSearch::NAME,
        params: &["model", "train_corpus", "order", "k", "delta", "mode", "width"],
        description: "most probable substitution-only edit of x within a Hamming radius",
    },
    CatalogEntry {
        role: Role::Claude,
        name: ClaudeNgram::NAME,
        params: MODEL_PARAMS,
        description: "calls the lower-probability item fake",
    },
    CatalogEntry { role: Role::Claude, name: ClaudeUniform::NAME, params: &["seed"], description: "fair coin" },
];

pub fn catalog_entry(role: Role, name: &str) -> Option<&'static CatalogEntry> {
    CATALOG.iter().find(|e| e.role == role && e.name == name)
}

/// Shared corpora and models, resolved against a base directory.
#[derive(Default)]
pub struct Resources {
    base_dir: PathBuf,
    corpora: Mutex<HashMap<String, Arc<CorpusHandle>>>,
    models: Mutex<HashMap<String, Arc<NGramModel>>>,
}

impl Resources {
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        Resources { base_dir: base_dir.into(), ..Default::default() }
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    /// Makes `corpus` available as `mem:<name>`.
    pub fn register_corpus(&self, name: &str, corpus: Arc<CorpusHandle>) {
        let mut c = self.corpora.lock().expect("corpus cache poisoned");
        c.insert(format!("mem:{name}"), corpus);
    }

    /// Makes `model` available as `mem:<name>`.
    pub fn register_model(&self, name: &str, model: Arc<NGramModel>) {
        let mut m = self.models.lock().expect("model cache poisoned");
        m.insert(format!("mem:{name}"), model);
    }

    fn path(&self, reference: &str) -> PathBuf {
        let p = Path::new(reference);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn corpus(&self, reference: &str, scheme: Scheme) -> Result<Arc<CorpusHandle>, RegistryError> {
        let key = format!("{reference}\u{0}{scheme:?}");
        if let Some(c) = self.lookup_corpus(reference, &key) {
            return Ok(c);
        }
        let corpus = if let Some(spec) = reference.strip_prefix("synth:") {
            let (register, n, seed) = parse_synth(spec).ok_or_else(|| {
                RegistryError::resource(reference, "expected synth:<n>:<seed> or synth:<story|news>:<n>:<seed>")
            })?;
            let lines = synth::generate_register(n, seed, register);
            CorpusHandle::from_lines(lines.iter().map(String::as_str), scheme, reference)
                .map_err(|e| RegistryError::resource(reference, e))?
        } else if reference.starts_with("mem:") {
            return Err(RegistryError::resource(reference, "no in-memory corpus registered under that name"));
        } else {
            load_corpus(self.path(reference), scheme).map_err(|e| RegistryError::resource(reference, e))?
        };
        let corpus = Arc::new(corpus);
        self.corpora.lock().expect("corpus cache poisoned").insert(key, corpus.clone());
        Ok(corpus)
    }

    fn lookup_corpus(&self, reference: &str, key: &str) -> Option<Arc<CorpusHandle>> {
        let c = self.corpora.lock().expect("corpus cache poisoned");
        c.get(reference).filter(|_| reference.starts_with("mem:")).or_else(|| c.get(key)).cloned()
    }

    pub fn model(&self, reference: &str) -> Result<Arc<NGramModel>, RegistryError> {
        if let Some(m) = self.models.lock().expect("model cache poisoned").get(reference) {
            return Ok(m.clone());
        }
        if reference.starts_with("mem:") {
            return Err(RegistryError::resource(reference, "no in-memory model registered under that name"));
        }
        let model =
            Arc::new(NGramModel::load(self.path(reference)).map_err(|e| RegistryError::resource(reference, e))?);
        self.models.lock().expect("model cache poisoned").insert(reference.to_string(), model.clone());
        Ok(model)
    }

    pub fn trained_model(&self, corpus_ref: &str, options: TrainOptions) -> Result<Arc<NGramModel>, RegistryError> {
        let key = format!("train\u{0}{corpus_ref}\u{0}{}\u{0}{}", options.order, options.k);
        if let Some(m) = self.models.lock().expect("model cache poisoned").get(&key) {
            return Ok(m.clone());
        }
        let corpus = self.corpus(corpus_ref, Scheme::Whitespace)?;
        let model = Arc::new(train_ngram(&corpus, options).map_err(|e| RegistryError::resource(corpus_ref, e))?);
        self.models.lock().expect("model cache poisoned").insert(key, model.clone());
        Ok(model)
    }
}

fn parse_synth(spec: &str) -> Option<(Register, usize, u64)> {
    let parts: Vec<&str> = spec.split(':').collect();
    let (register, n, seed) = match parts.as_slice() {
        [n, seed] => (Register::Story, *n, *seed),
        [r, n, seed] => (
            match *r {
                "story" => Register::Story,
                "news" => Register::News,
                _ => return None,
            },
            *n,
            *seed,
        ),
        _ => return None,
    };
    Some((register, n.parse().ok()?, seed.parse().ok()?))
}

/// Typed access to one binding's parameters, with field paths in errors.
struct Params<'a> {
    role: Role,
    binding: &'a Binding,
}

impl<'a> Params<'a> {
    fn field(&self, key: &str) -> String {
        format!("{}.{key}", self.role)
    }

    fn check_known(&self, allowed: &[&str]) -> Result<(), RegistryError> {
        for key in self.binding.params.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(RegistryError::param(
                    self.field(key),
                    format!("not a parameter of {}; expected one of {allowed:?}", self.binding.name),
                ));
            }
        }
        Ok(())
    }

    fn str(&self, key: &str) -> Result<Option<&'a str>, RegistryError> {
        match self.binding.params.get(key) {
            None => Ok(None),
            Some(ParamValue::Str(s)) => Ok(Some(s)),
            Some(other) => Err(RegistryError::param(self.field(key), format!("expected a string, got {other:?}"))),
        }
    }

    fn required_str(&self, key: &str) -> Result<&'a str, RegistryError> {
        self.str(key)?.ok_or_else(|| RegistryError::param(self.field(key), "required"))
    }

    fn uint(&self, key: &str) -> Result<Option<u64>, RegistryError> {
        match self.binding.params.get(key) {
            None => Ok(None),
            Some(ParamValue::Int(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(other) => {
                Err(RegistryError::param(self.field(key), format!("expected a non-negative integer, got {other:?}")))
            }
        }
    }

    fn float(&self, key: &str) -> Result<Option<f64>, RegistryError> {
        match self.binding.params.get(key) {
            None => Ok(None),
            Some(ParamValue::Float(f)) => Ok(Some(*f)),
            Some(ParamValue::Int(i)) => Ok(Some(*i as f64)),
            Some(other) => Err(RegistryError::param(self.field(key), format!("expected a number, got {other:?}"))),
        }
    }

    fn seed(&self) -> Result<u64, RegistryError> {
        Ok(self.uint("seed")?.unwrap_or(0))
    }

    fn scheme(&self) -> Result<Scheme, RegistryError> {
        match self.str("scheme")? {
            None | Some("whitespace") => Ok(Scheme::Whitespace),
            Some("lowercase") => Ok(Scheme::WhitespaceLowercase),
            Some(other) => Err(RegistryError::param(
                self.field("scheme"),
                format!("expected \"whitespace\" or \"lowercase\", got {other:?}"),
            )),
        }
    }
}

/// The built-in performers.
#[derive(Default)]
pub struct Registry {
    resources: Resources,
}

impl Registry {
    pub fn new(resources: Resources) -> Self {
        Registry { resources }
    }

    pub fn resources(&self) -> &Resources {
        &self.resources
    }

    fn params<'a>(&self, role: Role, binding: &'a Binding) -> Result<Params<'a>, RegistryError> {
        let entry = catalog_entry(role, &binding.name)
            .ok_or_else(|| RegistryError::UnknownPerformer { role, name: binding.name.clone() })?;
        let p = Params { role, binding };
        p.check_known(entry.params)?;
        Ok(p)
    }

    fn john_corpus(&self, p: &Params<'_>) -> Result<Arc<CorpusHandle>, RegistryError> {
        let corpus = self.resources.corpus(p.required_str("corpus")?, p.scheme()?)?;
        match p.str("metadata")? {
            None => Ok(corpus),
            Some(sidecar) => {
                let (joined, report) = attach_metadata(&corpus, self.resources.path(sidecar))
                    .map_err(|e| RegistryError::resource(sidecar, e))?;
                if !report.unmatched_ids.is_empty() {
                    log::warn!("{} metadata records match no instance", report.unmatched_ids.len());
                }
                Ok(Arc::new(joined))
            }
        }
    }

    fn model(&self, p: &Params<'_>) -> Result<Arc<NGramModel>, RegistryError> {
        match (p.str("model")?, p.str("train_corpus")?) {
            (Some(m), None) => {
                if p.binding.params.contains_key("order") || p.binding.params.contains_key("k") {
                    return Err(RegistryError::param(p.field("order"), "only applies with train_corpus"));
                }
                self.resources.model(m)
            }
            (None, Some(c)) => {
                let defaults = TrainOptions::default();
                let options = TrainOptions {
                    order: p.uint("order")?.map_or(defaults.order, |o| o as usize),
                    k: p.float("k")?.unwrap_or(defaults.k),
                    unk_singletons: false,
                };
                self.resources.trained_model(c, options)
            }
            (Some(_), Some(_)) => Err(RegistryError::param(p.field("model"), "give model or train_corpus, not both")),
            (None, None) => Err(RegistryError::param(p.field("model"), "required (or train_corpus)")),
        }
    }

    pub fn build_john(&self, binding: &Binding) -> Result<Box<dyn John>, RegistryError> {
        let p = self.params(Role::John, binding)?;
        let corpus = self.john_corpus(&p)?;
        Ok(match binding.name.as_str() {
            JohnIid::NAME => Box::new(JohnIid::new(corpus, p.seed()?)?),
            JohnSequential::NAME => {
                let start = p.uint("start")?.unwrap_or(0) as usize;
                Box::new(JohnSequential::new(corpus, start)?)
            }
            _ => unreachable!("catalog and builder agree"),
        })
    }

    pub fn build_zellig(&self, binding: &Binding) -> Result<Box<dyn Zellig>, RegistryError> {
        let p = self.params(Role::Zellig, binding)?;
        Ok(match binding.name.as_str() {
            ZelligCopy::NAME => Box::new(ZelligCopy::new()),
            ZelligSwap::NAME => {
                let vocab = match p.str("vocab_corpus")? {
                    None => None,
                    Some(c) => {
                        let corpus = self.resources.corpus(c, p.scheme()?)?;
                        let v: BTreeSet<String> = corpus.vocab().clone();
                        Some(v.into_iter().collect())
                    }
                };
                Box::new(ZelligSwap::new(vocab, p.seed()?))
            }
            ZelligSampler::NAME => Box::new(ZelligSampler::new(self.model(&p)?, p.seed()?)?),
            ZelligSearch::NAME => {
                let delta = p.uint("delta")?.unwrap_or(1) as usize;
                let mode = match p.str("mode")? {
                    None | Some("exact") => {
                        if p.binding.params.contains_key("width") {
                            return Err(RegistryError::param(p.field("width"), "only applies to beam mode"));
                        }
                        SearchMode::Exact
                    }
                    Some("beam") => SearchMode::Beam { width: p.uint("width")?.map(|w| w as usize) },
                    Some(other) => {
                        return Err(RegistryError::param(
                            p.field("mode"),
                            format!("expected \"exact\" or \"beam\", got {other:?}"),
                        ))
                    }
                };
                Box::new(ZelligSearch::new(self.model(&p)?, delta, mode)?)
            }
            _ => unreachable!("catalog and builder agree"),
        })
    }

    pub fn build_claude(&self, binding: &Binding) -> Result<Box<dyn Claude>, RegistryError> {
        let p = self.params(Role::Claude, binding)?;
        Ok(match binding.name.as_str() {
            ClaudeNgram::NAME => Box::new(ClaudeNgram::new(self.model(&p)?, p.seed()?)?),
            ClaudeUniform::NAME => Box::new(ClaudeUniform::new(p.seed()?)),
            _ => unreachable!("catalog and builder agree"),
        })
    }
}

impl PerformerFactory for Registry {
    fn build(&self, config: &EvaluationConfig) -> Result<Lineup, RegistryError> {
        Ok(Lineup {
            john: self.build_john(&config.john)?,
            zellig: self.build_zellig(&config.zellig)?,
            claude: self.build_claude(&config.claude)?,
        })
    }
}
