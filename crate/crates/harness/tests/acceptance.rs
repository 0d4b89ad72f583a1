//! Acceptance suite: one PASS/FAIL line per criterion; exits nonzero if any
//! criterion fails.

use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use arena_core::lm::{perplexity, perplexity_of, train_ngram, LogProb, NGramModel, TrainOptions};
use arena_core::performers::{
    brute_force_argmax_oracle, zellig_search, Claude, ClaudeChoice, ClaudeRequest, John, JohnSequential,
    PerformerDescriptor, PerformerError, Position, Role, SearchMode, Zellig, ZelligOutput, ZelligRequest,
};
use arena_core::protocol::{
    run_evaluation, Binding, Deadline, EvaluationConfig, JsonlSink, NullSink, ScheduleKind, Transcript,
};
use arena_core::registry::{PerformerFactory, Registry, Resources};
use arena_core::rng::stream;
use arena_core::scoring::{compare, grid_evaluate, score, GridSpec, Interval, ScoreReport, Verdict};
use arena_core::synth;
use arena_core::textdata::{CorpusHandle, Scheme, TokenSequence};
use arena_harness::api::REMOTE;
use arena_harness::client::{drive_claude, ArenaClient};
use arena_harness::server::{self, AppState};

/// ±3σ binomial band around 1/2 at N = 1000.
const CHANCE_BAND: (f64, f64) = (0.453, 0.547);
const BIG_CORPUS: &str = "synth:10000:2024";

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn in_band(s: f64) -> bool {
    CHANCE_BAND.0 <= s && s <= CHANCE_BAND.1
}

fn base_config(rounds: u64, john: Binding, zellig: Binding, claude: Binding) -> EvaluationConfig {
    EvaluationConfig {
        rounds,
        deadline: Deadline::Logical,
        seed: 20_240_601,
        schedule: ScheduleKind::Zero,
        claude_sees_metadata: false,
        pipelined: false,
        john,
        zellig,
        claude,
    }
}

fn run_with(registry: &Registry, cfg: &EvaluationConfig) -> Result<Transcript, String> {
    let lineup = registry.build(cfg).map_err(|e| e.to_string())?;
    run_evaluation(cfg, lineup.john, lineup.zellig, lineup.claude, &mut NullSink).map_err(|e| e.to_string())
}

fn bigram_claude(corpus: &str) -> Binding {
    Binding::new("claude-ngram").with("train_corpus", corpus).with("order", 2).with("seed", 7)
}

fn copy_bound(registry: &Registry) -> Outcome {
    let start = Instant::now();
    let cfg = base_config(
        1000,
        Binding::new("john-iid").with("corpus", BIG_CORPUS).with("seed", 1),
        Binding::new("zellig-copy"),
        bigram_claude(BIG_CORPUS),
    );
    let t = match run_with(registry, &cfg) {
        Ok(t) => t,
        Err(e) => return check(false, e),
    };
    let r = score(&t).expect("engine transcripts score");
    let secs = start.elapsed().as_secs_f64();
    check(
        in_band(r.s) && secs < 30.0 && r.forfeit_count == 0,
        format!("S = {:.4} over N = {}, runtime {secs:.1}s (band {CHANCE_BAND:?}, < 30s)", r.s, r.n_scored),
    )
}

fn ignorant_sampler(registry: &Registry) -> Outcome {
    let start = Instant::now();
    let real = synth::generate_corpus(10_000, 2024);
    let mut rng = stream(5, "char-shuffle", 0);
    let shuffled: Vec<String> = real
        .iter()
        .map(|line| {
            let mut chars: Vec<char> = line.chars().collect();
            chars.shuffle(&mut rng);
            // one token per character; `_` stands in for a space
            chars
                .into_iter()
                .map(|c| if c == ' ' { "_".to_string() } else { c.to_string() })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let corpus = CorpusHandle::from_lines(shuffled.iter().map(String::as_str), Scheme::Whitespace, "char-shuffled")
        .expect("shuffled corpus loads");
    registry.resources().register_corpus("char-shuffled", Arc::new(corpus));
    let cfg = base_config(
        1000,
        Binding::new("john-iid").with("corpus", BIG_CORPUS).with("seed", 2),
        Binding::new("zellig-sampler").with("train_corpus", "mem:char-shuffled").with("order", 1).with("seed", 3),
        bigram_claude(BIG_CORPUS),
    );
    let t = match run_with(registry, &cfg) {
        Ok(t) => t,
        Err(e) => return check(false, e),
    };
    let r = score(&t).expect("engine transcripts score");
    let secs = start.elapsed().as_secs_f64();
    check(
        r.s >= 0.90 && secs < 60.0,
        format!("S = {:.4} over N = {} (>= 0.90), runtime {secs:.1}s (< 60s)", r.s, r.n_scored),
    )
}

fn search_oracle() -> Outcome {
    let start = Instant::now();
    let mut agree = 0;
    let mut first_miss = None;
    const CASES: u64 = 200;
    for case in 0..CASES {
        let mut rng = stream(77, "oracle-case", case);
        let alphabet_size = rng.random_range(2..=10);
        let vocab: Vec<String> = (0..alphabet_size).map(|i| format!("w{i}")).collect();
        let lines: Vec<String> = (0..rng.random_range(3..30))
            .map(|_| {
                let len = rng.random_range(1..=6);
                (0..len).map(|_| vocab[rng.random_range(0..vocab.len())].clone()).collect::<Vec<_>>().join(" ")
            })
            .collect();
        let corpus = CorpusHandle::from_lines(lines.iter().map(String::as_str), Scheme::Whitespace, "random")
            .expect("random corpus loads");
        let options = TrainOptions {
            order: rng.random_range(1..=3),
            k: [0.1, 0.5, 1.0][rng.random_range(0..3)],
            unk_singletons: false,
        };
        let model = train_ngram(&corpus, options).expect("valid options");
        let x_len = rng.random_range(1..=6);
        let x = TokenSequence::new((0..x_len).map(|_| vocab[rng.random_range(0..vocab.len())].clone())).unwrap();
        let delta = rng.random_range(1..=2);
        let fast = zellig_search(&model, &x, delta, SearchMode::Exact).map(|o| o.y);
        let slow = brute_force_argmax_oracle(&model, &x, delta);
        match (fast, slow) {
            (Ok(a), Ok(b)) if a == b => agree += 1,
            (a, b) => {
                first_miss.get_or_insert(format!("case {case}: search {a:?}, oracle {b:?}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        agree == CASES && secs < 60.0,
        format!(
            "{agree}/{CASES} agree, runtime {secs:.1}s{}",
            first_miss.map(|m| format!("; {m}")).unwrap_or_default()
        ),
    )
}

fn rel_err(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn perplexity_exactness() -> Outcome {
    let lp = |p: f64| LogProb::new(p.log2()).expect("valid log probability");
    let mut problems = vec![];

    // V equiprobable events: the perplexity is V
    for v in [1usize, 2, 3, 7, 12, 100, 1000] {
        let got = perplexity_of(std::iter::repeat_n(lp(1.0 / v as f64), v)).unwrap();
        if rel_err(got, v as f64) > 1e-9 {
            problems.push(format!("uniform over {v}: {got}"));
        }
    }

    // uniform n-gram model: each sequence is an event of probability
    // |V|^-(len+1), enumerated here token by token
    let tokens = ["a", "b", "c", "d", "e"];
    let v = tokens.len() + 2;
    let model = NGramModel::uniform(tokens, 2).unwrap();
    let test: Vec<TokenSequence> =
        ["a", "a b", "c d e", "e e e e", "b"].iter().map(|s| TokenSequence::new(s.split(' ')).unwrap()).collect();
    let mut log_sum = 0.0;
    for x in &test {
        let mut p = 1.0;
        for _ in 0..=x.len() {
            p *= 1.0 / v as f64;
        }
        log_sum += p.log2();
    }
    let enumerated = (-log_sum / test.len() as f64).exp2();
    let got = perplexity(&model, &test).unwrap();
    if rel_err(got, enumerated) > 1e-9 {
        problems.push(format!("uniform bigram: {got} vs enumerated {enumerated}"));
    }

    let eighths = perplexity_of([lp(0.125); 4]).unwrap();
    if eighths != 8.0 {
        problems.push(format!("events of probability 1/8: {eighths}"));
    }
    let mixed = perplexity_of([lp(0.5), lp(0.125)]).unwrap();
    if mixed != 4.0 {
        problems.push(format!("mixed 1/2, 1/8: {mixed}"));
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            "uniform cases within 1e-9 relative; 1/8 -> 8 and {1/2, 1/8} -> 4 exactly".into()
        } else {
            problems.join("; ")
        },
    )
}

/// Marks fakes with a token no real sentence contains.
const MARK: &str = "<fake>";

struct MarkingZellig(PerformerDescriptor);

impl Zellig for MarkingZellig {
    fn descriptor(&self) -> &PerformerDescriptor {
        &self.0
    }
    fn corrupt(&mut self, r: &ZelligRequest) -> Result<ZelligOutput, PerformerError> {
        let mut tokens = r.x.tokens().to_vec();
        tokens[0] = MARK.into();
        Ok(ZelligOutput { y: TokenSequence::new(tokens).unwrap(), elapsed: Duration::ZERO, declared_distance: None })
    }
}

struct FailingZellig(PerformerDescriptor);

impl Zellig for FailingZellig {
    fn descriptor(&self) -> &PerformerDescriptor {
        &self.0
    }
    fn corrupt(&mut self, _: &ZelligRequest) -> Result<ZelligOutput, PerformerError> {
        Err(PerformerError::Crashed("gives up".into()))
    }
}

/// Finds the marked item, except on the rounds listed in `miss`.
struct ScriptedClaude {
    miss: Vec<u64>,
    descriptor: PerformerDescriptor,
}

impl Claude for ScriptedClaude {
    fn descriptor(&self) -> &PerformerDescriptor {
        &self.descriptor
    }
    fn choose(&mut self, r: &ClaudeRequest) -> Result<ClaudeChoice, PerformerError> {
        let marked = if r.items[0].tokens()[0] == MARK { Position::First } else { Position::Second };
        Ok(ClaudeChoice {
            position: if self.miss.contains(&r.round) { marked.other() } else { marked },
            elapsed: Duration::ZERO,
        })
    }
}

fn descriptor(role: Role, name: &str) -> PerformerDescriptor {
    PerformerDescriptor::new(role, name, "acceptance fixture").unwrap()
}

fn fixture_john() -> Box<dyn John> {
    let corpus = CorpusHandle::from_lines(
        ["the cat sat", "a dog ran home", "birds sing", "the farmer waits"],
        Scheme::Whitespace,
        "fixture",
    )
    .unwrap();
    Box::new(JohnSequential::new(Arc::new(corpus), 0).unwrap())
}

fn cli_s(path: &std::path::Path) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_arena")).arg("score").arg(path).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    Ok(String::from_utf8_lossy(&out.stdout).lines().next().unwrap_or_default().to_string())
}

fn score_exactness() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut detail = vec![];
    let mut pass = true;

    let cfg = base_config(4, Binding::new("fixture"), Binding::new("marking"), Binding::new("scripted"));
    let path = dir.path().join("hand.jsonl");
    let file = std::fs::File::create(&path).unwrap();
    let t = run_evaluation(
        &cfg,
        fixture_john(),
        Box::new(MarkingZellig(descriptor(Role::Zellig, "marking"))),
        Box::new(ScriptedClaude { miss: vec![2], descriptor: descriptor(Role::Claude, "scripted") }),
        &mut JsonlSink::new(file),
    )
    .unwrap();
    let indicators: Vec<u8> = t.records.iter().map(|r| u8::from(r.claude_correct)).collect();
    let s = score(&t).unwrap().s;
    let cli = cli_s(&path);
    pass &= indicators == [1, 1, 0, 1] && s == 0.75 && cli.as_deref() == Ok("S=0.75");
    detail.push(format!("indicators {indicators:?}: engine S = {s}, cli {cli:?}"));

    let cfg = base_config(5, Binding::new("fixture"), Binding::new("failing"), Binding::new("scripted"));
    let path = dir.path().join("forfeit.jsonl");
    let file = std::fs::File::create(&path).unwrap();
    let t = run_evaluation(
        &cfg,
        fixture_john(),
        Box::new(FailingZellig(descriptor(Role::Zellig, "failing"))),
        Box::new(ScriptedClaude { miss: vec![], descriptor: descriptor(Role::Claude, "scripted") }),
        &mut JsonlSink::new(file),
    )
    .unwrap();
    let r = score(&t).unwrap();
    let cli = cli_s(&path);
    pass &= r.s == 1.0 && r.forfeit_count == 5 && cli.as_deref() == Ok("S=1");
    detail.push(format!("all-forfeit N=5: engine S = {}, cli {cli:?}", r.s));
    check(pass, detail.join("; "))
}

struct Stalling {
    inner: Box<dyn Zellig>,
    sleep: Duration,
}

impl Zellig for Stalling {
    fn descriptor(&self) -> &PerformerDescriptor {
        self.inner.descriptor()
    }
    fn corrupt(&mut self, r: &ZelligRequest) -> Result<ZelligOutput, PerformerError> {
        std::thread::sleep(self.sleep);
        self.inner.corrupt(r)
    }
}

struct StallingClaude {
    inner: Box<dyn Claude>,
    sleep: Duration,
}

impl Claude for StallingClaude {
    fn descriptor(&self) -> &PerformerDescriptor {
        self.inner.descriptor()
    }
    fn choose(&mut self, r: &ClaudeRequest) -> Result<ClaudeChoice, PerformerError> {
        std::thread::sleep(self.sleep);
        self.inner.choose(r)
    }
}

fn timeout_defaults(registry: &Registry) -> Outcome {
    let mut detail = vec![];

    let mut cfg = base_config(
        20,
        Binding::new("john-sequential").with("corpus", "synth:500:3"),
        Binding::new("zellig-swap").with("seed", 4),
        Binding::new("claude-uniform").with("seed", 5),
    );
    cfg.deadline = Deadline::WallClock(Duration::from_millis(30));
    let lineup = registry.build(&cfg).unwrap();
    let stalled = Stalling { inner: lineup.zellig, sleep: Duration::from_millis(60) };
    let t = run_evaluation(&cfg, lineup.john, Box::new(stalled), lineup.claude, &mut NullSink).unwrap();
    let zellig_ok = t.records.len() == 20 && t.records.iter().all(|r| r.zellig_forfeit && r.claude_correct);
    detail.push(format!(
        "stalling zellig: {}/{} rounds forfeit and credited to Claude",
        t.records.iter().filter(|r| r.zellig_forfeit && r.claude_correct).count(),
        t.records.len()
    ));

    let mut cfg = base_config(
        1000,
        Binding::new("john-iid").with("corpus", "synth:2000:3").with("seed", 6),
        Binding::new("zellig-swap").with("seed", 7),
        bigram_claude("synth:2000:3"),
    );
    cfg.deadline = Deadline::WallClock(Duration::from_millis(5));
    let lineup = registry.build(&cfg).unwrap();
    let stalled = StallingClaude { inner: lineup.claude, sleep: Duration::from_millis(12) };
    let t = run_evaluation(&cfg, lineup.john, lineup.zellig, Box::new(stalled), &mut NullSink).unwrap();
    let r = score(&t).unwrap();
    let defaulted = t.records.iter().filter(|r| r.claude_defaulted).count();
    let claude_ok = defaulted == 1000 && r.forfeit_count == 0 && in_band(r.s);
    detail.push(format!("stalling claude: {defaulted}/1000 defaulted, S = {:.4} (band {CHANCE_BAND:?})", r.s));
    check(zellig_ok && claude_ok, detail.join("; "))
}

fn determinism(registry: &Registry) -> Outcome {
    let cfg = EvaluationConfig {
        schedule: ScheduleKind::Semi { transparent: 5, opaque: 5 },
        ..base_config(
            200,
            Binding::new("john-iid").with("corpus", "synth:1000:8").with("seed", 1),
            Binding::new("zellig-search")
                .with("train_corpus", "synth:1000:8")
                .with("delta", 1)
                .with("mode", "beam")
                .with("width", 4),
            bigram_claude("synth:1000:8"),
        )
    };
    let bytes = |cfg: &EvaluationConfig| -> Vec<u8> {
        let lineup = registry.build(cfg).unwrap();
        let mut sink = JsonlSink::new(Vec::new());
        run_evaluation(cfg, lineup.john, lineup.zellig, lineup.claude, &mut sink).unwrap();
        sink.into_inner()
    };
    let a = bytes(&cfg);
    let b = bytes(&cfg);
    let identical = a == b;
    let local = Transcript::from_jsonl(std::str::from_utf8(&a).unwrap()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let remote = loopback(registry, &dir, &cfg);
    let remote_ok = match &remote {
        Ok(t) => t.records == local.records,
        Err(_) => false,
    };
    check(
        identical && remote_ok,
        format!(
            "two runs byte-identical: {identical} ({} bytes); loopback claude-ngram records identical: {}",
            a.len(),
            match remote {
                Ok(_) => remote_ok.to_string(),
                Err(e) => e,
            }
        ),
    )
}

fn loopback(registry: &Registry, dir: &tempfile::TempDir, cfg: &EvaluationConfig) -> Result<Transcript, String> {
    let remote_cfg = EvaluationConfig { claude: Binding::new(REMOTE), ..cfg.clone() };
    let mut claude = registry.build_claude(&cfg.claude).map_err(|e| e.to_string())?;
    let server_registry = Arc::new(Registry::new(Resources::new(dir.path())));
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async move {
        let state = AppState::open(server_registry, dir.path().join("data")).map_err(|e| e.to_string())?;
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| e.to_string())?;
        let client = ArenaClient::new(format!("http://{}", listener.local_addr().unwrap()));
        tokio::spawn(server::serve(listener, state, std::future::pending()));
        let id = client.create(&remote_cfg, None).await.map_err(|e| e.to_string())?.evaluation_id;
        drive_claude(&client, &id, claude.as_mut()).await.map_err(|e| e.to_string())?;
        client.wait_finished(&id, Duration::from_secs(120)).await.map_err(|e| e.to_string())?;
        let text = client.transcript(&id).await.map_err(|e| e.to_string())?;
        Transcript::from_jsonl(&text).map_err(|e| e.to_string())
    })
}

fn report(successes: u64, n: u64) -> ScoreReport {
    ScoreReport {
        evaluation_id: format!("eval-{successes}-of-{n}"),
        s: successes as f64 / n as f64,
        n_scored: n,
        successes,
        running: vec![],
        interval: Interval { low: 0.0, high: 1.0 },
        forfeit_count: 0,
        default_count: 0,
        s_excluding_forfeits: None,
        schedule: ScheduleKind::Zero,
        rounds: n,
        complete: true,
    }
}

fn winner_rules() -> Outcome {
    let mut problems = vec![];
    let pairs = [(300, 700), (700, 300), (500, 500), (0, 1000), (1000, 999)];
    for (a, b) in pairs {
        let (ra, rb) = (report(a, 1000), report(b, 1000));
        let higher = match a.cmp(&b) {
            std::cmp::Ordering::Greater => Verdict::AWins,
            std::cmp::Ordering::Less => Verdict::BWins,
            std::cmp::Ordering::Equal => Verdict::Tie,
        };
        for (role, want) in [(Role::Zellig, higher.swapped()), (Role::Claude, higher), (Role::John, higher)] {
            let got = compare(role, &ra, &rb).unwrap();
            let back = compare(role, &rb, &ra).unwrap();
            if got != want || back != got.swapped() {
                problems.push(format!("{role} {a} vs {b}: {got:?}/{back:?}, want {want:?}"));
            }
        }
    }
    // equal S over different N cannot be ranked
    if compare(Role::Claude, &report(5, 10), &report(50, 100)).is_ok() {
        problems.push("reports with different N were compared".into());
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("{} pairs x 3 roles, antisymmetric under swap", pairs.len())
        } else {
            problems.join("; ")
        },
    )
}

fn grid(registry: &Registry) -> Outcome {
    let spec: GridSpec = toml::from_str(
        r#"
rounds = 300
seed = 99
fixed = "claude"

[claude]
name = "claude-ngram"
train_corpus = "synth:3000:1"
order = 2

[[zelligs]]
name = "zellig-copy"

[[zelligs]]
name = "zellig-swap"
seed = 2

[[johns]]
name = "john-iid"
corpus = "synth:3000:1"
seed = 3

[[johns]]
name = "john-sequential"
corpus = "synth:3000:1"
"#,
    )
    .unwrap();
    let a = grid_evaluate(&spec, registry).unwrap();
    let b = grid_evaluate(&spec, registry).unwrap();
    let all_ok = a.cells.iter().flatten().all(|c| c.s().is_some());
    let reproducible = a == b;
    let s = |r: usize, c: usize| a.cell(r, c).s().unwrap_or(f64::NAN);
    let ordered = (0..2).all(|c| s(0, c) < s(1, c));
    check(
        all_ok && reproducible && ordered,
        format!(
            "cells complete: {all_ok}; reproducible: {reproducible}; copy S = [{:.3}, {:.3}] < swap S = [{:.3}, {:.3}]",
            s(0, 0),
            s(0, 1),
            s(1, 0),
            s(1, 1)
        ),
    )
}

fn main() -> ExitCode {
    let registry = Registry::new(Resources::new("."));
    type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("copy-zellig-chance-bound", Box::new(|| copy_bound(&registry))),
        ("ignorant-zellig-separation", Box::new(|| ignorant_sampler(&registry))),
        ("search-oracle-equivalence", Box::new(search_oracle)),
        ("perplexity-exactness", Box::new(perplexity_exactness)),
        ("score-exactness", Box::new(score_exactness)),
        ("timeout-defaults", Box::new(|| timeout_defaults(&registry))),
        ("determinism", Box::new(|| determinism(&registry))),
        ("winner-rules", Box::new(winner_rules)),
        ("grid", Box::new(|| grid(&registry))),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            check(false, format!("panicked: {msg}"))
        });
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!outcome.pass);
        println!("{verdict} {name}: {} [{:.1}s]", outcome.detail, start.elapsed().as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
