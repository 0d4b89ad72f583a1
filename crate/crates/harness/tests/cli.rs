use std::path::Path;
use std::process::{Command, Output};

use arena_core::performers::{PerformerDescriptor, Position, Role};
use arena_core::protocol::{
    permute_pair, Binding, Deadline, EvaluationConfig, Item, Mode, PerformerSet, RoundRecord, ScheduleKind, Transcript,
    TranscriptHeader,
};
use arena_core::rng::stream;
use arena_core::textdata::{tokenize, Scheme};

fn arena(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arena")).current_dir(dir).args(args).output().expect("arena binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn error_json(o: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let last = text.lines().last().expect("an error line");
    serde_json::from_str(last).unwrap_or_else(|e| panic!("not JSON ({e}): {last}"))
}

fn hand_built(indicators: &[bool]) -> Transcript {
    let d = |role, name: &str| PerformerDescriptor::new(role, name, "hand-built").unwrap();
    let header = TranscriptHeader {
        evaluation_id: "eval-hand".into(),
        config: EvaluationConfig {
            rounds: indicators.len() as u64,
            deadline: Deadline::Logical,
            seed: 0,
            schedule: ScheduleKind::Zero,
            claude_sees_metadata: false,
            pipelined: false,
            john: Binding::new("john-sequential"),
            zellig: Binding::new("zellig-swap"),
            claude: Binding::new("claude-uniform"),
        },
        performers: PerformerSet {
            john: d(Role::John, "john-sequential"),
            zellig: d(Role::Zellig, "zellig-swap"),
            claude: d(Role::Claude, "claude-uniform"),
        },
        engine_version: arena_core::ENGINE_VERSION.into(),
    };
    let x = tokenize("the cat sat", Scheme::Whitespace).unwrap();
    let y = tokenize("cat the sat", Scheme::Whitespace).unwrap();
    let records = indicators
        .iter()
        .enumerate()
        .map(|(n, &correct)| {
            let n = n as u64;
            let truth = permute_pair(n, &x, &y, None, &mut stream(0, "permute", n)).truth;
            RoundRecord {
                n,
                mode: Mode::Opaque,
                x: x.clone(),
                m: None,
                y: y.clone(),
                y_position: Some(truth),
                choice: Some(if correct { truth } else { truth.other() }),
                z: Some(if correct { Item::Y } else { Item::X }),
                zellig_forfeit: false,
                claude_defaulted: false,
                zellig_elapsed_us: 0,
                claude_elapsed_us: 0,
                claude_correct: correct,
            }
        })
        .collect();
    Transcript { header, records, status: None }
}

const RUN_CONFIG: &str = r#"
rounds = 40
seed = 1
schedule = "semi:2,2"

[john]
name = "john-iid"
corpus = "synth:300:4"
seed = 2

[zellig]
name = "zellig-swap"
seed = 3

[claude]
name = "claude-ngram"
train_corpus = "synth:300:4"
order = 2
"#;

#[test]
fn score_prints_s_first() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("t.jsonl"), hand_built(&[true, true, false, true]).to_jsonl()).unwrap();
    let out = arena(dir.path(), &["score", "t.jsonl"]);
    assert!(out.status.success(), "{out:?}");
    assert_eq!(stdout(&out).lines().next(), Some("S=0.75"));

    let out = arena(dir.path(), &["score", "t.jsonl", "--format", "json", "--csv", "s.csv"]);
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["s"], 0.75);
    assert_eq!(report["n_scored"], 4);
    let csv = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn replay_rejects_an_edited_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let t = hand_built(&[true, true, false, true]);
    let text = t.to_jsonl();
    std::fs::write(dir.path().join("ok.jsonl"), &text).unwrap();
    let ok = arena(dir.path(), &["replay", "ok.jsonl"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));

    // flip round 2's choice without touching its indicator
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let choice = t.records[2].choice.unwrap();
    lines[3] =
        lines[3].replace(&format!("\"choice\":{}", choice.index()), &format!("\"choice\":{}", choice.other().index()));
    assert_ne!(lines[3], text.lines().nth(3).unwrap());
    std::fs::write(dir.path().join("bad.jsonl"), lines.join("\n") + "\n").unwrap();
    let bad = arena(dir.path(), &["replay", "bad.jsonl"]);
    assert_eq!(bad.status.code(), Some(1));
    assert_eq!(error_json(&bad)["error"], "verification");
}

#[test]
fn run_is_deterministic_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), RUN_CONFIG).unwrap();
    let a = arena(dir.path(), &["run", "--config", "c.toml", "--seed", "42", "--out", "a.jsonl"]);
    let b = arena(dir.path(), &["run", "--config", "c.toml", "--seed", "42", "--out", "b.jsonl"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(stdout(&a), stdout(&b));
    let ta = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(ta, std::fs::read(dir.path().join("b.jsonl")).unwrap());
    assert!(stdout(&a).starts_with("S="));

    let c = arena(dir.path(), &["run", "--config", "c.toml", "--seed", "43", "--out", "c.jsonl"]);
    assert_ne!(ta, std::fs::read(dir.path().join("c.jsonl")).unwrap());
    assert!(c.status.success());

    let r = arena(dir.path(), &["replay", "a.jsonl", "--rerun"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(stdout(&r), stdout(&a));

    // a consistent forgery of one round's choice is caught by the re-run
    let text = String::from_utf8(ta).unwrap();
    let mut t = Transcript::from_jsonl(&text).unwrap();
    let r0 = t.records.iter_mut().find(|r| r.n == 4 && r.choice.is_some()).unwrap();
    r0.choice = r0.choice.map(Position::other);
    r0.z = r0.z.map(|z| if z == Item::Y { Item::X } else { Item::Y });
    r0.claude_correct = !r0.claude_correct;
    std::fs::write(dir.path().join("forged.jsonl"), t.to_jsonl()).unwrap();
    let f = arena(dir.path(), &["replay", "forged.jsonl", "--rerun"]);
    assert_eq!(f.status.code(), Some(1));
    assert_eq!(error_json(&f)["error"], "verification");
}

#[test]
fn json_configs_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg: EvaluationConfig = toml::from_str(RUN_CONFIG).unwrap();
    std::fs::write(dir.path().join("c.json"), serde_json::to_string(&cfg).unwrap()).unwrap();
    std::fs::write(dir.path().join("c.toml"), RUN_CONFIG).unwrap();
    let a = arena(dir.path(), &["run", "--config", "c.json", "--out", "a.jsonl"]);
    let b = arena(dir.path(), &["run", "--config", "c.toml", "--out", "b.jsonl"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(stdout(&a), stdout(&b));
    assert_eq!(std::fs::read(dir.path().join("a.jsonl")).unwrap(), std::fs::read(dir.path().join("b.jsonl")).unwrap());
}

#[test]
fn train_lm_then_run_with_the_saved_model() {
    let dir = tempfile::tempdir().unwrap();
    let lines = arena_core::synth::generate_corpus(200, 5);
    std::fs::write(dir.path().join("train.txt"), lines.join("\n")).unwrap();
    std::fs::write(dir.path().join("test.txt"), arena_core::synth::generate_corpus(50, 6).join("\n")).unwrap();
    let out = arena(
        dir.path(),
        &["train-lm", "--corpus", "train.txt", "--order", "2", "--k", "0.5", "--out", "m.json", "--eval", "test.txt"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(summary["instances"], 200);
    assert!(summary["perplexity"].as_f64().unwrap() > 1.0);

    std::fs::write(
        dir.path().join("c.toml"),
        r#"
rounds = 10
[john]
name = "john-sequential"
corpus = "test.txt"
[zellig]
name = "zellig-sampler"
model = "m.json"
seed = 1
[claude]
name = "claude-ngram"
model = "m.json"
"#,
    )
    .unwrap();
    let run = arena(dir.path(), &["run", "--config", "c.toml", "--format", "json", "--out", "t.jsonl"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&run)).unwrap();
    assert_eq!(report["n_scored"], 10);
}

#[test]
fn grid_reports_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("g.toml"),
        r#"
rounds = 30
seed = 9
fixed = "claude"

[claude]
name = "claude-ngram"
train_corpus = "synth:300:1"

[[zelligs]]
name = "zellig-copy"

[[zelligs]]
name = "zellig-swap"

[[johns]]
name = "john-iid"
corpus = "synth:300:1"

[[johns]]
name = "john-iid"
corpus = "nowhere.txt"
"#,
    )
    .unwrap();
    let out = arena(dir.path(), &["grid", "--config", "g.toml", "--out", "g.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("g.json")).unwrap()).unwrap();
    let cells = report["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 2);
    for row in cells {
        let row = row.as_array().unwrap();
        assert_eq!(row[0]["status"], "ok");
        assert_eq!(row[1]["status"], "failed");
    }
    let s = |r: usize| report["cells"][r][0]["report"]["s"].as_f64().unwrap();
    assert!(s(1) > s(0), "a swap is easier to spot than a copy");
    assert_eq!(report["row_means"][0].as_f64(), Some(s(0)), "failed cells are left out of means");
    assert_eq!(report["col_means"][1], serde_json::Value::Null);
}

#[test]
fn usage_and_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = arena(dir.path(), &["frobnicate"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage"));

    let missing = arena(dir.path(), &["run", "--config", "absent.toml"]);
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(error_json(&missing)["error"], "io");
    assert_eq!(String::from_utf8_lossy(&missing.stderr).lines().count(), 1);

    std::fs::write(dir.path().join("zero.toml"), RUN_CONFIG.replace("rounds = 40", "rounds = 0")).unwrap();
    let zero = arena(dir.path(), &["run", "--config", "zero.toml"]);
    assert_eq!(zero.status.code(), Some(1));
    let e = error_json(&zero);
    assert_eq!(e["error"], "config");
    assert!(e["message"].as_str().unwrap().contains("rounds"));

    std::fs::write(dir.path().join("junk.jsonl"), "not json\n").unwrap();
    let junk = arena(dir.path(), &["score", "junk.jsonl"]);
    assert_eq!(error_json(&junk)["error"], "transcript");
}
