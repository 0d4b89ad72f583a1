//! Scores, intervals, winner rules and grid evaluations.

use serde::{Deserialize, Serialize};

use crate::performers::{PerformerDescriptor, Role};
use crate::protocol::{
    make_schedule, Binding, Deadline, EvaluationConfig, Item, NullSink, RoundRecord, ScheduleKind, Transcript,
};
use crate::registry::PerformerFactory;
use crate::rng;

/// Two-sided 95% normal quantile.
pub const WILSON_Z: f64 = 1.959964;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ScoringError {
    #[error("invalid input `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("reports are not comparable: {0}")]
    Incomparable(String),
    #[error("inconsistent record: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

/// Wilson score interval at 95%, with the closed ends pinned exactly.
pub fn wilson_interval(successes: u64, n: u64) -> Result<Interval, ScoringError> {
    if n == 0 {
        return Err(ScoringError::Config { field: "n".into(), message: "interval needs at least one trial".into() });
    }
    if successes > n {
        return Err(ScoringError::Config {
            field: "successes".into(),
            message: format!("{successes} successes exceed {n} trials"),
        });
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = WILSON_Z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    let low = if successes == 0 { 0.0 } else { (center - half).clamp(0.0, p) };
    let high = if successes == n { 1.0 } else { (center + half).clamp(p, 1.0) };
    Ok(Interval { low, high })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub evaluation_id: String,
    pub s: f64,
    pub n_scored: u64,
    pub successes: u64,
    /// `(round index, cumulative S)` after each scored round.
    pub running: Vec<(u64, f64)>,
    pub interval: Interval,
    pub forfeit_count: u64,
    pub default_count: u64,
    /// S over the rounds Zellig did not forfeit; `None` when all were forfeits.
    pub s_excluding_forfeits: Option<f64>,
    pub schedule: ScheduleKind,
    /// Configured number of scored rounds.
    pub rounds: u64,
    pub complete: bool,
}

/// Whether Claude identified `y`; a forfeit is a free point.
pub fn indicator(record: &RoundRecord) -> bool {
    record.zellig_forfeit || record.z == Some(Item::Y)
}

impl ScoreReport {
    /// Scores the records at or beyond the schedule's scoring boundary.
    pub fn from_records<'a>(
        evaluation_id: &str,
        config: &EvaluationConfig,
        records: impl IntoIterator<Item = &'a RoundRecord>,
        complete: bool,
    ) -> Result<Self, ScoringError> {
        let schedule = make_schedule(config.schedule, config.rounds)
            .map_err(|e| ScoringError::Config { field: "rounds".into(), message: e.to_string() })?;
        let mut n_scored = 0u64;
        let mut successes = 0u64;
        let mut forfeits = 0u64;
        let mut defaults = 0u64;
        let mut running = Vec::new();
        for r in records {
            if !schedule.is_scored(r.n) {
                continue;
            }
            let hit = indicator(r);
            if hit != r.claude_correct {
                return Err(ScoringError::Inconsistent(format!("round {}: claude_correct disagrees with z", r.n)));
            }
            n_scored += 1;
            successes += u64::from(hit);
            forfeits += u64::from(r.zellig_forfeit);
            defaults += u64::from(r.claude_defaulted);
            running.push((r.n, successes as f64 / n_scored as f64));
        }
        if n_scored == 0 {
            return Err(ScoringError::Config {
                field: "rounds".into(),
                message: "transcript has no scored rounds".into(),
            });
        }
        let contested = n_scored - forfeits;
        Ok(ScoreReport {
            evaluation_id: evaluation_id.to_string(),
            s: successes as f64 / n_scored as f64,
            n_scored,
            successes,
            running,
            interval: wilson_interval(successes, n_scored)?,
            forfeit_count: forfeits,
            default_count: defaults,
            s_excluding_forfeits: (contested > 0).then(|| (successes - forfeits) as f64 / contested as f64),
            schedule: config.schedule,
            rounds: config.rounds,
            complete,
        })
    }

    /// `round_index,cumulative_s` rows with a header.
    pub fn running_csv(&self) -> String {
        let mut out = String::from("round_index,cumulative_s\n");
        for (n, s) in &self.running {
            out.push_str(&format!("{n},{s}\n"));
        }
        out
    }

    /// Aligned two-column text rendering.
    pub fn to_table(&self) -> String {
        let rows = [
            ("evaluation", self.evaluation_id.clone()),
            ("S", format!("{}", self.s)),
            ("scored rounds", format!("{} of {}", self.n_scored, self.rounds)),
            ("successes", self.successes.to_string()),
            ("95% interval", format!("[{:.4}, {:.4}]", self.interval.low, self.interval.high)),
            ("forfeits", self.forfeit_count.to_string()),
            ("claude defaults", self.default_count.to_string()),
            ("S excl. forfeits", self.s_excluding_forfeits.map_or("-".into(), |s| format!("{s:.4}"))),
            ("schedule", self.schedule.to_string()),
            ("complete", self.complete.to_string()),
        ];
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        rows.iter().map(|(k, v)| format!("{k:<width$}  {v}\n")).collect()
    }
}

pub fn score(transcript: &Transcript) -> Result<ScoreReport, ScoringError> {
    ScoreReport::from_records(
        &transcript.header.evaluation_id,
        &transcript.header.config,
        &transcript.records,
        transcript.is_complete(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    AWins,
    BWins,
    Tie,
}

impl Verdict {
    pub fn swapped(self) -> Verdict {
        match self {
            Verdict::AWins => Verdict::BWins,
            Verdict::BWins => Verdict::AWins,
            Verdict::Tie => Verdict::Tie,
        }
    }
}

/// Zelligs win with lower S; Claudes and Johns with higher S.
pub fn compare(role: Role, a: &ScoreReport, b: &ScoreReport) -> Result<Verdict, ScoringError> {
    if a.n_scored != b.n_scored {
        return Err(ScoringError::Incomparable(format!("{} vs {} scored rounds", a.n_scored, b.n_scored)));
    }
    if a.schedule != b.schedule {
        return Err(ScoringError::Incomparable(format!("schedules {} vs {}", a.schedule, b.schedule)));
    }
    // successes/n with equal n: compare the integers to avoid float noise
    let (sa, sb) = (a.successes, b.successes);
    let higher_wins = match sa.cmp(&sb) {
        std::cmp::Ordering::Greater => Verdict::AWins,
        std::cmp::Ordering::Less => Verdict::BWins,
        std::cmp::Ordering::Equal => Verdict::Tie,
    };
    Ok(match role {
        Role::Zellig => higher_wins.swapped(),
        Role::Claude | Role::John => higher_wins,
    })
}

/// A fixed performer against the product of two performer lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub rounds: u64,
    #[serde(default)]
    pub deadline: Deadline,
    /// Master seed; cell seeds derive from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub schedule: ScheduleKind,
    #[serde(default)]
    pub claude_sees_metadata: bool,
    #[serde(default)]
    pub pipelined: bool,
    pub fixed: Role,
    #[serde(default)]
    pub john: Option<Binding>,
    #[serde(default)]
    pub zellig: Option<Binding>,
    #[serde(default)]
    pub claude: Option<Binding>,
    #[serde(default)]
    pub johns: Vec<Binding>,
    #[serde(default)]
    pub zelligs: Vec<Binding>,
    #[serde(default)]
    pub claudes: Vec<Binding>,
}

impl GridSpec {
    /// The two varying roles, in row-then-column order.
    pub fn axis_roles(&self) -> (Role, Role) {
        match self.fixed {
            Role::Claude => (Role::Zellig, Role::John),
            Role::Zellig => (Role::Claude, Role::John),
            Role::John => (Role::Zellig, Role::Claude),
        }
    }

    fn single(&self, role: Role) -> Option<&Binding> {
        match role {
            Role::John => self.john.as_ref(),
            Role::Zellig => self.zellig.as_ref(),
            Role::Claude => self.claude.as_ref(),
        }
    }

    fn list(&self, role: Role) -> &[Binding] {
        match role {
            Role::John => &self.johns,
            Role::Zellig => &self.zelligs,
            Role::Claude => &self.claudes,
        }
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        let err = |field: &str, message: &str| ScoringError::Config { field: field.into(), message: message.into() };
        if self.rounds == 0 {
            return Err(err("rounds", "at least one scored round is required"));
        }
        let fixed = self.fixed;
        if self.single(fixed).is_none() {
            return Err(err(&fixed.to_string(), "the fixed role needs a binding"));
        }
        if !self.list(fixed).is_empty() {
            return Err(err(&format!("{fixed}s"), "the fixed role cannot also be an axis"));
        }
        let (r1, r2) = self.axis_roles();
        for r in [r1, r2] {
            if self.list(r).is_empty() {
                return Err(err(&format!("{r}s"), "axis is empty"));
            }
            if self.single(r).is_some() {
                return Err(err(&r.to_string(), "axis roles take a list, not a single binding"));
            }
        }
        Ok(())
    }

    pub fn cell_seed(&self, row: usize, col: usize) -> u64 {
        let (_, r2) = self.axis_roles();
        let idx = (row * self.list(r2).len() + col) as u64;
        rng::derive_u64(self.seed, "grid-cell", idx)
    }

    pub fn cell_config(&self, row: usize, col: usize) -> EvaluationConfig {
        let (r1, r2) = self.axis_roles();
        let pick = |role: Role| -> Binding {
            if role == self.fixed {
                self.single(role).cloned().expect("validated")
            } else if role == r1 {
                self.list(r1)[row].clone()
            } else {
                debug_assert_eq!(role, r2);
                self.list(r2)[col].clone()
            }
        };
        EvaluationConfig {
            rounds: self.rounds,
            deadline: self.deadline,
            seed: self.cell_seed(row, col),
            schedule: self.schedule,
            claude_sees_metadata: self.claude_sees_metadata,
            pipelined: self.pipelined,
            john: pick(Role::John),
            zellig: pick(Role::Zellig),
            claude: pick(Role::Claude),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Ok { report: ScoreReport },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub row: usize,
    pub col: usize,
    pub seed: u64,
    pub performers: Option<[PerformerDescriptor; 3]>,
    #[serde(flatten)]
    pub outcome: CellOutcome,
}

impl GridCell {
    pub fn s(&self) -> Option<f64> {
        match &self.outcome {
            CellOutcome::Ok { report } => Some(report.s),
            CellOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub spec: GridSpec,
    pub row_role: Role,
    pub col_role: Role,
    pub rows: Vec<Binding>,
    pub cols: Vec<Binding>,
    /// `cells[row][col]`.
    pub cells: Vec<Vec<GridCell>>,
    /// Mean S over each row's successful cells.
    pub row_means: Vec<Option<f64>>,
    pub col_means: Vec<Option<f64>>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let ok: Vec<f64> = values.flatten().collect();
    (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64)
}

impl GridReport {
    pub fn cell(&self, row: usize, col: usize) -> &GridCell {
        &self.cells[row][col]
    }

    /// Rows by row performer, columns by column performer, S per cell.
    pub fn to_table(&self) -> String {
        let label = |b: &Binding| b.name.clone();
        let mut header = vec![format!("{} \\ {}", self.row_role, self.col_role)];
        header.extend(self.cols.iter().map(label));
        header.push("mean".into());
        let mut table = vec![header];
        for (i, row) in self.cells.iter().enumerate() {
            let mut line = vec![label(&self.rows[i])];
            line.extend(row.iter().map(|c| c.s().map_or("failed".into(), |s| format!("{s:.4}"))));
            line.push(self.row_means[i].map_or("-".into(), |m| format!("{m:.4}")));
            table.push(line);
        }
        let mut foot = vec!["mean".to_string()];
        foot.extend(self.col_means.iter().map(|m| m.map_or("-".into(), |m| format!("{m:.4}"))));
        foot.push(String::new());
        table.push(foot);
        let cols = table[0].len();
        let widths: Vec<usize> = (0..cols).map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
        table
            .iter()
            .map(|r| {
                let cells: Vec<String> = r.iter().zip(&widths).map(|(v, w)| format!("{v:<w$}")).collect();
                format!("{}\n", cells.join("  ").trim_end())
            })
            .collect()
    }
}

/// Runs every cell in row-major order. A cell that cannot be built or run is
/// recorded as failed and the grid continues.
pub fn grid_evaluate(spec: &GridSpec, factory: &dyn PerformerFactory) -> Result<GridReport, ScoringError> {
    spec.validate()?;
    let (row_role, col_role) = spec.axis_roles();
    let rows = spec.list(row_role).to_vec();
    let cols = spec.list(col_role).to_vec();
    let mut cells = Vec::with_capacity(rows.len());
    for row in 0..rows.len() {
        let mut line = Vec::with_capacity(cols.len());
        for col in 0..cols.len() {
            let config = spec.cell_config(row, col);
            let seed = config.seed;
            let (performers, outcome) = match run_cell(&config, factory) {
                Ok((p, report)) => (Some(p), CellOutcome::Ok { report }),
                Err(error) => {
                    log::warn!("grid cell ({row}, {col}) failed: {error}");
                    (None, CellOutcome::Failed { error })
                }
            };
            line.push(GridCell { row, col, seed, performers, outcome });
        }
        cells.push(line);
    }
    let row_means = cells.iter().map(|r| mean(r.iter().map(GridCell::s))).collect();
    let col_means = (0..cols.len()).map(|c| mean(cells.iter().map(|r| r[c].s()))).collect();
    Ok(GridReport { spec: spec.clone(), row_role, col_role, rows, cols, cells, row_means, col_means })
}

fn run_cell(
    config: &EvaluationConfig,
    factory: &dyn PerformerFactory,
) -> Result<([PerformerDescriptor; 3], ScoreReport), String> {
    let set = factory.build(config).map_err(|e| e.to_string())?;
    let transcript = crate::protocol::run_evaluation(config, set.john, set.zellig, set.claude, &mut NullSink)
        .map_err(|e| e.to_string())?;
    if let Some(status) = &transcript.status {
        return Err(format!("run stopped early: {status:?}"));
    }
    let p = &transcript.header.performers;
    let report = score(&transcript).map_err(|e| e.to_string())?;
    Ok(([p.john.clone(), p.zellig.clone(), p.claude.clone()], report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Closed-form Wilson bounds, written out independently of the
    /// implementation above.
    fn wilson_oracle(k: f64, n: f64) -> (f64, f64) {
        let z = 1.959964f64;
        let phat = k / n;
        let a = phat + z * z / (2.0 * n);
        let b = z * ((phat * (1.0 - phat) + z * z / (4.0 * n)) / n).sqrt();
        let c = 1.0 + z * z / n;
        ((a - b) / c, (a + b) / c)
    }

    #[test]
    fn wilson_examples() {
        let i = wilson_interval(5, 10).unwrap();
        assert!((i.low - 0.2366).abs() <= 5e-4 && (i.high - 0.7634).abs() <= 5e-4, "{i:?}");
        let (lo, hi) = wilson_oracle(5.0, 10.0);
        assert!((i.low - lo).abs() < 1e-12 && (i.high - hi).abs() < 1e-12);
        assert_eq!(wilson_interval(0, 1).unwrap().low, 0.0);
        assert_eq!(wilson_interval(10, 10).unwrap().high, 1.0);
        assert!(wilson_interval(0, 0).is_err());
        assert!(wilson_interval(3, 2).is_err());
    }

    fn report(successes: u64, n: u64) -> ScoreReport {
        ScoreReport {
            evaluation_id: "r".into(),
            s: successes as f64 / n as f64,
            n_scored: n,
            successes,
            running: vec![],
            interval: wilson_interval(successes, n).unwrap(),
            forfeit_count: 0,
            default_count: 0,
            s_excluding_forfeits: None,
            schedule: ScheduleKind::Zero,
            rounds: n,
            complete: true,
        }
    }

    #[test]
    fn winner_examples() {
        let (a, b) = (report(55, 100), report(70, 100));
        assert_eq!(compare(Role::Zellig, &a, &b).unwrap(), Verdict::AWins);
        assert_eq!(compare(Role::Claude, &a, &b).unwrap(), Verdict::BWins);
        assert_eq!(compare(Role::John, &a, &a.clone()).unwrap(), Verdict::Tie);
        assert!(matches!(compare(Role::John, &a, &report(5, 10)), Err(ScoringError::Incomparable(_))));
        let mut c = report(70, 100);
        c.schedule = ScheduleKind::Supervised { transparent: 1 };
        assert!(matches!(compare(Role::Claude, &a, &c), Err(ScoringError::Incomparable(_))));
    }

    proptest! {
        #[test]
        fn wilson_brackets_s(n in 1u64..5000, frac in 0.0f64..=1.0) {
            let k = ((n as f64) * frac).floor() as u64;
            let i = wilson_interval(k, n).unwrap();
            let s = k as f64 / n as f64;
            prop_assert!(0.0 <= i.low && i.low <= s && s <= i.high && i.high <= 1.0);
            let (lo, hi) = wilson_oracle(k as f64, n as f64);
            if k > 0 { prop_assert!((i.low - lo).abs() < 1e-12); }
            if k < n { prop_assert!((i.high - hi).abs() < 1e-12); }
        }

        #[test]
        fn compare_is_antisymmetric(a in 0u64..=50, b in 0u64..=50) {
            let (ra, rb) = (report(a, 50), report(b, 50));
            for role in [Role::Zellig, Role::Claude, Role::John] {
                prop_assert_eq!(compare(role, &ra, &rb).unwrap(), compare(role, &rb, &ra).unwrap().swapped());
            }
        }
    }
}
