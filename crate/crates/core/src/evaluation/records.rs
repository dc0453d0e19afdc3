//! Task outcome records and their aggregation into a characteristic function.
//!
//! Records files hold one JSON object per line:
//! `{"task_id": "t0001", "coalition": ["planning", "action"], "score": 1}`.
//! A `null` score marks a task whose evaluation failed; see [`FailurePolicy`].

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::game::{Coalition, ComponentSet, GameTable};

/// One task's score under one coalition. Scores lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcomeRecord {
    pub task_id: String,
    pub coalition: Coalition,
    pub score: f64,
}

impl TaskOutcomeRecord {
    pub fn new(
        task_id: impl Into<String>,
        coalition: Coalition,
        score: f64,
    ) -> Result<Self, EvalError> {
        let task_id = task_id.into();
        check_score(&task_id, score)?;
        Ok(TaskOutcomeRecord {
            task_id,
            coalition,
            score,
        })
    }
}

pub(crate) fn check_score(task_id: &str, score: f64) -> Result<(), EvalError> {
    if score.is_finite() && (0.0..=1.0).contains(&score) {
        Ok(())
    } else {
        Err(EvalError::ScoreOutOfRange {
            task_id: task_id.to_string(),
            score,
        })
    }
}

/// Evaluator answer for one task; `None` means the task itself failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResponse {
    pub task_id: String,
    pub score: Option<f64>,
}

/// Everything the evaluator returned for one coalition, in task order.
#[derive(Debug, Clone, PartialEq)]
pub struct CoalitionOutcome {
    pub coalition: Coalition,
    pub responses: Vec<TaskResponse>,
}

impl CoalitionOutcome {
    pub fn failed_tasks(&self) -> impl Iterator<Item = &str> {
        self.responses
            .iter()
            .filter(|r| r.score.is_none())
            .map(|r| r.task_id.as_str())
    }
}

/// How tasks whose evaluation failed enter the mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FailurePolicy {
    /// A failed task counts as a score of 0.
    #[default]
    ScoreAsZero,
    /// A task that failed under any coalition is dropped from every coalition,
    /// keeping one task set throughout.
    Exclude,
}

/// Applies `policy` across all outcomes and flattens them to records.
pub fn resolve_outcomes(
    outcomes: &[CoalitionOutcome],
    policy: FailurePolicy,
) -> Vec<TaskOutcomeRecord> {
    let excluded: HashSet<&str> = match policy {
        FailurePolicy::ScoreAsZero => HashSet::new(),
        FailurePolicy::Exclude => outcomes.iter().flat_map(|o| o.failed_tasks()).collect(),
    };
    outcomes
        .iter()
        .flat_map(|o| {
            let excluded = &excluded;
            o.responses
                .iter()
                .filter(move |r| !excluded.contains(r.task_id.as_str()))
                .map(move |r| TaskOutcomeRecord {
                    task_id: r.task_id.clone(),
                    coalition: o.coalition,
                    score: r.score.unwrap_or(0.0),
                })
        })
        .collect()
}

/// Mean score per coalition plus the shared task count.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub values: BTreeMap<Coalition, f64>,
    pub task_count: usize,
}

/// Groups records by coalition and averages, enforcing one task set for all.
pub fn aggregate_records(records: &[TaskOutcomeRecord]) -> Result<Aggregate, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    let mut groups: BTreeMap<Coalition, BTreeMap<&str, f64>> = BTreeMap::new();
    for r in records {
        check_score(&r.task_id, r.score)?;
        if groups
            .entry(r.coalition)
            .or_default()
            .insert(r.task_id.as_str(), r.score)
            .is_some()
        {
            return Err(EvalError::DuplicateRecord {
                task_id: r.task_id.clone(),
                mask: r.coalition.mask(),
            });
        }
    }
    let mut iter = groups.iter();
    let (_, reference) = iter.next().expect("non-empty");
    let reference: BTreeSet<&str> = reference.keys().copied().collect();
    for (c, scores) in iter {
        let here: BTreeSet<&str> = scores.keys().copied().collect();
        if here != reference {
            return Err(EvalError::InconsistentTasks {
                mask: c.mask(),
                missing: reference.difference(&here).map(|s| s.to_string()).collect(),
                extra: here.difference(&reference).map(|s| s.to_string()).collect(),
            });
        }
    }
    let task_count = reference.len();
    // summed in task-id order so record order never changes the result
    let values = groups
        .into_iter()
        .map(|(c, scores)| (c, scores.values().sum::<f64>() / task_count as f64))
        .collect();
    Ok(Aggregate { values, task_count })
}

/// `v(S) = (1/|T|) Σ_t score(t, S)` for every coalition present in `records`.
///
/// Coalitions without records are absent from the table.
pub fn build_game_from_records(
    records: &[TaskOutcomeRecord],
    components: &ComponentSet,
) -> Result<GameTable, EvalError> {
    let agg = aggregate_records(records)?;
    let mut builder = GameTable::builder(components.clone())?.task_count(agg.task_count);
    for (c, v) in agg.values {
        builder.insert(c, v)?;
    }
    Ok(builder.build())
}

#[derive(Serialize, Deserialize)]
struct RecordLine<'a> {
    #[serde(borrow)]
    task_id: std::borrow::Cow<'a, str>,
    coalition: Vec<std::borrow::Cow<'a, str>>,
    score: Option<f64>,
}

/// One records-file line.
pub fn record_line(
    components: &ComponentSet,
    c: Coalition,
    task_id: &str,
    score: Option<f64>,
) -> String {
    let line = RecordLine {
        task_id: task_id.into(),
        coalition: components
            .coalition_labels(c)
            .into_iter()
            .map(Into::into)
            .collect(),
        score,
    };
    serde_json::to_string(&line).expect("records serialize")
}

/// Records-file text for `outcome`, one line per task.
pub fn write_outcome(components: &ComponentSet, outcome: &CoalitionOutcome) -> String {
    let mut out = String::new();
    for r in &outcome.responses {
        out.push_str(&record_line(
            components,
            outcome.coalition,
            &r.task_id,
            r.score,
        ));
        out.push('\n');
    }
    out
}

/// Parses records-file text into per-coalition outcomes (in first-seen order).
pub fn parse_outcomes(
    text: &str,
    components: &ComponentSet,
) -> Result<Vec<CoalitionOutcome>, EvalError> {
    let mut order: Vec<Coalition> = Vec::new();
    let mut by_coalition: BTreeMap<Coalition, Vec<TaskResponse>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| EvalError::RecordsFormat {
            line: lineno + 1,
            reason,
        };
        let rec: RecordLine = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let c = components
            .coalition_from_labels(rec.coalition.iter())
            .map_err(|e| bad(e.to_string()))?;
        if let Some(s) = rec.score {
            check_score(&rec.task_id, s)?;
        }
        let entry = by_coalition.entry(c).or_insert_with(|| {
            order.push(c);
            Vec::new()
        });
        entry.push(TaskResponse {
            task_id: rec.task_id.into_owned(),
            score: rec.score,
        });
    }
    Ok(order
        .into_iter()
        .map(|c| CoalitionOutcome {
            coalition: c,
            responses: by_coalition.remove(&c).unwrap_or_default(),
        })
        .collect())
}

/// Parses a records file with `policy` applied to failed tasks.
pub fn parse_records(
    text: &str,
    components: &ComponentSet,
    policy: FailurePolicy,
) -> Result<Vec<TaskOutcomeRecord>, EvalError> {
    Ok(resolve_outcomes(&parse_outcomes(text, components)?, policy))
}
