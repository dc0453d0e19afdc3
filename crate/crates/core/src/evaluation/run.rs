//! Coalition-by-coalition evaluation followed by attribution.
//!
//! Starting from the all-baseline workflow, each coalition `S` swaps the
//! components in `S` for their target implementations; the evaluator scores the
//! task set under `S`, scores are averaged into `v(S)`, and the configured
//! estimator attributes `v(N) - v(∅)` across components.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::adapter::EvaluatorAdapter;
use super::cache::{task_fingerprint, CacheKey, CoalitionCache};
use super::records::{
    aggregate_records, parse_outcomes, resolve_outcomes, write_outcome, CoalitionOutcome,
    FailurePolicy,
};
use super::EvalError;
use crate::attribution::{
    sample_orderings, shapley_exact, shapley_permutation_with, AttributionError, AttributionResult,
    EstimatorConfig, Method,
};
use crate::game::{
    enumerate_coalitions, Coalition, ComponentSet, GameError, GameTable, MAX_EXACT_COMPONENTS,
};

/// Scores `tasks` under `coalition`, consulting `cache` first.
///
/// A miss calls the adapter and stores the outcome before returning; malformed
/// responses are never stored.
pub fn evaluate_coalition(
    adapter: &EvaluatorAdapter,
    coalition: Coalition,
    components: &ComponentSet,
    tasks: &[String],
    cache: &CoalitionCache,
) -> Result<CoalitionOutcome, EvalError> {
    evaluate_cached(adapter, coalition, components, tasks, cache).map(|(o, _)| o)
}

fn evaluate_cached(
    adapter: &EvaluatorAdapter,
    coalition: Coalition,
    components: &ComponentSet,
    tasks: &[String],
    cache: &CoalitionCache,
) -> Result<(CoalitionOutcome, bool), EvalError> {
    if tasks.is_empty() {
        return Err(EvalError::NoTasks);
    }
    if !coalition.fits(components.len()) {
        return Err(GameError::MaskOutOfRange {
            mask: coalition.mask(),
            n: components.len(),
        }
        .into());
    }
    let key = CacheKey::new(coalition, tasks);
    if let Some(bytes) = cache.get(&key)? {
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| EvalError::Cache(format!("{}: {e}", key.file_name())))?;
        let mut outcomes = parse_outcomes(text, components)?;
        return match outcomes.pop() {
            Some(o) if outcomes.is_empty() && o.coalition == coalition => Ok((o, true)),
            _ => Err(EvalError::Cache(format!(
                "entry {} does not hold coalition mask {}",
                key.file_name(),
                coalition.mask()
            ))),
        };
    }
    let responses = adapter.call(coalition, components, tasks)?;
    let outcome = CoalitionOutcome {
        coalition,
        responses,
    };
    cache.put(key, write_outcome(components, &outcome).as_bytes())?;
    Ok((outcome, false))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Concurrent coalition evaluations; 1 runs sequentially on the caller's thread.
    pub parallel: usize,
    pub failure_policy: FailurePolicy,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            parallel: 1,
            failure_policy: FailurePolicy::ScoreAsZero,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub result: AttributionResult,
    /// Aggregated table over the evaluated coalitions; absent above the exact guard.
    pub game: Option<GameTable>,
    /// Evaluated coalitions, ascending.
    pub coalitions: Vec<Coalition>,
    pub cache_hits: usize,
    pub external_evaluations: usize,
}

/// Which coalitions finished before a run aborted; a rerun with the same cache
/// resumes from the completed ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressManifest {
    pub components: Vec<String>,
    pub task_fingerprint: String,
    pub completed: Vec<u64>,
    pub failed: Vec<u64>,
    pub pending: Vec<u64>,
}

#[derive(Debug, Error)]
#[error("{source}")]
pub struct RunError {
    #[source]
    pub source: EvalError,
    pub progress: Option<ProgressManifest>,
}

impl From<EvalError> for RunError {
    fn from(source: EvalError) -> Self {
        RunError {
            source,
            progress: None,
        }
    }
}

impl From<AttributionError> for RunError {
    fn from(e: AttributionError) -> Self {
        EvalError::from(e).into()
    }
}

/// Coalitions the estimator will ask for, ascending.
pub fn demanded_coalitions(
    n: usize,
    estimator: &EstimatorConfig,
) -> Result<Vec<Coalition>, EvalError> {
    match estimator.method {
        Method::Exact => {
            if n > MAX_EXACT_COMPONENTS {
                return Err(GameError::ExactGuard(n).into());
            }
            Ok(enumerate_coalitions(n)?)
        }
        Method::PermutationMc => {
            estimator.validate()?;
            let mut set = BTreeSet::from([Coalition::EMPTY, Coalition::grand(n)]);
            for order in sample_orderings(n, estimator) {
                let mut s = Coalition::EMPTY;
                for p in order {
                    s = s.with(p);
                    set.insert(s);
                }
            }
            Ok(set.into_iter().collect())
        }
    }
}

type Slot = Option<Result<(CoalitionOutcome, bool), EvalError>>;

fn evaluate_all(
    adapter: &EvaluatorAdapter,
    coalitions: &[Coalition],
    components: &ComponentSet,
    tasks: &[String],
    cache: &CoalitionCache,
    parallel: usize,
) -> Vec<Slot> {
    if parallel <= 1 {
        let mut slots: Vec<Slot> = Vec::with_capacity(coalitions.len());
        for &c in coalitions {
            let r = evaluate_cached(adapter, c, components, tasks, cache);
            let stop = r.is_err();
            slots.push(Some(r));
            if stop {
                break;
            }
        }
        slots.resize_with(coalitions.len(), || None);
        return slots;
    }
    let slots: Vec<Mutex<Slot>> = coalitions.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    std::thread::scope(|scope| {
        for _ in 0..parallel.min(coalitions.len()) {
            scope.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&c) = coalitions.get(k) else { break };
                let r = evaluate_cached(adapter, c, components, tasks, cache);
                if r.is_err() {
                    abort.store(true, Ordering::SeqCst);
                }
                *slots[k].lock().unwrap() = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap()).collect()
}

/// Evaluates every coalition the estimator needs, then attributes.
///
/// The exact method evaluates all `2^n` coalitions once each; the sampled
/// method evaluates only the prefixes of its seeded orderings. Evaluator
/// failures abort with a [`ProgressManifest`].
pub fn run_attribution(
    adapter: &EvaluatorAdapter,
    components: &ComponentSet,
    tasks: &[String],
    estimator: &EstimatorConfig,
    cache: &CoalitionCache,
    options: &RunOptions,
) -> Result<RunOutput, RunError> {
    if tasks.is_empty() {
        return Err(EvalError::NoTasks.into());
    }
    let n = components.len();
    let coalitions = demanded_coalitions(n, estimator)?;
    let slots = evaluate_all(
        adapter,
        &coalitions,
        components,
        tasks,
        cache,
        options.parallel,
    );

    let mut outcomes = Vec::with_capacity(coalitions.len());
    let mut cache_hits = 0;
    let mut first_error = None;
    let (mut completed, mut failed, mut pending) = (Vec::new(), Vec::new(), Vec::new());
    for (c, slot) in coalitions.iter().zip(slots) {
        match slot {
            Some(Ok((o, hit))) => {
                completed.push(c.mask());
                cache_hits += usize::from(hit);
                outcomes.push(o);
            }
            Some(Err(e)) => {
                failed.push(c.mask());
                first_error.get_or_insert(e);
            }
            None => pending.push(c.mask()),
        }
    }
    if let Some(source) = first_error {
        return Err(RunError {
            source,
            progress: Some(ProgressManifest {
                components: components.labels().to_vec(),
                task_fingerprint: task_fingerprint(tasks),
                completed,
                failed,
                pending,
            }),
        });
    }

    let records = resolve_outcomes(&outcomes, options.failure_policy);
    let agg = aggregate_records(&records)?;
    let game = if n <= MAX_EXACT_COMPONENTS {
        let mut b = GameTable::builder(components.clone())
            .map_err(EvalError::from)?
            .task_count(agg.task_count);
        for (&c, &v) in &agg.values {
            b.insert(c, v).map_err(EvalError::from)?;
        }
        Some(b.build())
    } else {
        None
    };
    let result = match estimator.method {
        Method::Exact => shapley_exact(game.as_ref().expect("exact runs are guarded"))?,
        Method::PermutationMc => shapley_permutation_with(
            components,
            |c| {
                agg.values
                    .get(&c)
                    .copied()
                    .ok_or_else(|| format!("coalition mask {} was not evaluated", c.mask()))
            },
            estimator,
        )?,
    };
    Ok(RunOutput {
        result,
        game,
        external_evaluations: coalitions.len() - cache_hits,
        coalitions,
        cache_hits,
    })
}
