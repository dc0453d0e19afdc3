//! Shapley attribution over a [`GameTable`] or a coalition-value callback.
//!
//! The exact estimator sums weighted marginal contributions over every subset,
//! with weight `|S|! (n-|S|-1)! / n!` per subset size. The sampled estimator
//! averages marginals over seeded random orderings, optionally pairing each
//! ordering with its reverse.

use std::collections::HashMap;
use std::fmt;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{
    validate_game, Coalition, ComponentId, ComponentSet, GameError, GameTable, MAX_COMPONENTS,
    MAX_EXACT_COMPONENTS,
};

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("game is not valid for attribution: {}", .0.join("; "))]
    InvalidGame(Vec<String>),
    #[error("component {label} is already a member of coalition mask {mask}")]
    AlreadyMember { label: String, mask: u64 },
    #[error("synergy needs two distinct components, got {0} twice")]
    SameComponent(String),
    #[error("estimator method {0} cannot be used here")]
    WrongMethod(Method),
    #[error("{samples} samples is too few, need at least {min}")]
    TooFewSamples { samples: u64, min: u64 },
    #[error("result has {got} components but the game has {expected}")]
    ComponentMismatch { expected: usize, got: usize },
    #[error("coalition value callback failed for mask {mask}: {source}")]
    Oracle {
        mask: u64,
        #[source]
        source: BoxError,
    },
    #[error("malformed attribution document: {0}")]
    Document(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    PermutationMc,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Exact => "exact",
            Method::PermutationMc => "permutation_mc",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EstimatorConfig {
    pub method: Method,
    /// Number of orderings, counting each reversed ordering separately.
    pub samples: u64,
    pub seed: u64,
    pub antithetic: bool,
}

impl EstimatorConfig {
    pub fn exact() -> Self {
        EstimatorConfig {
            method: Method::Exact,
            samples: 0,
            seed: 0,
            antithetic: false,
        }
    }

    pub fn permutation(samples: u64, seed: u64) -> Self {
        EstimatorConfig {
            method: Method::PermutationMc,
            samples,
            seed,
            antithetic: true,
        }
    }

    pub fn with_antithetic(mut self, antithetic: bool) -> Self {
        self.antithetic = antithetic;
        self
    }

    pub fn validate(&self) -> Result<(), AttributionError> {
        // two samples minimum: the standard error needs a sample variance
        if self.method == Method::PermutationMc && self.samples < 2 {
            return Err(AttributionError::TooFewSamples {
                samples: self.samples,
                min: 2,
            });
        }
        Ok(())
    }
}

/// Per-component attribution plus the endpoints it distributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ResultDocument", try_from = "ResultDocument")]
pub struct AttributionResult {
    pub components: ComponentSet,
    pub phi: Vec<f64>,
    pub method: Method,
    pub samples: u64,
    pub std_error: Option<Vec<f64>>,
    pub empty_value: f64,
    pub grand_value: f64,
    pub seed: Option<u64>,
}

impl AttributionResult {
    pub fn phi_of(&self, label: &str) -> Option<f64> {
        self.components.index_of(label).map(|i| self.phi[i])
    }

    /// `|Σφ - (v(N) - v(∅))|` using the endpoints carried by the result.
    pub fn efficiency_residual(&self) -> f64 {
        (self.phi.iter().sum::<f64>() - (self.grand_value - self.empty_value)).abs()
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("results serialize");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str) -> Result<Self, AttributionError> {
        serde_json::from_str(text).map_err(|e| AttributionError::Document(e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
struct ResultDocument {
    method: Method,
    phi: IndexMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    std_error: Option<IndexMap<String, f64>>,
    empty_value: f64,
    grand_value: f64,
    samples: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

impl From<AttributionResult> for ResultDocument {
    fn from(r: AttributionResult) -> Self {
        let keyed = |xs: &[f64]| {
            r.components
                .labels()
                .iter()
                .cloned()
                .zip(xs.iter().copied())
                .collect::<IndexMap<_, _>>()
        };
        ResultDocument {
            method: r.method,
            phi: keyed(&r.phi),
            std_error: r.std_error.as_deref().map(keyed),
            empty_value: r.empty_value,
            grand_value: r.grand_value,
            samples: r.samples,
            seed: r.seed,
        }
    }
}

impl TryFrom<ResultDocument> for AttributionResult {
    type Error = AttributionError;

    fn try_from(doc: ResultDocument) -> Result<Self, Self::Error> {
        let components = ComponentSet::new(doc.phi.keys().cloned())?;
        let std_error = match doc.std_error {
            None => None,
            Some(se) => Some(
                components
                    .labels()
                    .iter()
                    .map(|l| {
                        se.get(l).copied().ok_or_else(|| {
                            AttributionError::Document(format!("std_error lacks component {l:?}"))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        if std_error.is_some() != (doc.method == Method::PermutationMc) {
            return Err(AttributionError::Document(
                "std_error must be present exactly for permutation_mc results".into(),
            ));
        }
        Ok(AttributionResult {
            components,
            phi: doc.phi.into_values().collect(),
            method: doc.method,
            samples: doc.samples,
            std_error,
            empty_value: doc.empty_value,
            grand_value: doc.grand_value,
            seed: doc.seed,
        })
    }
}

/// `v(s ∪ {i}) - v(s)`.
pub fn marginal_contribution(
    game: &GameTable,
    i: &ComponentId,
    s: Coalition,
) -> Result<f64, AttributionError> {
    let idx = game.components().check(i)?;
    if s.contains(idx) {
        return Err(AttributionError::AlreadyMember {
            label: i.label.clone(),
            mask: s.mask(),
        });
    }
    Ok(game.get(s.with(idx))? - game.get(s)?)
}

/// Shapley weight `|S|! (n-|S|-1)! / n!` for each subset size `|S| < n`.
fn subset_weights(n: usize) -> Vec<f64> {
    // 1 / (n * C(n-1, s)); the binomial is exact in f64 for n <= 20
    let mut binom = 1.0f64;
    (0..n)
        .map(|s| {
            if s > 0 {
                binom = binom * (n - s) as f64 / s as f64;
            }
            1.0 / (n as f64 * binom)
        })
        .collect()
}

fn require_valid(game: &GameTable) -> Result<Vec<f64>, AttributionError> {
    if game.n() > MAX_EXACT_COMPONENTS {
        return Err(GameError::ExactGuard(game.n()).into());
    }
    game.require_complete()?;
    let report = validate_game(game);
    if report.has_errors() {
        return Err(AttributionError::InvalidGame(
            report.errors().map(|f| f.message.clone()).collect(),
        ));
    }
    Ok(game.entries().map(|(_, v)| v).collect())
}

/// Exact Shapley values by weighted subset enumeration, `O(n 2^n)`.
pub fn shapley_exact(game: &GameTable) -> Result<AttributionResult, AttributionError> {
    let values = require_valid(game)?;
    let n = game.n();
    let weights = subset_weights(n);
    let mut phi = vec![0.0; n];
    for (mask, &vs) in values.iter().enumerate() {
        let s = Coalition::from_mask(mask as u64);
        let w = match weights.get(s.len()) {
            Some(&w) => w,
            None => continue, // grand coalition has no outside player
        };
        for (i, phi_i) in phi.iter_mut().enumerate() {
            if !s.contains(i) {
                *phi_i += w * (values[s.with(i).mask() as usize] - vs);
            }
        }
    }
    Ok(AttributionResult {
        components: game.components().clone(),
        phi,
        method: Method::Exact,
        samples: 0,
        std_error: None,
        empty_value: values[0],
        grand_value: values[values.len() - 1],
        seed: None,
    })
}

/// The ordering stream consumed by the sampled estimator for `cfg`.
///
/// With antithetic sampling every drawn ordering is followed by its reverse;
/// an odd sample count ends on an unpaired ordering.
pub fn sample_orderings(n: usize, cfg: &EstimatorConfig) -> impl Iterator<Item = Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let antithetic = cfg.antithetic;
    let mut pending_reverse = false;
    (0..cfg.samples).map(move |_| {
        if antithetic && pending_reverse {
            pending_reverse = false;
            order.iter().rev().copied().collect()
        } else {
            order.shuffle(&mut rng);
            pending_reverse = antithetic;
            order.clone()
        }
    })
}

#[derive(Clone, Copy, Default)]
struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn sample_sd(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).sqrt()
        }
    }
}

fn permutation_estimate(
    components: &ComponentSet,
    cfg: &EstimatorConfig,
    mut value: impl FnMut(Coalition) -> Result<f64, AttributionError>,
) -> Result<AttributionResult, AttributionError> {
    if cfg.method != Method::PermutationMc {
        return Err(AttributionError::WrongMethod(cfg.method));
    }
    cfg.validate()?;
    let n = components.len();
    let empty_value = value(Coalition::EMPTY)?;
    let grand_value = value(Coalition::grand(n))?;
    let mut acc = vec![Welford::default(); n];
    for order in sample_orderings(n, cfg) {
        let mut s = Coalition::EMPTY;
        let mut prev = empty_value;
        for &p in &order {
            s = s.with(p);
            let cur = value(s)?;
            acc[p].push(cur - prev);
            prev = cur;
        }
    }
    let root = (cfg.samples as f64).sqrt();
    Ok(AttributionResult {
        components: components.clone(),
        phi: acc.iter().map(|a| a.mean).collect(),
        method: Method::PermutationMc,
        samples: cfg.samples,
        std_error: Some(acc.iter().map(|a| a.sample_sd() / root).collect()),
        empty_value,
        grand_value,
        seed: Some(cfg.seed),
    })
}

/// Sampled Shapley values over a complete table.
pub fn shapley_permutation(
    game: &GameTable,
    cfg: &EstimatorConfig,
) -> Result<AttributionResult, AttributionError> {
    let values = require_valid(game)?;
    permutation_estimate(game.components(), cfg, |c| Ok(values[c.mask() as usize]))
}

/// Sampled Shapley values where `v(S)` comes from a callback.
///
/// Each distinct coalition is requested at most once; the callback runs
/// sequentially on the calling thread.
pub fn shapley_permutation_with<F, E>(
    components: &ComponentSet,
    mut oracle: F,
    cfg: &EstimatorConfig,
) -> Result<AttributionResult, AttributionError>
where
    F: FnMut(Coalition) -> Result<f64, E>,
    E: Into<BoxError>,
{
    if components.len() > MAX_COMPONENTS {
        return Err(GameError::TooManyComponents {
            n: components.len(),
            max: MAX_COMPONENTS,
        }
        .into());
    }
    let mut memo: HashMap<Coalition, f64> = HashMap::new();
    permutation_estimate(components, cfg, |c| {
        if let Some(&v) = memo.get(&c) {
            return Ok(v);
        }
        let v = oracle(c).map_err(|e| AttributionError::Oracle {
            mask: c.mask(),
            source: e.into(),
        })?;
        memo.insert(c, v);
        Ok(v)
    })
}

/// Runs whichever estimator `cfg` names against a complete table.
pub fn attribute(
    game: &GameTable,
    cfg: &EstimatorConfig,
) -> Result<AttributionResult, AttributionError> {
    match cfg.method {
        Method::Exact => shapley_exact(game),
        Method::PermutationMc => shapley_permutation(game, cfg),
    }
}

/// `σ_ij = v({i,j}) - v({i}) - v({j}) + v(∅)`.
pub fn synergy_pair(
    game: &GameTable,
    i: &ComponentId,
    j: &ComponentId,
) -> Result<f64, AttributionError> {
    let a = game.components().check(i)?;
    let b = game.components().check(j)?;
    if a == b {
        return Err(AttributionError::SameComponent(i.label.clone()));
    }
    pair_synergy(game, a, b)
}

fn pair_synergy(game: &GameTable, a: usize, b: usize) -> Result<f64, AttributionError> {
    let e = Coalition::EMPTY;
    Ok(game.get(e.with(a).with(b))? - game.get(e.with(a))? - game.get(e.with(b))? + game.get(e)?)
}

/// Symmetric pairwise synergy coefficients with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynergyMatrix {
    pub components: Vec<String>,
    pub entries: Vec<Vec<f64>>,
}

impl SynergyMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn synergy_matrix(game: &GameTable) -> Result<SynergyMatrix, AttributionError> {
    let n = game.n();
    let mut entries = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in a + 1..n {
            let s = pair_synergy(game, a, b)?;
            entries[a][b] = s;
            entries[b][a] = s;
        }
    }
    Ok(SynergyMatrix {
        components: game.components().labels().to_vec(),
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxiomReport {
    pub efficiency_residual: f64,
    pub efficiency_pass: bool,
    /// Interchangeable pairs found by the table scan.
    pub symmetric_pairs: Vec<(usize, usize)>,
    /// Interchangeable pairs whose attributions differ by more than the tolerance.
    pub symmetry_violations: Vec<(usize, usize)>,
    /// Null players found by the table scan.
    pub dummies: Vec<usize>,
    /// Null players whose attribution exceeds the tolerance in magnitude.
    pub dummy_violations: Vec<usize>,
}

impl AxiomReport {
    pub fn passed(&self) -> bool {
        self.efficiency_pass
            && self.symmetry_violations.is_empty()
            && self.dummy_violations.is_empty()
    }
}

/// Checks efficiency, symmetry and dummy against an exhaustive scan of `game`.
pub fn check_axioms(
    game: &GameTable,
    result: &AttributionResult,
    tol: f64,
) -> Result<AxiomReport, AttributionError> {
    let n = game.n();
    if result.phi.len() != n {
        return Err(AttributionError::ComponentMismatch {
            expected: n,
            got: result.phi.len(),
        });
    }
    game.require_complete()?;
    let v = |c: Coalition| game.value(c).expect("complete table");
    let grand = Coalition::grand(n);

    let efficiency_residual =
        (result.phi.iter().sum::<f64>() - (v(grand) - v(Coalition::EMPTY))).abs();

    let mut symmetric_pairs = Vec::new();
    let mut symmetry_violations = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let rest = grand.without(i).without(j);
            let interchangeable = subsets_of(rest).all(|s| v(s.with(i)) == v(s.with(j)));
            if interchangeable {
                symmetric_pairs.push((i, j));
                if (result.phi[i] - result.phi[j]).abs() > tol {
                    symmetry_violations.push((i, j));
                }
            }
        }
    }

    let mut dummies = Vec::new();
    let mut dummy_violations = Vec::new();
    for i in 0..n {
        if subsets_of(grand.without(i)).all(|s| v(s.with(i)) == v(s)) {
            dummies.push(i);
            if result.phi[i].abs() > tol {
                dummy_violations.push(i);
            }
        }
    }

    Ok(AxiomReport {
        efficiency_residual,
        efficiency_pass: efficiency_residual <= tol,
        symmetric_pairs,
        symmetry_violations,
        dummies,
        dummy_violations,
    })
}

/// Every subset of `set`, including the empty one and `set` itself.
fn subsets_of(set: Coalition) -> impl Iterator<Item = Coalition> {
    let full = set.mask();
    let mut next = Some(0u64);
    std::iter::from_fn(move || {
        let cur = next?;
        next = if cur == full {
            None
        } else {
            Some((cur.wrapping_sub(full)) & full)
        };
        Some(Coalition::from_mask(cur))
    })
}
