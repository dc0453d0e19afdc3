//! Synthetic workflow games with closed-form Shapley values.
//!
//! `v(S) = base + Σ_{i∈S} w_i + Σ_{{i,j}⊆S} γ_ij`. Each pairwise term is a
//! unanimity game split evenly between its two players, so the Shapley value is
//! `φ_i = w_i + ½ Σ_j γ_ij` and the pairwise synergy is exactly `γ_ij`. Clamping
//! to `[0, 1]` breaks the closed form; clamped games carry no analytic answer.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::TaskOutcomeRecord;
use crate::game::{Coalition, ComponentSet, GameError, GameTable, MAX_EXACT_COMPONENTS};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("interaction matrix must be {n}x{n}")]
    Shape { n: usize },
    #[error("interaction matrix is not symmetric at ({i}, {j}): {a} vs {b}")]
    Asymmetric { i: usize, j: usize, a: f64, b: f64 },
    #[error("interaction matrix diagonal must be zero, found {value} at ({i}, {i})")]
    Diagonal { i: usize, value: f64 },
    #[error("interaction entry ({i}, {j}) is outside a {n}-component game")]
    IndexOutOfRange { i: usize, j: usize, n: usize },
    #[error("spec declares n = {n} but has {weights} weights")]
    CountMismatch { n: usize, weights: usize },
    #[error("non-finite parameter in spec")]
    NonFinite,
    #[error("v(S) = {value} for mask {mask} is not a probability and clamping is disabled")]
    NotAProbability { mask: u64, value: f64 },
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("malformed simulator spec: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Additive-plus-pairwise game parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticGameSpec {
    pub base: f64,
    pub weights: Vec<f64>,
    /// Symmetric, zero diagonal.
    pub interactions: Vec<Vec<f64>>,
    pub clamp: bool,
    /// Optional labels; `c0..c{n-1}` when absent.
    pub components: Option<Vec<String>>,
}

impl SyntheticGameSpec {
    pub fn new(
        base: f64,
        weights: Vec<f64>,
        interactions: Vec<Vec<f64>>,
    ) -> Result<Self, SimError> {
        let spec = SyntheticGameSpec {
            base,
            weights,
            interactions,
            clamp: true,
            components: None,
        };
        spec.check()?;
        Ok(spec)
    }

    /// Purely additive game (`γ = 0`).
    pub fn additive(base: f64, weights: Vec<f64>) -> Self {
        let n = weights.len();
        SyntheticGameSpec {
            base,
            weights,
            interactions: vec![vec![0.0; n]; n],
            clamp: true,
            components: None,
        }
    }

    pub fn with_clamp(mut self, clamp: bool) -> Self {
        self.clamp = clamp;
        self
    }

    pub fn with_components(mut self, labels: Vec<String>) -> Self {
        self.components = Some(labels);
        self
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn check(&self) -> Result<(), SimError> {
        let n = self.n();
        if self.interactions.len() != n || self.interactions.iter().any(|r| r.len() != n) {
            return Err(SimError::Shape { n });
        }
        let finite = self.base.is_finite()
            && self.weights.iter().all(|w| w.is_finite())
            && self.interactions.iter().flatten().all(|g| g.is_finite());
        if !finite {
            return Err(SimError::NonFinite);
        }
        for i in 0..n {
            if self.interactions[i][i] != 0.0 {
                return Err(SimError::Diagonal {
                    i,
                    value: self.interactions[i][i],
                });
            }
            for j in i + 1..n {
                let (a, b) = (self.interactions[i][j], self.interactions[j][i]);
                if a != b {
                    return Err(SimError::Asymmetric { i, j, a, b });
                }
            }
        }
        Ok(())
    }

    pub fn component_set(&self) -> Result<ComponentSet, SimError> {
        Ok(match &self.components {
            Some(labels) => ComponentSet::new(labels.iter().cloned())?,
            None => ComponentSet::numbered(self.n())?,
        })
    }

    /// Unclamped value of the formula.
    pub fn raw_value(&self, c: Coalition) -> f64 {
        let members: Vec<usize> = c.members().filter(|&i| i < self.n()).collect();
        let mut v = self.base;
        for &i in &members {
            v += self.weights[i];
        }
        for (k, &i) in members.iter().enumerate() {
            for &j in &members[k + 1..] {
                v += self.interactions[i][j];
            }
        }
        v
    }

    /// Value as the simulator reports it (clamped when `clamp` is set).
    pub fn value(&self, c: Coalition) -> f64 {
        let v = self.raw_value(c);
        if self.clamp {
            v.clamp(0.0, 1.0)
        } else {
            v
        }
    }

    /// Closed-form Shapley values of the unclamped game.
    pub fn analytic_phi(&self) -> Vec<f64> {
        (0..self.n())
            .map(|i| self.weights[i] + 0.5 * self.interactions[i].iter().sum::<f64>())
            .collect()
    }

    /// Random clamp-free spec on a dyadic grid (multiples of 2^-12), so every
    /// table value and synergy is exact in binary floating point.
    pub fn random_clamp_free(n: usize, seed: u64) -> Self {
        const GRID: f64 = 4096.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q = |lo: f64, hi: f64| (rng.gen_range(lo..hi) * GRID).trunc() / GRID;
        // worst cases stay within base ± 0.4, base in [0.45, 0.55]
        let base = q(0.45, 0.55);
        let w_span = 0.2 / n.max(1) as f64;
        let pairs = (n * n.saturating_sub(1) / 2).max(1) as f64;
        let g_span = 0.2 / pairs;
        let weights: Vec<f64> = (0..n).map(|_| q(-w_span, w_span)).collect();
        let mut interactions = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let g = q(-g_span, g_span);
                interactions[i][j] = g;
                interactions[j][i] = g;
            }
        }
        SyntheticGameSpec {
            base,
            weights,
            interactions,
            clamp: true,
            components: None,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self, SimError> {
        let doc: SpecDocument = serde_json::from_str(text)?;
        if doc.n != doc.weights.len() {
            return Err(SimError::CountMismatch {
                n: doc.n,
                weights: doc.weights.len(),
            });
        }
        let n = doc.n;
        let mut interactions = vec![vec![0.0; n]; n];
        let mut set = vec![vec![false; n]; n];
        for (i, j, g) in doc.interactions {
            if i >= n || j >= n {
                return Err(SimError::IndexOutOfRange { i, j, n });
            }
            if i == j {
                return Err(SimError::Diagonal { i, value: g });
            }
            let (a, b) = (i.min(j), i.max(j));
            if set[a][b] && interactions[a][b] != g {
                return Err(SimError::Asymmetric {
                    i: a,
                    j: b,
                    a: interactions[a][b],
                    b: g,
                });
            }
            set[a][b] = true;
            interactions[a][b] = g;
            interactions[b][a] = g;
        }
        let spec = SyntheticGameSpec {
            base: doc.base,
            weights: doc.weights,
            interactions,
            clamp: doc.clamp,
            components: doc.components,
        };
        spec.check()?;
        if let Some(labels) = &spec.components {
            if labels.len() != n {
                return Err(SimError::CountMismatch {
                    n: labels.len(),
                    weights: n,
                });
            }
        }
        Ok(spec)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        let n = self.n();
        let mut interactions = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.interactions[i][j] != 0.0 {
                    interactions.push((i, j, self.interactions[i][j]));
                }
            }
        }
        let doc = SpecDocument {
            n,
            base: self.base,
            weights: self.weights.clone(),
            interactions,
            clamp: self.clamp,
            components: self.components.clone(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("specs serialize");
        s.push('\n');
        s
    }
}

#[derive(Serialize, Deserialize)]
struct SpecDocument {
    n: usize,
    base: f64,
    weights: Vec<f64>,
    #[serde(default)]
    interactions: Vec<(usize, usize, f64)>,
    #[serde(default = "default_clamp")]
    clamp: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    components: Option<Vec<String>>,
}

fn default_clamp() -> bool {
    true
}

/// A synthesized table plus its closed-form answer when one exists.
#[derive(Debug, Clone)]
pub struct SyntheticGame {
    pub table: GameTable,
    /// `None` when clamping changed at least one value.
    pub analytic_phi: Option<Vec<f64>>,
    pub clamp_free: bool,
}

pub fn synthesize_game(spec: &SyntheticGameSpec) -> Result<SyntheticGame, SimError> {
    spec.check()?;
    let n = spec.n();
    if n > MAX_EXACT_COMPONENTS {
        return Err(GameError::ExactGuard(n).into());
    }
    // v(S) = v(S \ {top}) + w_top + Σ_{j∈S\{top}} γ_top,j, built in ascending mask order
    let mut raw = vec![0.0; 1usize << n];
    raw[0] = spec.base;
    for mask in 1..raw.len() {
        let top = 63 - (mask as u64).leading_zeros() as usize;
        let rest = mask & !(1 << top);
        let mut v = raw[rest] + spec.weights[top];
        for j in Coalition::from_mask(rest as u64).members() {
            v += spec.interactions[top][j];
        }
        raw[mask] = v;
    }
    let clamp_free = raw.iter().all(|v| (0.0..=1.0).contains(v));
    let table = GameTable::from_fn(spec.component_set()?, |c| {
        let v = raw[c.mask() as usize];
        if spec.clamp {
            v.clamp(0.0, 1.0)
        } else {
            v
        }
    })?;
    let analytic_phi = (clamp_free || !spec.clamp).then(|| spec.analytic_phi());
    Ok(SyntheticGame {
        table,
        analytic_phi,
        clamp_free,
    })
}

/// Success probability the simulator uses for `c`.
pub fn success_rate(spec: &SyntheticGameSpec, c: Coalition) -> Result<f64, SimError> {
    let v = spec.value(c);
    if !(0.0..=1.0).contains(&v) {
        return Err(SimError::NotAProbability {
            mask: c.mask(),
            value: v,
        });
    }
    Ok(v)
}

/// Bernoulli(`p`) scores for `tasks`, drawn from the stream keyed by `(seed, mask)`.
pub fn draw_scores(p: f64, c: Coalition, tasks: &[String], seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(c.mask());
    tasks
        .iter()
        .map(|_| if rng.gen::<f64>() < p { 1.0 } else { 0.0 })
        .collect()
}

/// Task ids `t0000`, `t0001`, ...
pub fn task_ids(num_tasks: usize) -> Vec<String> {
    (0..num_tasks).map(|k| format!("t{k:04}")).collect()
}

pub fn simulate_task_outcomes(
    spec: &SyntheticGameSpec,
    coalition: Coalition,
    num_tasks: usize,
    seed: u64,
) -> Result<Vec<TaskOutcomeRecord>, SimError> {
    if !coalition.fits(spec.n()) {
        return Err(GameError::MaskOutOfRange {
            mask: coalition.mask(),
            n: spec.n(),
        }
        .into());
    }
    let p = success_rate(spec, coalition)?;
    let ids = task_ids(num_tasks);
    let scores = draw_scores(p, coalition, &ids, seed);
    Ok(ids
        .into_iter()
        .zip(scores)
        .map(|(task_id, score)| TaskOutcomeRecord {
            task_id,
            coalition,
            score,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::{shapley_exact, synergy_matrix};

    fn pairwise(
        n: usize,
        base: f64,
        w: &[f64],
        gammas: &[(usize, usize, f64)],
    ) -> SyntheticGameSpec {
        let mut g = vec![vec![0.0; n]; n];
        for &(i, j, x) in gammas {
            g[i][j] = x;
            g[j][i] = x;
        }
        SyntheticGameSpec::new(base, w.to_vec(), g).unwrap()
    }

    #[test]
    fn additive_example() {
        let spec = pairwise(2, 0.1, &[0.2, 0.3], &[]);
        let game = synthesize_game(&spec).unwrap();
        assert_eq!(game.analytic_phi, Some(vec![0.2, 0.3]));
        assert!((game.table.grand_value().unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn unanimity_pair_example() {
        let spec = pairwise(2, 0.0, &[0.0, 0.0], &[(0, 1, 1.0)]);
        let game = synthesize_game(&spec).unwrap();
        assert_eq!(game.analytic_phi, Some(vec![0.5, 0.5]));
        assert_eq!(shapley_exact(&game.table).unwrap().phi, vec![0.5, 0.5]);
    }

    #[test]
    fn four_component_example() {
        let spec = pairwise(4, 0.05, &[0.1, 0.15, 0.05, 0.0], &[(0, 2, 0.15)]);
        let game = synthesize_game(&spec).unwrap();
        let analytic = game.analytic_phi.clone().unwrap();
        for (a, b) in analytic.iter().zip([0.175, 0.15, 0.125, 0.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        let exact = shapley_exact(&game.table).unwrap();
        for (a, b) in exact.phi.iter().zip(&analytic) {
            assert!((a - b).abs() < 1e-12);
        }
        let m = synergy_matrix(&game.table).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((m.get(i, j) - spec.interactions[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clamping_withholds_analytic_phi() {
        let spec = SyntheticGameSpec::additive(0.5, vec![0.4, 0.4]);
        let game = synthesize_game(&spec).unwrap();
        assert!(!game.clamp_free);
        assert!(game.analytic_phi.is_none());
        assert_eq!(game.table.grand_value(), Some(1.0));

        let unclamped = spec.with_clamp(false);
        let game = synthesize_game(&unclamped).unwrap();
        assert!(game.analytic_phi.is_some());
        assert!(simulate_task_outcomes(&unclamped, Coalition::from_mask(3), 5, 0).is_err());
    }

    #[test]
    fn asymmetric_interactions_rejected() {
        let g = vec![vec![0.0, 0.1], vec![0.2, 0.0]];
        assert!(matches!(
            SyntheticGameSpec::new(0.0, vec![0.0, 0.0], g),
            Err(SimError::Asymmetric { .. })
        ));
        let text = r#"{"n":2,"base":0,"weights":[0,0],"interactions":[[0,1,0.1],[1,0,0.2]]}"#;
        assert!(matches!(
            SyntheticGameSpec::from_json_str(text),
            Err(SimError::Asymmetric { .. })
        ));
        let text = r#"{"n":2,"base":0,"weights":[0,0],"interactions":[[1,1,0.1]]}"#;
        assert!(SyntheticGameSpec::from_json_str(text).is_err());
    }

    #[test]
    fn spec_file_round_trip() {
        let spec = SyntheticGameSpec::random_clamp_free(5, 3)
            .with_components(["a", "b", "c", "d", "e"].map(String::from).to_vec());
        let back = SyntheticGameSpec::from_json_str(&spec.to_json_string()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn random_specs_are_clamp_free() {
        for n in 0..=8 {
            for seed in 0..20 {
                let game = synthesize_game(&SyntheticGameSpec::random_clamp_free(n, seed)).unwrap();
                assert!(game.clamp_free, "n={n} seed={seed}");
            }
        }
    }

    #[test]
    fn degenerate_bernoulli() {
        let spec = SyntheticGameSpec::additive(0.0, vec![1.0]);
        let ones = simulate_task_outcomes(&spec, Coalition::from_mask(1), 50, 9).unwrap();
        assert!(ones.iter().all(|r| r.score == 1.0));
        let zeros = simulate_task_outcomes(&spec, Coalition::EMPTY, 50, 9).unwrap();
        assert!(zeros.iter().all(|r| r.score == 0.0));
        assert_eq!(zeros[0].task_id, "t0000");
        assert_eq!(zeros[49].task_id, "t0049");
    }

    #[test]
    fn half_rate_empirical_mean() {
        let spec = SyntheticGameSpec::additive(0.5, vec![]);
        let recs = simulate_task_outcomes(&spec, Coalition::EMPTY, 10_000, 12345).unwrap();
        let mean = recs.iter().map(|r| r.score).sum::<f64>() / recs.len() as f64;
        assert!((0.48..=0.52).contains(&mean), "{mean}");
        let again = simulate_task_outcomes(&spec, Coalition::EMPTY, 10_000, 12345).unwrap();
        assert_eq!(recs, again);
    }
}
