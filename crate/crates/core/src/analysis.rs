//! Cross-candidate analytics on attribution tables.
//!
//! A [`ModelAttributionTable`] holds, for each candidate implementation (for
//! example a model name), its per-component Shapley values and optionally the
//! all-candidate and all-baseline accuracies. Attribution table files look like
//!
//! ```json
//! { "components": ["planning", "reasoning"],
//!   "rows": { "model-a": { "phi": {"planning": 0.1, "reasoning": 0.2},
//!                          "acc": 0.5, "baseline_acc": 0.2 } } }
//! ```

use std::cmp::Ordering;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{ComponentSet, GameError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("attribution table has no candidates")]
    EmptyTable,
    #[error("candidate sets differ (only in first: {only_a:?}, only in second: {only_b:?})")]
    CandidateMismatch {
        only_a: Vec<String>,
        only_b: Vec<String>,
    },
    #[error("component sets differ: {a:?} vs {b:?}")]
    ComponentMismatch { a: Vec<String>, b: Vec<String> },
    #[error("need at least {min} candidates, got {got}")]
    TooFewCandidates { got: usize, min: usize },
    #[error("{0} has zero variance; correlation is undefined")]
    ZeroVariance(&'static str),
    #[error("non-finite value for candidate {0:?}")]
    NonFinite(String),
    #[error("unknown component {0:?}")]
    UnknownComponent(String),
    #[error("candidate {candidate:?}: {reason}")]
    Row { candidate: String, reason: String },
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("malformed attribution table: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRow {
    /// Aligned with the table's component order.
    pub phi: Vec<f64>,
    /// `v(N)`: every component on this candidate.
    pub acc: Option<f64>,
    /// `v(∅)`: every component on the baseline.
    pub baseline_acc: Option<f64>,
}

impl CandidateRow {
    /// `|Σφ - (acc - baseline_acc)|` when both endpoints are known.
    pub fn efficiency_residual(&self) -> Option<f64> {
        let gain = self.acc? - self.baseline_acc?;
        Some((self.phi.iter().sum::<f64>() - gain).abs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelAttributionTable {
    pub label: Option<String>,
    pub components: ComponentSet,
    pub rows: IndexMap<String, CandidateRow>,
}

#[derive(Serialize, Deserialize)]
struct TableDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    components: Vec<String>,
    rows: IndexMap<String, RowDocument>,
}

#[derive(Serialize, Deserialize)]
struct RowDocument {
    phi: IndexMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    acc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    baseline_acc: Option<f64>,
}

impl ModelAttributionTable {
    pub fn new(components: ComponentSet) -> Self {
        ModelAttributionTable {
            label: None,
            components,
            rows: IndexMap::new(),
        }
    }

    pub fn insert(
        &mut self,
        candidate: impl Into<String>,
        row: CandidateRow,
    ) -> Result<(), AnalysisError> {
        let candidate = candidate.into();
        if row.phi.len() != self.components.len() {
            return Err(AnalysisError::Row {
                candidate,
                reason: format!(
                    "{} values for {} components",
                    row.phi.len(),
                    self.components.len()
                ),
            });
        }
        if row.phi.iter().any(|x| !x.is_finite()) {
            return Err(AnalysisError::NonFinite(candidate));
        }
        if self.rows.contains_key(&candidate) {
            return Err(AnalysisError::Row {
                candidate,
                reason: "duplicate candidate label".into(),
            });
        }
        self.rows.insert(candidate, row);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `candidate -> φ_component` for one component.
    pub fn component_values(&self, component: usize) -> IndexMap<String, f64> {
        self.rows
            .iter()
            .map(|(c, row)| (c.clone(), row.phi[component]))
            .collect()
    }

    pub fn from_json_str(text: &str) -> Result<Self, AnalysisError> {
        let doc: TableDocument = serde_json::from_str(text)?;
        let mut table = ModelAttributionTable::new(ComponentSet::new(doc.components)?);
        table.label = doc.label;
        for (candidate, row) in doc.rows {
            let mut phi = Vec::with_capacity(table.components.len());
            for label in table.components.labels() {
                match row.phi.get(label) {
                    Some(&x) => phi.push(x),
                    None => {
                        return Err(AnalysisError::Row {
                            candidate,
                            reason: format!("no value for component {label:?}"),
                        })
                    }
                }
            }
            if let Some(extra) = row
                .phi
                .keys()
                .find(|k| table.components.index_of(k).is_none())
            {
                return Err(AnalysisError::Row {
                    reason: format!("unknown component {extra:?}"),
                    candidate,
                });
            }
            table.insert(
                candidate,
                CandidateRow {
                    phi,
                    acc: row.acc,
                    baseline_acc: row.baseline_acc,
                },
            )?;
        }
        Ok(table)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, AnalysisError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| AnalysisError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        let labels = self.components.labels();
        let doc = TableDocument {
            label: self.label.clone(),
            components: labels.to_vec(),
            rows: self
                .rows
                .iter()
                .map(|(c, r)| {
                    (
                        c.clone(),
                        RowDocument {
                            phi: labels.iter().cloned().zip(r.phi.iter().copied()).collect(),
                            acc: r.acc,
                            baseline_acc: r.baseline_acc,
                        },
                    )
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("tables serialize");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub candidate: String,
    pub phi: f64,
}

/// One candidate per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowConfiguration {
    /// Component label to chosen candidate, in component order.
    pub assignment: IndexMap<String, Choice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_note: Option<String>,
}

pub const CONFIGURATION_NOTE: &str = "assignment picks the highest per-component Shapley value; \
its accuracy is not predicted here and must be measured by evaluating the mixed configuration";

/// Per component, the candidate with the largest φ; ties go to the
/// lexicographically smallest candidate label.
pub fn discover_optimal_configuration(
    table: &ModelAttributionTable,
) -> Result<WorkflowConfiguration, AnalysisError> {
    if table.is_empty() {
        return Err(AnalysisError::EmptyTable);
    }
    let mut assignment = IndexMap::new();
    for (k, label) in table.components.labels().iter().enumerate() {
        let (candidate, row) = table
            .rows
            .iter()
            .max_by(|(ca, ra), (cb, rb)| ra.phi[k].total_cmp(&rb.phi[k]).then_with(|| cb.cmp(ca)))
            .expect("non-empty");
        assignment.insert(
            label.clone(),
            Choice {
                candidate: candidate.clone(),
                phi: row.phi[k],
            },
        );
    }
    Ok(WorkflowConfiguration {
        assignment,
        predicted_note: Some(CONFIGURATION_NOTE.to_string()),
    })
}

fn check_same_keys(
    a: &IndexMap<String, f64>,
    b: &IndexMap<String, f64>,
) -> Result<(), AnalysisError> {
    let only_a: Vec<String> = a.keys().filter(|k| !b.contains_key(*k)).cloned().collect();
    let only_b: Vec<String> = b.keys().filter(|k| !a.contains_key(*k)).cloned().collect();
    if only_a.is_empty() && only_b.is_empty() {
        Ok(())
    } else {
        Err(AnalysisError::CandidateMismatch { only_a, only_b })
    }
}

/// Consistent and total unordered candidate pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCount {
    pub consistent: u64,
    pub total: u64,
}

impl PairCount {
    pub fn rate(&self) -> f64 {
        self.consistent as f64 / self.total as f64
    }
}

/// Counts pairs ordered the same way by both value maps. A tie on both sides
/// counts as consistent; a tie on one side only does not.
pub fn consistency_counts(
    values_a: &IndexMap<String, f64>,
    values_b: &IndexMap<String, f64>,
) -> Result<PairCount, AnalysisError> {
    check_same_keys(values_a, values_b)?;
    if values_a.len() < 2 {
        return Err(AnalysisError::TooFewCandidates {
            got: values_a.len(),
            min: 2,
        });
    }
    let pairs: Vec<(f64, f64)> = values_a.iter().map(|(k, &x)| (x, values_b[k])).collect();
    if let Some((k, _)) = values_a
        .iter()
        .zip(&pairs)
        .find(|(_, (x, y))| !x.is_finite() || !y.is_finite())
        .map(|(kv, p)| (kv.0, p))
    {
        return Err(AnalysisError::NonFinite(k.clone()));
    }
    let mut count = PairCount {
        consistent: 0,
        total: 0,
    };
    for i in 0..pairs.len() {
        for j in i + 1..pairs.len() {
            let oa = pairs[i]
                .0
                .partial_cmp(&pairs[j].0)
                .unwrap_or(Ordering::Equal);
            let ob = pairs[i]
                .1
                .partial_cmp(&pairs[j].1)
                .unwrap_or(Ordering::Equal);
            count.total += 1;
            if oa == ob {
                count.consistent += 1;
            }
        }
    }
    Ok(count)
}

/// Fraction of candidate pairs ranked the same way by both maps.
pub fn consistency_rate(
    values_a: &IndexMap<String, f64>,
    values_b: &IndexMap<String, f64>,
) -> Result<f64, AnalysisError> {
    consistency_counts(values_a, values_b).map(|c| c.rate())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentConsistency {
    pub component: String,
    pub consistent: u64,
    pub total: u64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub per_component: Vec<ComponentConsistency>,
    /// Pairs pooled over the listed components: Σ consistent / Σ total.
    pub pooled: ComponentConsistency,
}

/// Per-component consistency between two tables over the same candidates.
///
/// `components` restricts the comparison; `None` compares all of them.
pub fn table_consistency(
    a: &ModelAttributionTable,
    b: &ModelAttributionTable,
    components: Option<&[String]>,
) -> Result<ConsistencyReport, AnalysisError> {
    if a.components != b.components {
        return Err(AnalysisError::ComponentMismatch {
            a: a.components.labels().to_vec(),
            b: b.components.labels().to_vec(),
        });
    }
    let selected: Vec<usize> = match components {
        None => (0..a.components.len()).collect(),
        Some(labels) => labels
            .iter()
            .map(|l| {
                a.components
                    .index_of(l)
                    .ok_or_else(|| AnalysisError::UnknownComponent(l.clone()))
            })
            .collect::<Result<_, _>>()?,
    };
    let mut per_component = Vec::new();
    let (mut consistent, mut total) = (0, 0);
    for k in selected {
        let c = consistency_counts(&a.component_values(k), &b.component_values(k))?;
        consistent += c.consistent;
        total += c.total;
        per_component.push(ComponentConsistency {
            component: a.components.label(k).to_string(),
            consistent: c.consistent,
            total: c.total,
            rate: c.rate(),
        });
    }
    let pooled = ComponentConsistency {
        component: "pooled".into(),
        consistent,
        total,
        rate: if total == 0 {
            f64::NAN
        } else {
            consistent as f64 / total as f64
        },
    };
    Ok(ConsistencyReport {
        per_component,
        pooled,
    })
}

/// External judge scores and Shapley values for one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeScoreSeries {
    pub component: String,
    pub scores: IndexMap<String, f64>,
    pub phi: IndexMap<String, f64>,
}

/// Pearson correlation between φ and judge scores over the shared candidates.
pub fn correlate_with_judge(series: &JudgeScoreSeries) -> Result<f64, AnalysisError> {
    check_same_keys(&series.phi, &series.scores)?;
    let m = series.phi.len();
    if m < 3 {
        return Err(AnalysisError::TooFewCandidates { got: m, min: 3 });
    }
    let xs: Vec<f64> = series.phi.values().copied().collect();
    let ys: Vec<f64> = series.phi.keys().map(|k| series.scores[k]).collect();
    if let Some(k) = series
        .phi
        .keys()
        .zip(xs.iter().zip(&ys))
        .find(|(_, (x, y))| !x.is_finite() || !y.is_finite())
        .map(|(k, _)| k)
    {
        return Err(AnalysisError::NonFinite(k.clone()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mx, my) = (mean(&xs), mean(&ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(AnalysisError::ZeroVariance("phi"));
    }
    if syy == 0.0 {
        return Err(AnalysisError::ZeroVariance("judge scores"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, f64)]) -> IndexMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn one_component_table(rows: &[(&str, f64)]) -> ModelAttributionTable {
        let mut t = ModelAttributionTable::new(ComponentSet::new(["planning"]).unwrap());
        for (c, x) in rows {
            t.insert(
                *c,
                CandidateRow {
                    phi: vec![*x],
                    acc: None,
                    baseline_acc: None,
                },
            )
            .unwrap();
        }
        t
    }

    #[test]
    fn single_candidate_wins_everywhere() {
        let mut t = ModelAttributionTable::new(ComponentSet::new(["p", "r"]).unwrap());
        t.insert(
            "only",
            CandidateRow {
                phi: vec![-0.3, 0.1],
                acc: None,
                baseline_acc: None,
            },
        )
        .unwrap();
        let cfg = discover_optimal_configuration(&t).unwrap();
        assert!(cfg.assignment.values().all(|c| c.candidate == "only"));
        assert!(cfg.predicted_note.is_some());
    }

    #[test]
    fn ties_go_to_smallest_label() {
        let t = one_component_table(&[("zeta", 0.2), ("alpha", 0.2), ("mid", 0.1)]);
        let cfg = discover_optimal_configuration(&t).unwrap();
        assert_eq!(cfg.assignment["planning"].candidate, "alpha");
        // exhaustive check over every insertion order
        let names = ["zeta", "alpha", "beta"];
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    if a == b || b == c || a == c {
                        continue;
                    }
                    let t =
                        one_component_table(&[(names[a], 0.5), (names[b], 0.5), (names[c], 0.5)]);
                    let cfg = discover_optimal_configuration(&t).unwrap();
                    assert_eq!(cfg.assignment["planning"].candidate, "alpha");
                }
            }
        }
    }

    #[test]
    fn empty_table_rejected() {
        let t = ModelAttributionTable::new(ComponentSet::new(["p"]).unwrap());
        assert!(matches!(
            discover_optimal_configuration(&t),
            Err(AnalysisError::EmptyTable)
        ));
    }

    #[test]
    fn consistency_examples() {
        let a = map(&[("a", 0.1), ("b", 0.3), ("c", -0.2), ("d", 0.05)]);
        assert_eq!(consistency_rate(&a, &a).unwrap(), 1.0);
        let neg: IndexMap<_, _> = a.iter().map(|(k, v)| (k.clone(), -v)).collect();
        assert_eq!(consistency_rate(&a, &neg).unwrap(), 0.0);
        let other = map(&[("a", 0.1), ("x", 0.2)]);
        assert!(matches!(
            consistency_rate(&a, &other),
            Err(AnalysisError::CandidateMismatch { .. })
        ));
    }

    #[test]
    fn consistency_tie_rules() {
        let a = map(&[("a", 1.0), ("b", 1.0)]);
        let b = map(&[("a", 2.0), ("b", 2.0)]);
        let c = map(&[("a", 2.0), ("b", 3.0)]);
        assert_eq!(consistency_rate(&a, &b).unwrap(), 1.0);
        assert_eq!(consistency_rate(&a, &c).unwrap(), 0.0);
        assert_eq!(consistency_rate(&c, &a).unwrap(), 0.0);
    }

    #[test]
    fn pooled_consistency_over_components() {
        let mut a = ModelAttributionTable::new(ComponentSet::new(["p", "r"]).unwrap());
        let mut b = a.clone();
        for (k, (x, y)) in [(0.1, 0.3), (0.2, 0.2), (0.3, 0.1)].iter().enumerate() {
            let name = format!("m{k}");
            a.insert(
                name.clone(),
                CandidateRow {
                    phi: vec![*x, *y],
                    acc: None,
                    baseline_acc: None,
                },
            )
            .unwrap();
            b.insert(
                name,
                CandidateRow {
                    phi: vec![*x, -*y],
                    acc: None,
                    baseline_acc: None,
                },
            )
            .unwrap();
        }
        let r = table_consistency(&a, &b, None).unwrap();
        assert_eq!(r.per_component[0].rate, 1.0);
        assert_eq!(r.per_component[1].rate, 0.0);
        assert_eq!((r.pooled.consistent, r.pooled.total), (3, 6));
        let only_r = table_consistency(&a, &b, Some(&["r".to_string()])).unwrap();
        assert_eq!(only_r.per_component.len(), 1);
        assert!(table_consistency(&a, &b, Some(&["x".to_string()])).is_err());
    }

    #[test]
    fn pearson_examples() {
        let phi = map(&[("a", 0.1), ("b", 0.4), ("c", 0.25), ("d", -0.05)]);
        let same = JudgeScoreSeries {
            component: "planning".into(),
            scores: phi.clone(),
            phi: phi.clone(),
        };
        assert_eq!(correlate_with_judge(&same).unwrap(), 1.0);
        let anti = JudgeScoreSeries {
            scores: phi
                .iter()
                .map(|(k, v)| (k.clone(), -2.0 * v + 7.0))
                .collect(),
            ..same.clone()
        };
        assert!((correlate_with_judge(&anti).unwrap() + 1.0).abs() < 1e-12);
        let flat = JudgeScoreSeries {
            scores: phi.keys().map(|k| (k.clone(), 3.0)).collect(),
            ..same.clone()
        };
        assert!(matches!(
            correlate_with_judge(&flat),
            Err(AnalysisError::ZeroVariance(_))
        ));
        let short = JudgeScoreSeries {
            component: "p".into(),
            scores: map(&[("a", 1.0), ("b", 2.0)]),
            phi: map(&[("a", 1.0), ("b", 2.0)]),
        };
        assert!(matches!(
            correlate_with_judge(&short),
            Err(AnalysisError::TooFewCandidates { .. })
        ));
    }

    #[test]
    fn table_file_round_trip() {
        let text = r#"{"components":["p","r"],
            "rows":{"m1":{"phi":{"p":0.1,"r":0.2},"acc":0.5,"baseline_acc":0.2},
                    "m0":{"phi":{"r":-0.1,"p":0.0}}}}"#;
        let t = ModelAttributionTable::from_json_str(text).unwrap();
        assert_eq!(t.rows.keys().collect::<Vec<_>>(), vec!["m1", "m0"]);
        assert_eq!(t.rows["m0"].phi, vec![0.0, -0.1]);
        assert!((t.rows["m1"].efficiency_residual().unwrap() - 0.0).abs() < 1e-12);
        assert_eq!(
            ModelAttributionTable::from_json_str(&t.to_json_string()).unwrap(),
            t
        );

        let missing = r#"{"components":["p","r"],"rows":{"m":{"phi":{"p":0.1}}}}"#;
        assert!(ModelAttributionTable::from_json_str(missing).is_err());
        let extra = r#"{"components":["p"],"rows":{"m":{"phi":{"p":0.1,"q":0.2}}}}"#;
        assert!(ModelAttributionTable::from_json_str(extra).is_err());
    }
}
