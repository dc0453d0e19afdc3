//! Component sets, coalitions and the characteristic-function table.
//!
//! A coalition is a bitmask over the ordered component set: bit `i` is set iff
//! component `i` (in declaration order) is active. A [`GameTable`] maps every
//! coalition to a real value `v(S)`; tables are immutable once built.
//!
//! Game files are JSON documents of the form
//!
//! ```json
//! { "label": "math", "components": ["planning", "reasoning"], "task_count": 250,
//!   "values": { "": 0.18, "planning": 0.2, "reasoning": 0.3, "planning+reasoning": 0.5 } }
//! ```
//!
//! Coalition keys are either the decimal mask (`"3"`) or a `+`-joined label
//! list. Writers always emit the label form, members in component order, with
//! the empty coalition written as `""`.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Largest component count for which full tables and exact enumeration are allowed.
pub const MAX_EXACT_COMPONENTS: usize = 20;

/// Width of the coalition bitmask; sampled estimation over a callback may go this far.
pub const MAX_COMPONENTS: usize = 64;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("component label must be non-empty")]
    EmptyLabel,
    #[error("duplicate component label {0:?}")]
    DuplicateLabel(String),
    #[error("invalid component label {label:?}: {reason}")]
    InvalidLabel { label: String, reason: &'static str },
    #[error("{n} components exceeds the limit of {max}")]
    TooManyComponents { n: usize, max: usize },
    #[error("exact enumeration is limited to {MAX_EXACT_COMPONENTS} components, got {0}")]
    ExactGuard(usize),
    #[error("unknown component {0:?}")]
    UnknownComponent(String),
    #[error("coalition mask {mask} has bits outside a {n}-component set")]
    MaskOutOfRange { mask: u64, n: usize },
    #[error("table is missing coalitions with masks {}", format_masks(.0))]
    MissingCoalitions(Vec<u64>),
    #[error("duplicate coalition key {0:?}")]
    DuplicateKey(String),
    #[error("invalid coalition key {key:?}: {reason}")]
    InvalidKey { key: String, reason: String },
    #[error("malformed game document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn format_masks(masks: &[u64]) -> String {
    const SHOWN: usize = 32;
    let mut s = masks
        .iter()
        .take(SHOWN)
        .map(u64::to_string)
        .collect::<Vec<_>>()
        .join(", ");
    if masks.len() > SHOWN {
        s.push_str(&format!(", ... ({} total)", masks.len()));
    }
    s
}

/// A subset of components, encoded as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Coalition(u64);

impl Coalition {
    pub const EMPTY: Coalition = Coalition(0);

    pub const fn from_mask(mask: u64) -> Self {
        Coalition(mask)
    }

    /// The coalition of all `n` components.
    pub fn grand(n: usize) -> Self {
        assert!(n <= MAX_COMPONENTS);
        if n == MAX_COMPONENTS {
            Coalition(u64::MAX)
        } else {
            Coalition((1u64 << n) - 1)
        }
    }

    pub const fn mask(self) -> u64 {
        self.0
    }

    pub const fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn contains(self, index: usize) -> bool {
        index < MAX_COMPONENTS && self.0 & (1u64 << index) != 0
    }

    pub fn with(self, index: usize) -> Self {
        Coalition(self.0 | (1u64 << index))
    }

    pub fn without(self, index: usize) -> Self {
        Coalition(self.0 & !(1u64 << index))
    }

    pub fn is_subset_of(self, other: Coalition) -> bool {
        self.0 & !other.0 == 0
    }

    /// True when no bit at or above `n` is set.
    pub fn fits(self, n: usize) -> bool {
        n >= MAX_COMPONENTS || self.0 >> n == 0
    }

    /// Member indices in ascending order.
    pub fn members(self) -> impl Iterator<Item = usize> {
        let mut rest = self.0;
        std::iter::from_fn(move || {
            if rest == 0 {
                None
            } else {
                let i = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(i)
            }
        })
    }
}

impl fmt::Display for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#b}", self.0)
    }
}

/// One player of the game: its position in the ordered set plus its label.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ComponentId {
    pub index: usize,
    pub label: String,
}

/// Ordered, uniquely labelled set of workflow components.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct ComponentSet {
    labels: Vec<String>,
}

impl ComponentSet {
    pub fn new<I, S>(labels: I) -> Result<Self, GameError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() > MAX_COMPONENTS {
            return Err(GameError::TooManyComponents {
                n: labels.len(),
                max: MAX_COMPONENTS,
            });
        }
        let mut seen = HashSet::new();
        for label in &labels {
            check_label(label)?;
            if !seen.insert(label.as_str()) {
                return Err(GameError::DuplicateLabel(label.clone()));
            }
        }
        Ok(ComponentSet { labels })
    }

    /// Components labelled `c0`, `c1`, ...
    pub fn numbered(n: usize) -> Result<Self, GameError> {
        Self::new((0..n).map(|i| format!("c{i}")))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn id(&self, index: usize) -> ComponentId {
        ComponentId {
            index,
            label: self.labels[index].clone(),
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ComponentId> + '_ {
        (0..self.len()).map(|i| self.id(i))
    }

    /// Resolves a label to its id.
    pub fn lookup(&self, label: &str) -> Result<ComponentId, GameError> {
        self.index_of(label)
            .map(|i| self.id(i))
            .ok_or_else(|| GameError::UnknownComponent(label.to_string()))
    }

    /// Checks that `id` names a member of this set (index and label agree).
    pub fn check(&self, id: &ComponentId) -> Result<usize, GameError> {
        match self.labels.get(id.index) {
            Some(label) if *label == id.label => Ok(id.index),
            _ => Err(GameError::UnknownComponent(format!(
                "{}#{}",
                id.label, id.index
            ))),
        }
    }

    pub fn coalition_from_labels<I, S>(&self, labels: I) -> Result<Coalition, GameError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        labels.into_iter().try_fold(Coalition::EMPTY, |c, label| {
            let label = label.as_ref();
            self.index_of(label)
                .map(|i| c.with(i))
                .ok_or_else(|| GameError::UnknownComponent(label.to_string()))
        })
    }

    /// Member labels of `c` in component order.
    pub fn coalition_labels(&self, c: Coalition) -> Vec<&str> {
        c.members()
            .filter(|&i| i < self.len())
            .map(|i| self.labels[i].as_str())
            .collect()
    }

    /// Canonical `+`-joined key used by game files (`""` for the empty coalition).
    pub fn coalition_key(&self, c: Coalition) -> String {
        self.coalition_labels(c).join("+")
    }

    /// Parses either a decimal mask or a `+`-joined label list.
    pub fn parse_coalition_key(&self, key: &str) -> Result<Coalition, GameError> {
        let key_trim = key.trim();
        if !key_trim.is_empty() && key_trim.bytes().all(|b| b.is_ascii_digit()) {
            let mask: u64 = key_trim.parse().map_err(|e| GameError::InvalidKey {
                key: key.to_string(),
                reason: format!("{e}"),
            })?;
            let c = Coalition::from_mask(mask);
            if !c.fits(self.len()) {
                return Err(GameError::MaskOutOfRange {
                    mask,
                    n: self.len(),
                });
            }
            return Ok(c);
        }
        if key_trim.is_empty() {
            return Ok(Coalition::EMPTY);
        }
        let mut c = Coalition::EMPTY;
        for part in key_trim.split('+') {
            let part = part.trim();
            let i = self.index_of(part).ok_or_else(|| GameError::InvalidKey {
                key: key.to_string(),
                reason: format!("unknown component {part:?}"),
            })?;
            if c.contains(i) {
                return Err(GameError::InvalidKey {
                    key: key.to_string(),
                    reason: format!("component {part:?} listed twice"),
                });
            }
            c = c.with(i);
        }
        Ok(c)
    }
}

fn check_label(label: &str) -> Result<(), GameError> {
    if label.is_empty() {
        return Err(GameError::EmptyLabel);
    }
    if label.trim() != label {
        return Err(GameError::InvalidLabel {
            label: label.to_string(),
            reason: "leading or trailing whitespace",
        });
    }
    if label.contains('+') {
        return Err(GameError::InvalidLabel {
            label: label.to_string(),
            reason: "'+' is reserved as the coalition key separator",
        });
    }
    if label.bytes().all(|b| b.is_ascii_digit()) {
        return Err(GameError::InvalidLabel {
            label: label.to_string(),
            reason: "all-digit labels collide with mask keys",
        });
    }
    Ok(())
}

/// Builds the coalition containing exactly `members`.
pub fn make_coalition(
    members: &[ComponentId],
    universe: &ComponentSet,
) -> Result<Coalition, GameError> {
    members
        .iter()
        .try_fold(Coalition::EMPTY, |c, id| Ok(c.with(universe.check(id)?)))
}

/// All `2^n` coalitions in ascending mask order.
pub fn enumerate_coalitions(n: usize) -> Result<Vec<Coalition>, GameError> {
    if n > MAX_EXACT_COMPONENTS {
        return Err(GameError::ExactGuard(n));
    }
    Ok((0..1u64 << n).map(Coalition::from_mask).collect())
}

/// Characteristic function `v: 2^N -> R` over an ordered component set.
#[derive(Debug, Clone, PartialEq)]
pub struct GameTable {
    components: ComponentSet,
    values: Vec<Option<f64>>,
    duplicates: Vec<Coalition>,
    task_count: Option<usize>,
    label: Option<String>,
}

/// Accumulates table entries; see [`GameTable::builder`].
#[derive(Debug, Clone)]
pub struct GameTableBuilder {
    table: GameTable,
}

impl GameTableBuilder {
    pub fn task_count(mut self, count: usize) -> Self {
        self.table.task_count = Some(count);
        self
    }

    pub fn label(mut self, label: impl Into<String>) -> Self {
        self.table.label = Some(label.into());
        self
    }

    /// Records `v(c) = value`. A second insert for the same coalition keeps the
    /// first value and is reported by [`validate_game`].
    pub fn insert(&mut self, c: Coalition, value: f64) -> Result<&mut Self, GameError> {
        let n = self.table.components.len();
        if !c.fits(n) {
            return Err(GameError::MaskOutOfRange { mask: c.mask(), n });
        }
        let slot = &mut self.table.values[c.mask() as usize];
        if slot.is_some() {
            self.table.duplicates.push(c);
        } else {
            *slot = Some(value);
        }
        Ok(self)
    }

    pub fn value(mut self, c: Coalition, value: f64) -> Result<Self, GameError> {
        self.insert(c, value)?;
        Ok(self)
    }

    pub fn build(self) -> GameTable {
        self.table
    }
}

impl GameTable {
    pub fn builder(components: ComponentSet) -> Result<GameTableBuilder, GameError> {
        let n = components.len();
        if n > MAX_EXACT_COMPONENTS {
            return Err(GameError::ExactGuard(n));
        }
        Ok(GameTableBuilder {
            table: GameTable {
                components,
                values: vec![None; 1usize << n],
                duplicates: Vec::new(),
                task_count: None,
                label: None,
            },
        })
    }

    /// Complete table with `v(S) = f(S)` for every coalition.
    pub fn from_fn(
        components: ComponentSet,
        mut f: impl FnMut(Coalition) -> f64,
    ) -> Result<Self, GameError> {
        let mut table = Self::builder(components)?.build();
        for (mask, slot) in table.values.iter_mut().enumerate() {
            *slot = Some(f(Coalition::from_mask(mask as u64)));
        }
        Ok(table)
    }

    pub fn components(&self) -> &ComponentSet {
        &self.components
    }

    pub fn n(&self) -> usize {
        self.components.len()
    }

    pub fn task_count(&self) -> Option<usize> {
        self.task_count
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn value(&self, c: Coalition) -> Option<f64> {
        self.values.get(c.mask() as usize).copied().flatten()
    }

    /// `v(c)`, or an error naming the missing mask.
    pub fn get(&self, c: Coalition) -> Result<f64, GameError> {
        self.value(c)
            .ok_or_else(|| GameError::MissingCoalitions(vec![c.mask()]))
    }

    pub fn missing(&self) -> Vec<Coalition> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_none())
            .map(|(m, _)| Coalition::from_mask(m as u64))
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }

    pub fn require_complete(&self) -> Result<(), GameError> {
        let missing = self.missing();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(GameError::MissingCoalitions(
                missing.into_iter().map(Coalition::mask).collect(),
            ))
        }
    }

    pub fn duplicates(&self) -> &[Coalition] {
        &self.duplicates
    }

    /// Present entries in ascending mask order.
    pub fn entries(&self) -> impl Iterator<Item = (Coalition, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(m, v)| v.map(|v| (Coalition::from_mask(m as u64), v)))
    }

    pub fn empty_value(&self) -> Option<f64> {
        self.value(Coalition::EMPTY)
    }

    pub fn grand_value(&self) -> Option<f64> {
        self.value(Coalition::grand(self.n()))
    }

    /// A new table with every present value passed through `f`. Drops `task_count`
    /// since the result need not be a success rate.
    pub fn map_values(&self, mut f: impl FnMut(Coalition, f64) -> f64) -> GameTable {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(m, v)| v.map(|v| f(Coalition::from_mask(m as u64), v)))
            .collect();
        GameTable {
            components: self.components.clone(),
            values,
            duplicates: Vec::new(),
            task_count: None,
            label: self.label.clone(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self, GameError> {
        let doc: GameDocument = serde_json::from_str(text)?;
        let components = ComponentSet::new(doc.components)?;
        let mut builder = GameTable::builder(components)?;
        if let Some(count) = doc.task_count {
            builder = builder.task_count(count);
        }
        if let Some(label) = doc.label {
            builder = builder.label(label);
        }
        let mut seen = HashSet::new();
        for (key, value) in doc.values.0 {
            let c = builder.table.components.parse_coalition_key(&key)?;
            if !seen.insert(c) {
                return Err(GameError::DuplicateKey(key));
            }
            builder.insert(c, value)?;
        }
        Ok(builder.build())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, GameError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| GameError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        let doc = GameDocumentOut {
            label: self.label.as_deref(),
            components: self.components.labels(),
            task_count: self.task_count,
            values: ValuesOut(self),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("game tables serialize");
        s.push('\n');
        s
    }
}

#[derive(Deserialize)]
struct GameDocument {
    #[serde(default)]
    label: Option<String>,
    components: Vec<String>,
    #[serde(default)]
    task_count: Option<usize>,
    values: EntryList,
}

/// JSON object read as an ordered list so duplicate keys survive parsing.
struct EntryList(Vec<(String, f64)>);

impl<'de> Deserialize<'de> for EntryList {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntryVisitor;
        impl<'de> Visitor<'de> for EntryVisitor {
            type Value = EntryList;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping coalition keys to numbers")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<EntryList, A::Error> {
                let mut entries = Vec::with_capacity(map.size_hint().unwrap_or(0));
                while let Some((k, v)) = map.next_entry::<String, f64>()? {
                    entries.push((k, v));
                }
                Ok(EntryList(entries))
            }
        }
        deserializer.deserialize_map(EntryVisitor)
    }
}

#[derive(Serialize)]
struct GameDocumentOut<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<&'a str>,
    components: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    task_count: Option<usize>,
    values: ValuesOut<'a>,
}

struct ValuesOut<'a>(&'a GameTable);

impl Serialize for ValuesOut<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let table = self.0;
        let mut map = serializer.serialize_map(None)?;
        for (c, v) in table.entries() {
            map.serialize_entry(&table.components.coalition_key(c), &v)?;
        }
        map.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub severity: Severity,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| f.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| f.severity == Severity::Warning)
    }

    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }

    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    fn push(&mut self, severity: Severity, message: String) {
        self.findings.push(Finding { severity, message });
    }
}

/// Monotonicity warnings beyond this count are folded into one summary finding.
pub const MAX_MONOTONICITY_WARNINGS: usize = 1000;

/// Reports structural errors and monotonicity warnings. Never fails.
///
/// Monotonicity is checked on covering pairs `S ⊂ S ∪ {i}`; any violation
/// `v(S) > v(T)` for `S ⊆ T` implies one on some covering pair along a chain.
pub fn validate_game(table: &GameTable) -> ValidationReport {
    let mut report = ValidationReport::default();
    let comps = table.components();

    for c in table.missing() {
        report.push(
            Severity::Error,
            format!(
                "missing coalition mask {} ({:?})",
                c.mask(),
                comps.coalition_key(c)
            ),
        );
    }
    for c in table.duplicates() {
        report.push(
            Severity::Error,
            format!(
                "duplicate entry for coalition mask {} ({:?})",
                c.mask(),
                comps.coalition_key(*c)
            ),
        );
    }
    if table.task_count() == Some(0) {
        report.push(
            Severity::Error,
            "task_count must be a positive integer".into(),
        );
    }
    for (c, v) in table.entries() {
        if !v.is_finite() {
            report.push(
                Severity::Error,
                format!("non-finite value {v} for coalition mask {}", c.mask()),
            );
        } else if table.task_count().is_some() && !(0.0..=1.0).contains(&v) {
            report.push(
                Severity::Error,
                format!(
                    "value {v} for coalition mask {} outside [0, 1] although task_count is set",
                    c.mask()
                ),
            );
        }
    }

    let mut violations = 0usize;
    for (s, vs) in table.entries() {
        for i in 0..table.n() {
            if s.contains(i) {
                continue;
            }
            let t = s.with(i);
            let Some(vt) = table.value(t) else { continue };
            if vs > vt {
                violations += 1;
                if violations <= MAX_MONOTONICITY_WARNINGS {
                    report.push(
                        Severity::Warning,
                        format!(
                            "monotonicity: v({:?}) = {vs} > v({:?}) = {vt}",
                            comps.coalition_key(s),
                            comps.coalition_key(t)
                        ),
                    );
                }
            }
        }
    }
    if violations > MAX_MONOTONICITY_WARNINGS {
        report.push(
            Severity::Warning,
            format!(
                "monotonicity: {} further violations not listed",
                violations - MAX_MONOTONICITY_WARNINGS
            ),
        );
    }
    report
}
