//! Rendering results as aligned text, CSV or a JSON document.
//!
//! The JSON document (`structured_object`) parses back into the same items
//! with every float intact. CSV blocks are separated by a blank line and use
//! `\n` line endings.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{ConsistencyReport, ModelAttributionTable, WorkflowConfiguration};
use crate::attribution::{AttributionResult, SynergyMatrix};
use crate::game::GameTable;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unknown report format {0:?} (expected table_text, csv or structured_object)")]
    UnknownFormat(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed report document: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    TableText,
    Csv,
    StructuredObject,
}

impl FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table_text" | "text" => Ok(ReportFormat::TableText),
            "csv" => Ok(ReportFormat::Csv),
            "structured_object" | "json" => Ok(ReportFormat::StructuredObject),
            other => Err(ReportError::UnknownFormat(other.to_string())),
        }
    }
}

/// A labelled sequence of values, e.g. a configuration sweep or a per-candidate line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub points: Vec<SeriesPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub label: String,
    pub value: f64,
}

/// Efficiency audit of one reported attribution row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyCheck {
    pub label: String,
    pub phi_sum: f64,
    /// `v(N) - v(∅)`.
    pub gain: f64,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl EfficiencyCheck {
    pub fn new(label: impl Into<String>, phi_sum: f64, gain: f64, tolerance: f64) -> Self {
        let residual = (phi_sum - gain).abs();
        EfficiencyCheck {
            label: label.into(),
            phi_sum,
            gain,
            residual,
            tolerance,
            pass: residual <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportItem {
    Attribution(AttributionResult),
    Synergy(SynergyMatrix),
    Configuration(WorkflowConfiguration),
    Consistency(ConsistencyReport),
    Series(Series),
    Efficiency(EfficiencyCheck),
}

#[derive(Serialize, Deserialize)]
struct Document {
    items: Vec<ReportItem>,
}

pub fn emit_report(items: &[ReportItem], format: ReportFormat) -> Result<String, ReportError> {
    match format {
        ReportFormat::TableText => {
            let mut out = String::new();
            for (k, item) in items.iter().enumerate() {
                let one_liners = matches!(item, ReportItem::Efficiency(_))
                    && matches!(
                        items.get(k.wrapping_sub(1)),
                        Some(ReportItem::Efficiency(_))
                    );
                if k > 0 && !one_liners {
                    out.push('\n');
                }
                out.push_str(&render_text(item));
            }
            Ok(out)
        }
        ReportFormat::Csv => {
            let blocks = items
                .iter()
                .map(render_csv)
                .collect::<Result<Vec<_>, _>>()?;
            Ok(blocks.join("\n"))
        }
        ReportFormat::StructuredObject => {
            let doc = Document {
                items: items.to_vec(),
            };
            let mut s = serde_json::to_string_pretty(&doc)?;
            s.push('\n');
            Ok(s)
        }
    }
}

/// Parses the output of [`emit_report`] with [`ReportFormat::StructuredObject`].
pub fn parse_structured(text: &str) -> Result<Vec<ReportItem>, ReportError> {
    Ok(serde_json::from_str::<Document>(text)?.items)
}

/// `v(S)` for every coalition in ascending mask order, labelled by member names.
pub fn configuration_sweep(game: &GameTable) -> Series {
    let components = game.components();
    Series {
        name: game
            .label()
            .map(|l| format!("configuration sweep ({l})"))
            .unwrap_or_else(|| "configuration sweep".into()),
        points: game
            .entries()
            .map(|(c, value)| SeriesPoint {
                label: format!("{{{}}}", components.coalition_labels(c).join(",")),
                value,
            })
            .collect(),
    }
}

/// φ of one component across the candidates of a table, in row order.
pub fn candidate_series(table: &ModelAttributionTable, component: usize) -> Series {
    Series {
        name: format!("phi[{}]", table.components.label(component)),
        points: table
            .component_values(component)
            .into_iter()
            .map(|(label, value)| SeriesPoint { label, value })
            .collect(),
    }
}

fn fmt3(x: f64) -> String {
    format!("{x:.3}")
}

fn text_table(title: &str, header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (k, cell) in cells.iter().enumerate() {
            let pad = widths[k] - cell.chars().count();
            if k == 0 {
                s.push_str(cell);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str("  ");
                s.push_str(&" ".repeat(pad));
                s.push_str(cell);
            }
        }
        s.trim_end().to_string()
    };
    let _ = writeln!(out, "{}", line(header));
    let rule: Vec<String> = (0..cols).map(|k| "-".repeat(widths[k])).collect();
    let _ = writeln!(out, "{}", line(&rule));
    for row in rows {
        let _ = writeln!(out, "{}", line(row));
    }
    out
}

fn render_text(item: &ReportItem) -> String {
    match item {
        ReportItem::Attribution(r) => {
            let mut header = vec!["component".to_string(), "phi".to_string()];
            if r.std_error.is_some() {
                header.push("std_error".into());
            }
            let rows: Vec<Vec<String>> = r
                .components
                .labels()
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    let mut row = vec![l.clone(), fmt3(r.phi[i])];
                    if let Some(se) = &r.std_error {
                        row.push(fmt3(se[i]));
                    }
                    row
                })
                .collect();
            let title = match r.method {
                crate::attribution::Method::Exact => "shapley values (exact)".to_string(),
                crate::attribution::Method::PermutationMc => {
                    format!("shapley values (permutation_mc, {} samples)", r.samples)
                }
            };
            let mut s = text_table(&title, &header, &rows);
            let _ = writeln!(
                s,
                "v(empty) = {}  v(all) = {}  sum(phi) = {}  efficiency residual = {:.3e}",
                fmt3(r.empty_value),
                fmt3(r.grand_value),
                fmt3(r.phi.iter().sum()),
                r.efficiency_residual()
            );
            s
        }
        ReportItem::Synergy(m) => {
            let mut header = vec!["component".to_string()];
            header.extend(m.components.iter().cloned());
            let rows: Vec<Vec<String>> = m
                .components
                .iter()
                .zip(&m.entries)
                .map(|(l, row)| {
                    std::iter::once(l.clone())
                        .chain(row.iter().map(|x| fmt3(*x)))
                        .collect()
                })
                .collect();
            text_table("pairwise synergy", &header, &rows)
        }
        ReportItem::Configuration(cfg) => {
            let header = ["component", "candidate", "phi"].map(String::from).to_vec();
            let rows: Vec<Vec<String>> = cfg
                .assignment
                .iter()
                .map(|(c, choice)| vec![c.clone(), choice.candidate.clone(), fmt3(choice.phi)])
                .collect();
            let mut s = text_table("optimal configuration", &header, &rows);
            if let Some(note) = &cfg.predicted_note {
                let _ = writeln!(s, "note: {note}");
            }
            s
        }
        ReportItem::Consistency(r) => {
            let header = ["component", "consistent", "total", "rate"]
                .map(String::from)
                .to_vec();
            let rows: Vec<Vec<String>> = r
                .per_component
                .iter()
                .chain(std::iter::once(&r.pooled))
                .map(|c| {
                    vec![
                        c.component.clone(),
                        c.consistent.to_string(),
                        c.total.to_string(),
                        fmt3(c.rate),
                    ]
                })
                .collect();
            text_table("ranking consistency", &header, &rows)
        }
        ReportItem::Series(series) => {
            let header = ["label", "value"].map(String::from).to_vec();
            let rows: Vec<Vec<String>> = series
                .points
                .iter()
                .map(|p| vec![p.label.clone(), fmt3(p.value)])
                .collect();
            text_table(&series.name, &header, &rows)
        }
        ReportItem::Efficiency(e) => {
            format!(
                "{}: sum(phi) = {}  gain = {}  residual = {:.3e}  {}\n",
                e.label,
                fmt3(e.phi_sum),
                fmt3(e.gain),
                e.residual,
                if e.pass { "ok" } else { "FAIL" }
            )
        }
    }
}

fn render_csv(item: &ReportItem) -> Result<String, ReportError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let num = |x: f64| x.to_string();
    match item {
        ReportItem::Attribution(r) => {
            w.write_record(["component", "phi", "std_error"])?;
            for (i, l) in r.components.labels().iter().enumerate() {
                let se = r.std_error.as_ref().map(|s| num(s[i])).unwrap_or_default();
                w.write_record([l.as_str(), &num(r.phi[i]), &se])?;
            }
        }
        ReportItem::Synergy(m) => {
            let header: Vec<&str> = std::iter::once("component")
                .chain(m.components.iter().map(String::as_str))
                .collect();
            w.write_record(&header)?;
            for (l, row) in m.components.iter().zip(&m.entries) {
                let mut rec = vec![l.clone()];
                rec.extend(row.iter().map(|x| num(*x)));
                w.write_record(&rec)?;
            }
        }
        ReportItem::Configuration(cfg) => {
            w.write_record(["component", "candidate", "phi"])?;
            for (c, choice) in &cfg.assignment {
                w.write_record([c.as_str(), &choice.candidate, &num(choice.phi)])?;
            }
        }
        ReportItem::Consistency(r) => {
            w.write_record(["component", "consistent", "total", "rate"])?;
            for c in r.per_component.iter().chain(std::iter::once(&r.pooled)) {
                w.write_record([
                    c.component.as_str(),
                    &c.consistent.to_string(),
                    &c.total.to_string(),
                    &num(c.rate),
                ])?;
            }
        }
        ReportItem::Series(series) => {
            w.write_record(["label", "value"])?;
            for p in &series.points {
                w.write_record([p.label.as_str(), &num(p.value)])?;
            }
        }
        ReportItem::Efficiency(e) => {
            w.write_record(["label", "phi_sum", "gain", "residual", "tolerance", "pass"])?;
            w.write_record([
                e.label.as_str(),
                &num(e.phi_sum),
                &num(e.gain),
                &num(e.residual),
                &num(e.tolerance),
                if e.pass { "true" } else { "false" },
            ])?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| ReportError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
