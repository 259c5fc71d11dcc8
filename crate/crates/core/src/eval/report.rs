use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::eer::{compute_eer, ScoreSet};
use crate::augment::{standard_conditions, TestCondition};
use crate::error::Result;

/// EER per (condition, system), rows in the standard condition order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub conditions: Vec<TestCondition>,
    pub systems: Vec<String>,
    /// `cells[row][col]` as a fraction; `None` where scores were missing.
    pub cells: Vec<Vec<Option<f64>>>,
    pub warnings: Vec<String>,
}

/// Builds the report from per-system score sets keyed by condition name
/// (`babble_20db`, `rt60_025`, ...). Systems keep the given column order.
pub fn condition_report(systems: &[(String, BTreeMap<String, ScoreSet>)]) -> Result<ConditionReport> {
    let conditions = standard_conditions();
    let mut warnings = Vec::new();
    let mut cells = vec![vec![None; systems.len()]; conditions.len()];
    for (col, (name, sets)) in systems.iter().enumerate() {
        for (row, cond) in conditions.iter().enumerate() {
            match sets.get(&cond.name) {
                Some(set) => cells[row][col] = Some(compute_eer(set)?.eer),
                None => warnings.push(format!("system `{name}` has no scores for condition `{}`", cond.name)),
            }
        }
        for key in sets.keys() {
            if !conditions.iter().any(|c| &c.name == key) {
                warnings.push(format!("system `{name}`: ignoring unknown condition `{key}`"));
            }
        }
    }
    Ok(ConditionReport {
        conditions,
        systems: systems.iter().map(|(n, _)| n.clone()).collect(),
        cells,
        warnings,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|e| format!("{:.2}", e * 100.0)).unwrap_or_default()
}

impl ConditionReport {
    /// Column-aligned table with a `%EER` corner cell.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<Vec<String>> = Vec::with_capacity(self.conditions.len() + 1);
        let mut header = vec!["%EER".to_string()];
        header.extend(self.systems.iter().cloned());
        rows.push(header);
        for (cond, r) in self.conditions.iter().zip(&self.cells) {
            let mut row = vec![cond.label()];
            row.extend(r.iter().map(|&v| cell(v)));
            rows.push(row);
        }
        let ncols = rows[0].len();
        let widths: Vec<usize> = (0..ncols)
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &rows {
            let mut line = format!("{:<w$}", r[0], w = widths[0]);
            for c in 1..ncols {
                write!(line, "  {:>w$}", r[c], w = widths[c]).unwrap();
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("condition");
        for s in &self.systems {
            write!(out, "\t{s}").unwrap();
        }
        out.push('\n');
        for (cond, r) in self.conditions.iter().zip(&self.cells) {
            out.push_str(&cond.name);
            for &v in r {
                write!(out, "\t{}", cell(v)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}
