use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::trainer::train;
use crate::augment::{standard_conditions, NoiseInventory};
use crate::backends::BackendKind;
use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::eval::{compute_eer, condition_report, score_utterances, ConditionReport, ScoreSet};
use crate::system::ArchConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedRun {
    pub name: String,
    pub train: TrainConfig,
}

/// Evaluation utterances of one test condition (e.g. `noise_5db`).
#[derive(Debug, Clone)]
pub struct TestSet {
    pub condition: String,
    pub utterances: Vec<Utterance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub backend: BackendKind,
    pub augmentation: bool,
    pub frontend: bool,
    pub pretrained: bool,
    pub frozen: bool,
    /// EER fractions aligned with [`AblationTable::conditions`].
    pub eers: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    /// Standard condition names, in report order.
    pub conditions: Vec<String>,
    pub rows: Vec<AblationRow>,
    pub score_sets: Vec<BTreeMap<String, ScoreSet>>,
}

impl AblationTable {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("run\tbackend\taugmentation\tfrontend\tpretrained\tfrozen");
        for c in &self.conditions {
            write!(out, "\t{c}").unwrap();
        }
        out.push('\n');
        for r in &self.rows {
            write!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.name,
                r.backend.as_str(),
                r.augmentation,
                r.frontend,
                r.pretrained,
                r.frozen
            )
            .unwrap();
            for e in &r.eers {
                match e {
                    Some(v) => write!(out, "\t{:.2}", v * 100.0).unwrap(),
                    None => out.push('\t'),
                }
            }
            out.push('\n');
        }
        out
    }

    /// The same results as a condition report with one column per run.
    pub fn to_report(&self) -> Result<ConditionReport> {
        let systems: Vec<(String, BTreeMap<String, ScoreSet>)> = self
            .rows
            .iter()
            .zip(&self.score_sets)
            .map(|(r, s)| (r.name.clone(), s.clone()))
            .collect();
        condition_report(&systems)
    }
}

fn check_names(runs: &[NamedRun]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in runs {
        if r.name.is_empty() || r.name.contains(['/', '\\']) || r.name.starts_with('.') {
            return Err(Error::config(format!("run name `{}` is not usable as a directory name", r.name)));
        }
        if !seen.insert(r.name.as_str()) {
            return Err(Error::config(format!("duplicate run name `{}`", r.name)));
        }
    }
    Ok(())
}

/// Trains every run into `out/<name>` and scores it on every test set.
pub fn ablation_matrix(
    runs: &[NamedRun],
    arch: &ArchConfig,
    train_set: &[Utterance],
    dev_set: &[Utterance],
    inventory: &NoiseInventory,
    tests: &[TestSet],
    out: &Path,
) -> Result<AblationTable> {
    check_names(runs)?;
    for r in runs {
        r.train.validate()?;
    }
    let conditions: Vec<String> = standard_conditions().into_iter().map(|c| c.name).collect();
    let mut rows = Vec::with_capacity(runs.len());
    let mut score_sets = Vec::with_capacity(runs.len());
    for r in runs {
        let trainer = train(&r.train, arch, train_set, dev_set, inventory, &out.join(&r.name), false)?;
        let mut sets = BTreeMap::new();
        for t in tests {
            let scored = score_utterances(&trainer.system, &t.utterances);
            if let Some((utt, msg)) = scored.errors.first() {
                return Err(Error::invalid(format!("run `{}`, condition `{}`: {utt}: {msg}", r.name, t.condition)));
            }
            sets.insert(t.condition.clone(), scored.scores);
        }
        let eers = conditions
            .iter()
            .map(|c| sets.get(c).map(|s| compute_eer(s).map(|e| e.eer)).transpose())
            .collect::<Result<Vec<_>>>()?;
        let c = &r.train;
        rows.push(AblationRow {
            name: r.name.clone(),
            backend: c.backend,
            augmentation: c.augmentation.is_some(),
            frontend: c.use_frontend,
            pretrained: c.backend_pretrained.is_some(),
            frozen: c.frontend_frozen,
            eers,
        });
        score_sets.push(sets);
    }
    Ok(AblationTable {
        conditions,
        rows,
        score_sets,
    })
}
