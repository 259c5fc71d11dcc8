use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use super::eer::{ScoreSet, ScoredTrial};
use crate::data::{write_atomic, Label, Manifest, ProtocolEntry, Utterance};
use crate::error::{Error, Result};
use crate::signal::read_wav;
use crate::system::CmSystem;

/// One `utt_id score` line per trial, scores with six decimals.
pub fn format_scores(set: &ScoreSet) -> String {
    let mut out = String::new();
    for t in &set.trials {
        writeln!(out, "{} {:.6}", t.utt_id, t.score).unwrap();
    }
    out
}

pub fn write_scores(path: &Path, set: &ScoreSet) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_atomic(path, format_scores(set).as_bytes())
}

pub fn parse_scores_str(text: &str) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let bad = |detail: String| Error::Parse { line: i + 1, detail };
        if cols.len() != 2 {
            return Err(bad(format!("expected `utt_id score`, found {} columns", cols.len())));
        }
        let score: f64 = cols[1].parse().map_err(|_| bad(format!("`{}` is not a number", cols[1])))?;
        if !score.is_finite() {
            return Err(bad(format!("score `{}` is not finite", cols[1])));
        }
        if !seen.insert(cols[0].to_string()) {
            return Err(bad(format!("duplicate utterance id `{}`", cols[0])));
        }
        out.push((cols[0].to_string(), score));
    }
    Ok(out)
}

pub fn read_scores(path: &Path) -> Result<Vec<(String, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores_str(&text)
}

/// Attaches protocol keys to scores. Every scored utterance must be in the
/// protocol; protocol entries without a score are ignored.
pub fn label_scores(scores: &[(String, f64)], protocol: &[ProtocolEntry]) -> Result<ScoreSet> {
    let keys: HashMap<&str, Label> = protocol.iter().map(|e| (e.utt_id.as_str(), e.key)).collect();
    let trials = scores
        .iter()
        .map(|(utt, score)| {
            let label = *keys
                .get(utt.as_str())
                .ok_or_else(|| Error::invalid(format!("scored utterance `{utt}` is not in the protocol")))?;
            Ok(ScoredTrial {
                utt_id: utt.clone(),
                score: *score,
                label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreSet::new(trials))
}

#[derive(Debug, Clone, Default)]
pub struct ScoringRun {
    pub scores: ScoreSet,
    /// `(utt_id, message)` for every trial that could not be scored.
    pub errors: Vec<(String, String)>,
}

impl ScoringRun {
    pub fn summary(&self) -> String {
        format!("scored {} trials, {} failed", self.scores.len(), self.errors.len())
    }
}

/// Scores every manifest entry in eval mode. Unreadable or unusable files
/// are recorded as per-trial errors and skipped.
pub fn score_dataset(system: &CmSystem, manifest: &Manifest) -> ScoringRun {
    let mut run = ScoringRun::default();
    for e in &manifest.entries {
        let result = read_wav(manifest.resolve(e)).and_then(|w| system.score_waveform(&w));
        match result {
            Ok(score) if score.is_finite() => run.scores.trials.push(ScoredTrial {
                utt_id: e.utt_id.clone(),
                score,
                label: e.label,
            }),
            Ok(score) => run.errors.push((e.utt_id.clone(), format!("non-finite score {score}"))),
            Err(err) => run.errors.push((e.utt_id.clone(), err.to_string())),
        }
    }
    run
}

/// Scores in-memory utterances in eval mode.
pub fn score_utterances(system: &CmSystem, utts: &[Utterance]) -> ScoringRun {
    let mut run = ScoringRun::default();
    for u in utts {
        match system.score_waveform(&u.waveform) {
            Ok(score) if score.is_finite() => run.scores.trials.push(ScoredTrial {
                utt_id: u.utt_id.clone(),
                score,
                label: u.label,
            }),
            Ok(score) => run.errors.push((u.utt_id.clone(), format!("non-finite score {score}"))),
            Err(err) => run.errors.push((u.utt_id.clone(), err.to_string())),
        }
    }
    run
}
