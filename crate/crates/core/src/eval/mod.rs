//! Scoring, equal error rate and per-condition reports.

mod eer;
mod report;
mod scores;

pub use eer::{compute_eer, Eer, ScoreSet, ScoredTrial};
pub use report::{condition_report, ConditionReport};
pub use scores::{
    format_scores, label_scores, parse_scores_str, read_scores, score_dataset, score_utterances, write_scores,
    ScoringRun,
};
