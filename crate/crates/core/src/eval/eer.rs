use crate::data::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrial {
    pub utt_id: String,
    /// Higher means more likely bona fide.
    pub score: f64,
    pub label: Label,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    pub trials: Vec<ScoredTrial>,
}

impl ScoreSet {
    pub fn new(trials: Vec<ScoredTrial>) -> Self {
        Self { trials }
    }

    pub fn from_pairs(bonafide: &[f64], spoof: &[f64]) -> Self {
        let mut trials = Vec::with_capacity(bonafide.len() + spoof.len());
        for (i, &s) in bonafide.iter().enumerate() {
            trials.push(ScoredTrial {
                utt_id: format!("b{i}"),
                score: s,
                label: Label::Bonafide,
            });
        }
        for (i, &s) in spoof.iter().enumerate() {
            trials.push(ScoredTrial {
                utt_id: format!("s{i}"),
                score: s,
                label: Label::Spoof,
            });
        }
        Self { trials }
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.trials.iter().filter(|t| t.label == label).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eer {
    /// Fraction in [0, 1].
    pub eer: f64,
    pub threshold: f64,
}

/// Equal error rate by a threshold sweep.
///
/// Candidate thresholds are the midpoints between adjacent distinct scores
/// plus one point below the minimum and one above the maximum. At threshold
/// θ, P_fa is the share of spoof trials scoring above θ and P_miss the share
/// of bona fide trials scoring at or below θ. The EER is taken where the two
/// rates cross, interpolating linearly between the neighbouring operating
/// points when they never coincide exactly.
pub fn compute_eer(set: &ScoreSet) -> Result<Eer> {
    let n_bona = set.count(Label::Bonafide);
    let n_spoof = set.count(Label::Spoof);
    if n_bona == 0 || n_spoof == 0 {
        return Err(Error::invalid(format!(
            "EER needs both classes (got {n_bona} bona fide, {n_spoof} spoof)"
        )));
    }
    if let Some(t) = set.trials.iter().find(|t| !t.score.is_finite()) {
        return Err(Error::invalid(format!("score of `{}` is not finite", t.utt_id)));
    }
    let mut sorted: Vec<(f64, Label)> = set.trials.iter().map(|t| (t.score, t.label)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Walk thresholds upwards; after passing score group g, everything in it
    // counts as "≤ θ".
    let mut bona_le = 0usize;
    let mut spoof_le = 0usize;
    let rates = |bona_le: usize, spoof_le: usize| {
        let p_fa = (n_spoof - spoof_le) as f64 / n_spoof as f64;
        let p_miss = bona_le as f64 / n_bona as f64;
        (p_fa, p_miss)
    };
    let mut prev_theta = sorted[0].0 - 1.0;
    let mut prev = rates(0, 0);
    if prev.1 >= prev.0 {
        return Ok(Eer {
            eer: prev.0,
            threshold: prev_theta,
        });
    }
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            match sorted[i].1 {
                Label::Bonafide => bona_le += 1,
                Label::Spoof => spoof_le += 1,
            }
            i += 1;
        }
        let theta = if i < sorted.len() { (s + sorted[i].0) / 2.0 } else { s + 1.0 };
        let cur = rates(bona_le, spoof_le);
        if cur.1 >= cur.0 {
            return Ok(crossing(prev_theta, prev, theta, cur));
        }
        prev_theta = theta;
        prev = cur;
    }
    unreachable!("P_miss reaches 1 and P_fa reaches 0 above the maximum score")
}

/// Crossing of P_miss and P_fa on the segment between two operating points,
/// where `d = P_miss - P_fa` is negative at `a` and non-negative at `b`.
pub(crate) fn crossing(theta_a: f64, a: (f64, f64), theta_b: f64, b: (f64, f64)) -> Eer {
    let (fa_a, miss_a) = a;
    let (fa_b, miss_b) = b;
    if miss_b == fa_b {
        return Eer {
            eer: fa_b,
            threshold: theta_b,
        };
    }
    let t = (fa_a - miss_a) / ((miss_b - miss_a) - (fa_b - fa_a));
    Eer {
        eer: fa_a + t * (fa_b - fa_a),
        threshold: theta_a + t * (theta_b - theta_a),
    }
}
