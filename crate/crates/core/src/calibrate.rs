//! Post-hoc threshold selection that maximises micro-averaged F1 on
//! held-out `(scores, label)` pairs.
//!
//! Micro-F1 as a function of the threshold only changes at pooled score
//! values, so it suffices to evaluate one candidate per gap between
//! consecutive distinct scores plus one sentinel on each side.

use crate::error::{Error, Result};
use crate::metrics::{f1_micro, ConfusionTotals};
use crate::types::{ChoiceLabel, Comparison, ScoreVector};

#[derive(Clone, Debug, Default)]
pub struct CalibrationSet {
    pairs: Vec<(ScoreVector, ChoiceLabel)>,
}

impl CalibrationSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, scores: ScoreVector, label: ChoiceLabel) -> Result<()> {
        if scores.len() != label.len() {
            return Err(Error::shape("calibration scores and label differ in length"));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::validation("calibration scores must be finite"));
        }
        self.pairs.push((scores, label));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(ScoreVector, ChoiceLabel)] {
        &self.pairs
    }

    fn pooled(&self) -> Vec<(f64, bool)> {
        self.pairs
            .iter()
            .flat_map(|(s, y)| s.iter().copied().zip(y.bits().iter().copied()))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CalibrationMetric {
    F1Micro,
}

/// Candidate thresholds in ascending order: a sentinel below the minimum,
/// midpoints between consecutive distinct scores, a sentinel above the maximum.
pub fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let Some((&lo, &hi)) = distinct.first().zip(distinct.last()) else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(distinct.len() + 1);
    out.push(lo - lo.abs().max(1.0));
    for w in distinct.windows(2) {
        let mid = w[0] + (w[1] - w[0]) / 2.0;
        // adjacent floats: fall back to the lower value, which still separates
        // the two groups under the strict comparison
        out.push(if mid > w[0] && mid < w[1] { mid } else { w[0] });
    }
    out.push(hi + hi.abs().max(1.0));
    out
}

/// Returns the candidate threshold maximising the metric; ties go to the
/// smallest threshold.
pub fn tune_threshold(cal: &CalibrationSet, metric: CalibrationMetric) -> Result<f64> {
    let CalibrationMetric::F1Micro = metric;
    if cal.is_empty() {
        return Err(Error::Calibration("calibration set is empty".into()));
    }
    let mut pooled = cal.pooled();
    let total_pos = pooled.iter().filter(|p| p.1).count() as u64;
    if total_pos == 0 {
        return Err(Error::Calibration("calibration set has no positive objects".into()));
    }
    let candidates = candidate_thresholds(&pooled.iter().map(|p| p.0).collect::<Vec<_>>());
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Sweep candidates upwards; `below` counts objects with score <= candidate.
    let total = pooled.len() as u64;
    let (mut below, mut below_pos) = (0usize, 0u64);
    let mut best = (f64::NEG_INFINITY, candidates[0]);
    for &t in &candidates {
        while below < pooled.len() && pooled[below].0 <= t {
            below_pos += u64::from(pooled[below].1);
            below += 1;
        }
        let predicted_pos = total - below as u64;
        let tp = total_pos - below_pos;
        let totals = ConfusionTotals {
            tp,
            fp: predicted_pos - tp,
            fn_: below_pos,
            tn: below as u64 - below_pos,
        };
        let f1 = f1_micro(&totals);
        if f1 > best.0 {
            best = (f1, t);
        }
    }
    Ok(best.1)
}

pub fn apply_threshold(scores: &[f64], threshold: f64, comparison: Comparison) -> ChoiceLabel {
    ChoiceLabel::new(
        scores
            .iter()
            .map(|&s| comparison.holds(s, threshold))
            .collect(),
    )
}
