//! Evaluation measures for general choice (micro-averaged over all objects
//! of all tasks) and for discrete choice.

use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ChoiceLabel;

/// Confusion counts pooled over every object of every task.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTotals {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionTotals {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds the counts for one task; `truth` and `predicted` must align.
    pub fn accumulate(&mut self, truth: &ChoiceLabel, predicted: &ChoiceLabel) -> Result<()> {
        if truth.len() != predicted.len() {
            return Err(Error::shape(format!(
                "truth has {} entries, prediction {}",
                truth.len(),
                predicted.len()
            )));
        }
        for (&y, &p) in truth.bits().iter().zip(predicted.bits()) {
            match (y, p) {
                (true, true) => self.tp += 1,
                (false, false) => self.tn += 1,
                (false, true) => self.fp += 1,
                (true, false) => self.fn_ += 1,
            }
        }
        Ok(())
    }

    /// Integer-label variant; entries outside {0, 1} are rejected.
    pub fn accumulate_ints(&mut self, truth: &[i64], predicted: &[i64]) -> Result<()> {
        let truth = ChoiceLabel::from_ints(truth)?;
        let predicted = ChoiceLabel::from_ints(predicted)?;
        self.accumulate(&truth, &predicted)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn merge(mut self, other: ConfusionTotals) -> Self {
        self += other;
        self
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

impl AddAssign for ConfusionTotals {
    fn add_assign(&mut self, other: Self) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `2TP / (2TP + FN + FP)`; zero when the denominator vanishes.
pub fn f1_micro(t: &ConfusionTotals) -> f64 {
    ratio(2 * t.tp, 2 * t.tp + t.fn_ + t.fp)
}

/// Sensitivity + specificity - 1. An addend whose class is absent counts as 0.
pub fn informedness(t: &ConfusionTotals) -> f64 {
    ratio(t.tp, t.tp + t.fn_) + ratio(t.tn, t.tn + t.fp) - 1.0
}

pub fn subset01(truth: &ChoiceLabel, predicted: &ChoiceLabel) -> Result<f64> {
    if truth.len() != predicted.len() {
        return Err(Error::shape("subset accuracy needs equal-length labels"));
    }
    Ok(if truth == predicted { 1.0 } else { 0.0 })
}

/// Micro-averaged ROC AUC over pooled `(score, label)` pairs, computed as the
/// Mann-Whitney statistic with midranks for tied scores.
pub fn auc_micro(pairs: &[(f64, bool)]) -> Result<f64> {
    let positives = pairs.iter().filter(|p| p.1).count();
    let negatives = pairs.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Undefined("AUC needs both positive and negative objects".into()));
    }
    if pairs.iter().any(|p| p.0.is_nan()) {
        return Err(Error::validation("AUC scores must not be NaN"));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[a].0.total_cmp(&pairs[b].0));
    let mut positive_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && pairs[order[end]].0 == pairs[order[start]].0 {
            end += 1;
        }
        // ranks are 1-based: start+1 ..= end
        let midrank = (start + 1 + end) as f64 / 2.0;
        let tied_pos = order[start..end].iter().filter(|&&i| pairs[i].1).count();
        positive_rank_sum += midrank * tied_pos as f64;
        start = end;
    }
    let p = positives as f64;
    let u = positive_rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

/// Indices sorted by descending score, ties by ascending index.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// 1 when the true choice is among the `k` best-scored objects.
pub fn topk_accuracy(truth: usize, scores: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > scores.len() {
        return Err(Error::validation(format!(
            "k = {k} outside 1..={}",
            scores.len()
        )));
    }
    if truth >= scores.len() {
        return Err(Error::validation("true choice index out of range"));
    }
    let hit = rank_descending(scores)[..k].contains(&truth);
    Ok(if hit { 1.0 } else { 0.0 })
}

pub fn categorical_accuracy(truth: usize, scores: &[f64]) -> Result<f64> {
    topk_accuracy(truth, scores, 1)
}

/// Accuracy rescaled so that uniform random guessing over `n` objects maps to 0.
pub fn normalized_accuracy(accuracy: f64, task_size: usize) -> Result<f64> {
    if task_size < 2 {
        return Err(Error::validation("normalized accuracy needs task size >= 2"));
    }
    let random = 1.0 / task_size as f64;
    Ok((accuracy - random) / (1.0 - random))
}
