//! Core domain types: choice tasks, labels and datasets.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Utilities, one per object of a task, in task order.
pub type ScoreVector = Vec<f64>;

/// An ordered list of `n` objects, each a `d`-dimensional feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ChoiceTask {
    objects: Array2<f64>,
}

impl ChoiceTask {
    pub fn new(objects: Array2<f64>) -> Result<Self> {
        if objects.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("task features must be finite"));
        }
        Ok(Self { objects })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::shape("task rows have inconsistent dimensions"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let objects = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| Error::shape(e.to_string()))?;
        Self::new(objects)
    }

    pub fn len(&self) -> usize {
        self.objects.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.objects.ncols()
    }

    pub fn object(&self, i: usize) -> ArrayView1<'_, f64> {
        self.objects.row(i)
    }

    pub fn objects(&self) -> ArrayView2<'_, f64> {
        self.objects.view()
    }

    /// Task whose `k`-th object is `self.object(perm[k])`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            objects: self.objects.select(Axis(0), perm),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        self.permuted(indices)
    }
}

/// Binary membership vector of the chosen subset.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChoiceLabel(Vec<bool>);

impl ChoiceLabel {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    /// Accepts only 0/1 entries.
    pub fn from_ints(values: &[i64]) -> Result<Self> {
        values
            .iter()
            .map(|&v| match v {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::validation(format!("label entry {other} is not binary"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn one_hot(n: usize, hot: usize) -> Self {
        Self((0..n).map(|i| i == hot).collect())
    }

    pub fn all(n: usize, value: bool) -> Self {
        Self(vec![value; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn count_chosen(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn chosen(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    /// The single chosen index of a one-hot label.
    pub fn hot_index(&self) -> Option<usize> {
        match self.chosen().as_slice() {
            [j] => Some(*j),
            _ => None,
        }
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self(perm.iter().map(|&p| self.0[p]).collect())
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// Relative slack granted to `Ge`, so scores that tie with the threshold in
/// decimal still tie after binary rounding (0.2 + 0.7 < 0.9 in f64).
pub const GE_TOLERANCE: f64 = 1e-12;

/// Comparison used when thresholding utilities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparison {
    #[default]
    Gt,
    Ge,
}

impl Comparison {
    pub fn holds(self, score: f64, threshold: f64) -> bool {
        match self {
            Comparison::Gt => score > threshold,
            Comparison::Ge => score >= threshold - GE_TOLERANCE * threshold.abs().max(1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Comparison::Gt => "gt",
            Comparison::Ge => "ge",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "gt" => Ok(Comparison::Gt),
            "ge" => Ok(Comparison::Ge),
            other => Err(Error::validation(format!("unknown comparison '{other}'"))),
        }
    }
}

/// Index of the largest score; ties resolve to the lowest index.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some(b) if s <= scores[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    /// Arbitrary chosen subsets.
    Choice,
    /// Exactly one chosen object per task.
    Discrete,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Choice => "choice",
            DatasetKind::Discrete => "discrete",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub task: ChoiceTask,
    pub label: ChoiceLabel,
}

impl Instance {
    pub fn new(task: ChoiceTask, label: ChoiceLabel) -> Result<Self> {
        if task.len() != label.len() {
            return Err(Error::shape(format!(
                "task has {} objects but label has {} entries",
                task.len(),
                label.len()
            )));
        }
        Ok(Self { task, label })
    }
}

/// A list of labelled tasks. Discrete datasets carry one-hot labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub instances: Vec<Instance>,
}

impl Dataset {
    pub fn new(kind: DatasetKind, instances: Vec<Instance>) -> Result<Self> {
        if kind == DatasetKind::Discrete {
            if let Some(pos) = instances.iter().position(|i| i.label.hot_index().is_none()) {
                return Err(Error::validation(format!(
                    "instance {pos} of a discrete dataset is not one-hot"
                )));
            }
        }
        Ok(Self { kind, instances })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.instances.first().map(|i| i.task.dim())
    }

    /// The common task size, or `None` when sizes differ or the set is empty.
    pub fn uniform_task_size(&self) -> Option<usize> {
        let n = self.instances.first()?.task.len();
        self.instances
            .iter()
            .all(|i| i.task.len() == n)
            .then_some(n)
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            kind: self.kind,
            instances: indices.iter().map(|&i| self.instances[i].clone()).collect(),
        }
    }
}

/// Searches for a context effect: two tasks sharing objects `x` and `y`
/// where `x` is chosen over `y` in one and `y` over `x` in the other.
/// Objects are identified by bit-exact feature equality.
///
/// Returns the indices of the two tasks when such a pair exists.
pub fn find_context_effect(tasks: &[(ChoiceTask, ChoiceLabel)]) -> Option<(usize, usize)> {
    use std::collections::HashMap;

    let key = |task: &ChoiceTask, i: usize| -> Vec<u64> {
        task.object(i).iter().map(|v| v.to_bits()).collect()
    };
    // (x, y) -> first task where x is chosen and y is not
    let mut preferred: HashMap<(Vec<u64>, Vec<u64>), usize> = HashMap::new();
    for (t, (task, label)) in tasks.iter().enumerate() {
        for i in 0..task.len() {
            for j in 0..task.len() {
                if label.get(i) && !label.get(j) {
                    preferred.entry((key(task, i), key(task, j))).or_insert(t);
                }
            }
        }
    }
    for ((x, y), &t) in &preferred {
        if let Some(&u) = preferred.get(&(y.clone(), x.clone())) {
            return Some((t.min(u), t.max(u)));
        }
    }
    None
}
