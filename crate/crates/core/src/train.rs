//! Hyperparameters and helpers shared by all gradient-trained models.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::nnet::StepDecay;
use crate::types::{Dataset, DatasetKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden_layers: usize,
    pub units: usize,
    pub lr0: f64,
    pub drop_rate: f64,
    pub epochs_drop: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Slope of the logistic link that maps FETA scores to probabilities
    /// for binary cross-entropy.
    pub link_scale: f64,
    /// Defaults to binary cross-entropy for choice data and the max
    /// categorical hinge for discrete data.
    pub loss: Option<LossKind>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 2,
            units: 32,
            lr0: 0.01,
            drop_rate: 0.5,
            epochs_drop: 100,
            batch_size: 128,
            epochs: 300,
            l2: 1e-4,
            momentum: 0.9,
            seed: 0,
            link_scale: crate::feta::DEFAULT_LINK_SCALE,
            loss: None,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> StepDecay {
        StepDecay {
            lr0: self.lr0,
            drop_rate: self.drop_rate,
            epochs_drop: self.epochs_drop,
        }
    }

    pub fn loss_for(&self, kind: DatasetKind) -> LossKind {
        self.loss.unwrap_or(match kind {
            DatasetKind::Choice => LossKind::BinaryCrossEntropy,
            DatasetKind::Discrete => LossKind::CategoricalHingeMax,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule().validate()?;
        if self.units == 0 {
            return Err(Error::validation("units must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::validation("momentum must lie in [0, 1)"));
        }
        if !(self.link_scale > 0.0 && self.link_scale.is_finite()) {
            return Err(Error::validation("link_scale must be positive"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::validation("l2 must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Checks a training set for set-input models: nonempty, one task size,
/// labels compatible with the loss. Returns `(n, d)`.
pub fn check_training_set(data: &Dataset, loss: LossKind) -> Result<(usize, usize)> {
    let first = data
        .instances
        .first()
        .ok_or_else(|| Error::validation("training set is empty"))?;
    let n = data
        .uniform_task_size()
        .ok_or_else(|| Error::validation("training tasks must all have the same size"))?;
    let d = first.task.dim();
    if data.instances.iter().any(|i| i.task.dim() != d) {
        return Err(Error::shape("training tasks have inconsistent feature dimensions"));
    }
    if loss.is_categorical() && data.instances.iter().any(|i| i.label.hot_index().is_none()) {
        return Err(Error::validation(format!(
            "{} needs one-hot labels",
            loss.name()
        )));
    }
    Ok((n, d))
}

/// Seeded Fisher-Yates shuffle of `0..count`, chunked into batches.
pub fn shuffled_batches<R: Rng + ?Sized>(count: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Stream id reserved for per-epoch batch shuffling.
pub const SHUFFLE_STREAM: u64 = 1;

/// Independent ChaCha stream derived from one seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
