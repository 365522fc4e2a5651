//! Learning context-dependent choice functions over sets of feature vectors.
//!
//! Two set-input scorers are provided: [`feta`] scores every object against
//! each other object of the task and aggregates, [`fate`] first summarises the
//! task by a mean embedding and scores each object jointly with it. Scores
//! become choice sets through a calibrated threshold or, for discrete choice,
//! an argmax.

pub mod baselines;
pub mod calibrate;
pub mod checkpoint;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod fate;
pub mod feta;
pub mod harness;
pub mod letor;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nnet;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use model::{AnyModel, ChoiceModel};
pub use types::{ChoiceLabel, ChoiceTask, Comparison, Dataset, DatasetKind, Instance, ScoreVector};
