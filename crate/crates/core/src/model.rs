//! The scoring interface shared by every trained model.

use std::path::Path;

use crate::baselines::{AllPositive, RandomUtility, UtilityScorer};
use crate::calibrate::{apply_threshold, tune_threshold, CalibrationMetric, CalibrationSet};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::fate::FateModel;
use crate::feta::FetaModel;
use crate::types::{argmax, ChoiceLabel, ChoiceTask, Comparison, Instance, ScoreVector};

pub trait ChoiceModel {
    fn name(&self) -> &'static str;

    fn scores(&self, task: &ChoiceTask) -> Result<ScoreVector>;

    fn threshold(&self) -> f64;

    fn set_threshold(&mut self, t: f64);

    fn comparison(&self) -> Comparison;

    fn choose(&self, task: &ChoiceTask) -> Result<ChoiceLabel> {
        let s = self.scores(task)?;
        Ok(apply_threshold(&s, self.threshold(), self.comparison()))
    }

    /// Index of the highest-scoring object; ties go to the lowest index.
    fn discrete_choose(&self, task: &ChoiceTask) -> Result<usize> {
        let s = self.scores(task)?;
        argmax(&s).ok_or_else(|| Error::validation("task has no objects"))
    }

    /// Tunes the threshold for micro-F1 on held-out instances and returns it.
    fn calibrate(&mut self, held_out: &[Instance]) -> Result<f64> {
        let mut cal = CalibrationSet::new();
        for inst in held_out {
            cal.push(self.scores(&inst.task)?, inst.label.clone())?;
        }
        let t = tune_threshold(&cal, CalibrationMetric::F1Micro)?;
        self.set_threshold(t);
        Ok(t)
    }
}

/// Any trained model, for checkpoint I/O and name-driven dispatch.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyModel {
    Feta(FetaModel),
    Fate(FateModel),
    Baseline(UtilityScorer),
    AllPositive(AllPositive),
    Random(RandomUtility),
}

impl AnyModel {
    fn inner(&self) -> &dyn ChoiceModel {
        match self {
            AnyModel::Feta(m) => m,
            AnyModel::Fate(m) => m,
            AnyModel::Baseline(m) => m,
            AnyModel::AllPositive(m) => m,
            AnyModel::Random(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn ChoiceModel {
        match self {
            AnyModel::Feta(m) => m,
            AnyModel::Fate(m) => m,
            AnyModel::Baseline(m) => m,
            AnyModel::AllPositive(m) => m,
            AnyModel::Random(m) => m,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        match self {
            AnyModel::Feta(m) => m.write_checkpoint(&mut ckpt),
            AnyModel::Fate(m) => m.write_checkpoint(&mut ckpt),
            AnyModel::Baseline(m) => m.write_checkpoint(&mut ckpt),
            AnyModel::AllPositive(_) => ckpt.put_meta("model", "all_positive"),
            AnyModel::Random(m) => {
                ckpt.put_meta("model", "random");
                ckpt.put_meta("seed", m.seed);
                ckpt.put_meta("threshold", m.threshold);
            }
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        Ok(match ckpt.meta("model")? {
            "feta" => AnyModel::Feta(FetaModel::read_checkpoint(ckpt)?),
            "fate" => AnyModel::Fate(FateModel::read_checkpoint(ckpt)?),
            "all_positive" => AnyModel::AllPositive(AllPositive),
            "random" => {
                let seed = ckpt
                    .meta("seed")?
                    .parse()
                    .map_err(|e| Error::validation(format!("bad seed: {e}")))?;
                AnyModel::Random(RandomUtility {
                    seed,
                    threshold: ckpt.meta_f64("threshold")?,
                })
            }
            _ => AnyModel::Baseline(UtilityScorer::read_checkpoint(ckpt)?),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl ChoiceModel for AnyModel {
    fn name(&self) -> &'static str {
        self.inner().name()
    }

    fn scores(&self, task: &ChoiceTask) -> Result<ScoreVector> {
        self.inner().scores(task)
    }

    fn threshold(&self) -> f64 {
        self.inner().threshold()
    }

    fn set_threshold(&mut self, t: f64) {
        self.inner_mut().set_threshold(t);
    }

    fn comparison(&self) -> Comparison {
        self.inner().comparison()
    }

    fn choose(&self, task: &ChoiceTask) -> Result<ChoiceLabel> {
        self.inner().choose(task)
    }

    fn discrete_choose(&self, task: &ChoiceTask) -> Result<usize> {
        self.inner().discrete_choose(task)
    }

    fn calibrate(&mut self, held_out: &[Instance]) -> Result<f64> {
        self.inner_mut().calibrate(held_out)
    }
}
