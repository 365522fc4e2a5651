//! Training dispatch, outer cross-validation and the task-size sweep.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ModelConfig, ModelName};
use super::records::ResultRecord;
use crate::baselines::{train_gen_linear, train_pairwise_linear, train_ranknet, AllPositive, RandomUtility};
use crate::datagen::{generate, GeneratorSpec};
use crate::error::{Error, Result};
use crate::fate::train_fate;
use crate::feta::train_feta;
use crate::metrics::{
    auc_micro, categorical_accuracy, f1_micro, informedness, normalized_accuracy, subset01, topk_accuracy,
    ConfusionTotals,
};
use crate::model::{AnyModel, ChoiceModel};
use crate::train::{stream_rng, TrainConfig};
use crate::types::{Dataset, DatasetKind};

/// Streams `CV_STREAM + repeat` of the CV seed permute the instances.
const CV_STREAM: u64 = 1 << 16;

/// First generator stream used by the size sweep; far away from any
/// training instances drawn from the same seed.
pub const SWEEP_FIRST_INSTANCE: u64 = 1 << 32;

/// Trains the configured model on `data` without calibrating it.
pub fn train_model(model: &ModelConfig, cfg: &TrainConfig, data: &Dataset) -> Result<AnyModel> {
    let mut m = match model.name {
        ModelName::Feta => AnyModel::Feta(train_feta(data, cfg, model.aggregation)?),
        ModelName::Fate => AnyModel::Fate(train_fate(data, cfg, model.embedding_dim, model.self_in_context)?),
        ModelName::GenLinear => AnyModel::Baseline(train_gen_linear(data, cfg)?),
        ModelName::PairwiseLinear => AnyModel::Baseline(train_pairwise_linear(data, cfg)?),
        ModelName::Ranknet => AnyModel::Baseline(train_ranknet(data, cfg)?),
        ModelName::AllPositive => AnyModel::AllPositive(AllPositive),
        ModelName::Random => AnyModel::Random(RandomUtility::new(cfg.seed)),
    };
    match &mut m {
        AnyModel::Feta(f) => f.comparison = model.comparison,
        AnyModel::Fate(f) => f.comparison = model.comparison,
        AnyModel::Baseline(b) => b.comparison = model.comparison,
        AnyModel::AllPositive(_) | AnyModel::Random(_) => {}
    }
    Ok(m)
}

/// Index sets of one outer fold. `calibration` is empty for discrete data,
/// where predictions are argmax choices and need no threshold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub calibration: Vec<usize>,
    pub test: Vec<usize>,
}

/// Calibration carve size for a training pool of `pool` instances.
fn calibration_count(pool: usize, fraction: f64) -> usize {
    (pool as f64 * fraction).ceil() as usize
}

/// Outer folds of one repeat. Each instance is tested exactly once.
pub fn fold_splits(
    n: usize,
    folds: usize,
    repeat: usize,
    seed: u64,
    calibration_fraction: Option<f64>,
) -> Result<Vec<FoldSplit>> {
    if folds < 2 || n < folds {
        return Err(Error::Config(format!("cannot split {n} instances into {folds} folds")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream_rng(seed, CV_STREAM + repeat as u64));
    let mut out = Vec::with_capacity(folds);
    for f in 0..folds {
        let (lo, hi) = (f * n / folds, (f + 1) * n / folds);
        let test = perm[lo..hi].to_vec();
        let pool: Vec<usize> = perm[..lo].iter().chain(&perm[hi..]).copied().collect();
        let k = calibration_fraction.map_or(0, |frac| calibration_count(pool.len(), frac));
        if calibration_fraction.is_some() && (k == 0 || k >= pool.len()) {
            return Err(Error::Config(format!(
                "fold {f} has {} training instances, too few for a calibration split",
                pool.len()
            )));
        }
        out.push(FoldSplit {
            calibration: pool[..k].to_vec(),
            train: pool[k..].to_vec(),
            test,
        });
    }
    Ok(out)
}

/// Trains on `train`, tunes the threshold on `calibration` (choice data only).
pub fn fit(cfg: &ExperimentConfig, train: &Dataset, calibration: &Dataset) -> Result<AnyModel> {
    let mut model = train_model(&cfg.model, &cfg.train, train)?;
    if train.kind == DatasetKind::Choice {
        model.calibrate(&calibration.instances)?;
    }
    Ok(model)
}

/// Splits a whole dataset into training and calibration parts and fits.
pub fn fit_all(cfg: &ExperimentConfig, data: &Dataset) -> Result<AnyModel> {
    let n = data.len();
    let k = match data.kind {
        DatasetKind::Choice => calibration_count(n, cfg.cv.calibration_fraction),
        DatasetKind::Discrete => 0,
    };
    if data.kind == DatasetKind::Choice && (k == 0 || k >= n) {
        return Err(Error::Config(format!("{n} instances are too few for a calibration split")));
    }
    let calibration = data.select(&(0..k).collect::<Vec<_>>());
    let train = data.select(&(k..n).collect::<Vec<_>>());
    fit(cfg, &train, &calibration)
}

/// The full metric suite for the dataset kind, in a fixed order.
pub fn evaluate(model: &dyn ChoiceModel, data: &Dataset) -> Result<Vec<(String, f64)>> {
    if data.is_empty() {
        return Err(Error::validation("evaluation set is empty"));
    }
    let mut out = Vec::new();
    match data.kind {
        DatasetKind::Choice => {
            let mut totals = ConfusionTotals::new();
            let mut subset = 0.0;
            let mut pooled = Vec::new();
            for inst in &data.instances {
                let scores = model.scores(&inst.task)?;
                let predicted = model.choose(&inst.task)?;
                totals.accumulate(&inst.label, &predicted)?;
                subset += subset01(&inst.label, &predicted)?;
                pooled.extend(scores.into_iter().zip(inst.label.bits().iter().copied()));
            }
            out.push(("f1".into(), f1_micro(&totals)));
            out.push(("informedness".into(), informedness(&totals)));
            out.push(("subset_accuracy".into(), subset / data.len() as f64));
            match auc_micro(&pooled) {
                Ok(auc) => out.push(("auc".into(), auc)),
                Err(Error::Undefined(_)) => {}
                Err(e) => return Err(e),
            }
        }
        DatasetKind::Discrete => {
            let (mut acc, mut top3, mut norm, mut norm_count) = (0.0, 0.0, 0.0, 0usize);
            for inst in &data.instances {
                let truth = inst
                    .label
                    .hot_index()
                    .ok_or_else(|| Error::validation("discrete instance without a one-hot label"))?;
                let scores = model.scores(&inst.task)?;
                let hit = categorical_accuracy(truth, &scores)?;
                acc += hit;
                top3 += topk_accuracy(truth, &scores, scores.len().min(3))?;
                if scores.len() >= 2 {
                    norm += normalized_accuracy(hit, scores.len())?;
                    norm_count += 1;
                }
            }
            let n = data.len() as f64;
            out.push(("categorical_accuracy".into(), acc / n));
            out.push(("top3_accuracy".into(), top3 / n));
            if norm_count > 0 {
                out.push(("normalized_accuracy".into(), norm / norm_count as f64));
            }
        }
    }
    Ok(out)
}

/// Outer cross-validation: `repeats` x `folds` fits, each evaluated on its
/// held-out fold. Fold `f` of repeat `r` trains with seed `train.seed + r*folds + f`.
pub fn cross_validate(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    let data = cfg.dataset.load()?;
    cross_validate_on(cfg, &data)
}

pub fn cross_validate_on(cfg: &ExperimentConfig, data: &Dataset) -> Result<Vec<ResultRecord>> {
    let dataset = cfg.dataset.label();
    let frac = (data.kind == DatasetKind::Choice).then_some(cfg.cv.calibration_fraction);
    let mut records = Vec::new();
    for repeat in 0..cfg.cv.repeats {
        for (fold, split) in fold_splits(data.len(), cfg.cv.folds, repeat, cfg.cv.seed, frac)?
            .into_iter()
            .enumerate()
        {
            let started = Instant::now();
            let mut run = cfg.clone();
            run.train.seed = cfg.train.seed.wrapping_add((repeat * cfg.cv.folds + fold) as u64);
            let model = fit(&run, &data.select(&split.train), &data.select(&split.calibration))?;
            let mut metrics = evaluate(&model, &data.select(&split.test))?;
            if data.kind == DatasetKind::Choice {
                metrics.push(("threshold".into(), model.threshold()));
            }
            let wall_time = started.elapsed().as_secs_f64();
            log::info!("{dataset}/{} repeat {repeat} fold {fold}: {metrics:?}", cfg.model.name);
            records.extend(metrics.into_iter().map(|(metric, value)| ResultRecord {
                dataset: dataset.clone(),
                model: cfg.model.name.to_string(),
                fold,
                repeat,
                metric,
                value,
                wall_time,
            }));
        }
    }
    Ok(records)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub size: usize,
    pub instances: usize,
    pub categorical_accuracy: f64,
    pub normalized_accuracy: f64,
}

/// Evaluates a discrete-choice model on freshly generated tasks of each size.
/// The generator keeps the spec's seed, so class prototypes match the training
/// data, but draws instances from streams no training set uses.
pub fn size_generalization_sweep(
    model: &dyn ChoiceModel,
    spec: &GeneratorSpec,
    sizes: &[usize],
    instances: usize,
) -> Result<Vec<SweepRecord>> {
    if spec.kind() != DatasetKind::Discrete {
        return Err(Error::validation("the size sweep needs a discrete-choice generator"));
    }
    let mut out = Vec::new();
    for &size in sizes {
        if size < 2 {
            log::warn!("skipping task size {size}");
            continue;
        }
        let mut s = spec.clone();
        s.task_size = size;
        s.instances = instances;
        s.first_instance = SWEEP_FIRST_INSTANCE + ((size as u64) << 24);
        let data = generate(&s)?;
        let mut hits = 0.0;
        for inst in &data.instances {
            let k = model.discrete_choose(&inst.task)?;
            if k >= size {
                return Err(Error::State(format!("{} chose index {k} in a task of size {size}", model.name())));
            }
            hits += if inst.label.get(k) { 1.0 } else { 0.0 };
        }
        let acc = hits / instances as f64;
        out.push(SweepRecord {
            size,
            instances,
            categorical_accuracy: acc,
            normalized_accuracy: normalized_accuracy(acc, size)?,
        });
    }
    Ok(out)
}
