//! First-evaluate-then-aggregate scoring.
//!
//! Each object gets a context-free utility `U0(x_i)` plus an aggregate of
//! pairwise utilities `U1(x_i, x_j)` over the other objects of its task.
//! The pairwise network has two sigmoid heads: one forward pass on
//! `[x_i, x_j]` (`i < j`) yields `r[i][j]` from the first head and
//! `r[j][i]` from the second, so each unordered pair costs one pass.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::losses::{binary_cross_entropy_logits, LossKind};
use crate::model::ChoiceModel;
use crate::nnet::{Activation, DenseNet, Gradients, OptimizerState};
use crate::train::{check_training_set, shuffled_batches, stream_rng, TrainConfig, SHUFFLE_STREAM};
use crate::types::{ChoiceTask, Comparison, Dataset, Instance, ScoreVector};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Sum,
}

impl Aggregation {
    /// Multiplier applied to each pairwise term of a task with `n` objects.
    pub fn weight(self, n: usize) -> f64 {
        match self {
            Aggregation::Mean if n > 1 => 1.0 / (n - 1) as f64,
            Aggregation::Mean => 0.0,
            Aggregation::Sum => 1.0,
        }
    }

    /// Upper bound of a score when both heads are sigmoid.
    pub fn score_range(self, n: usize) -> f64 {
        match self {
            Aggregation::Mean => 2.0,
            Aggregation::Sum => n.max(1) as f64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Mean => "mean",
            Aggregation::Sum => "sum",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "mean" => Ok(Aggregation::Mean),
            "sum" => Ok(Aggregation::Sum),
            other => Err(Error::validation(format!("unknown aggregation '{other}'"))),
        }
    }
}

/// Context-free object utility.
pub trait ZerothUtility {
    fn utility(&self, x: ArrayView1<'_, f64>) -> Result<f64>;
}

/// Pairwise utility evaluated once per unordered pair.
pub trait PairUtility {
    /// Returns `(U1(xi, xj), U1(xj, xi))`.
    fn pair(&self, xi: ArrayView1<'_, f64>, xj: ArrayView1<'_, f64>) -> Result<(f64, f64)>;
}

/// `r[i][j]`: pairwise utility of object `i` in the presence of `j`; zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct PairRelation(pub Array2<f64>);

impl PairRelation {
    pub fn row_aggregate(&self, i: usize, aggregation: Aggregation) -> f64 {
        let n = self.0.nrows();
        self.0.row(i).sum() * aggregation.weight(n)
    }
}

/// Number of network rows evaluated while scoring one task.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalCount {
    pub zeroth: usize,
    pub pair: usize,
}

/// Relation from any pair scorer; one `pair` call per unordered pair.
pub fn relation_with<P: PairUtility + ?Sized>(pair: &P, task: &ChoiceTask) -> Result<PairRelation> {
    let n = task.len();
    if n < 2 {
        return Ok(PairRelation(Array2::zeros((1, 1))));
    }
    let mut r = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let order = pair_order(task, i, j);
            let (lo, hi) = if order == Ordering::Greater { (j, i) } else { (i, j) };
            let heads = pair.pair(task.object(lo), task.object(hi))?;
            (r[[i, j]], r[[j, i]]) = scatter_heads(order, heads);
        }
    }
    Ok(PairRelation(r))
}

/// Lexicographic order of objects `i` and `j`. The pair network always sees
/// the smaller object first, so the relation does not depend on task order.
fn pair_order(task: &ChoiceTask, i: usize, j: usize) -> Ordering {
    task.object(i)
        .iter()
        .zip(task.object(j).iter())
        .map(|(a, b)| a.total_cmp(b))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// `(r[i][j], r[j][i])` from the heads evaluated on the ordered input.
/// Identical objects get the mean of both heads, keeping them exchangeable.
fn scatter_heads(order: Ordering, (plus, minus): (f64, f64)) -> (f64, f64) {
    match order {
        Ordering::Less => (plus, minus),
        Ordering::Greater => (minus, plus),
        Ordering::Equal => {
            let m = 0.5 * (plus + minus);
            (m, m)
        }
    }
}

/// Gradients of the two heads given `dL/dr[i][j]` and `dL/dr[j][i]`.
fn gather_heads(order: Ordering, gij: f64, gji: f64) -> (f64, f64) {
    match order {
        Ordering::Less => (gij, gji),
        Ordering::Greater => (gji, gij),
        Ordering::Equal => {
            let m = 0.5 * (gij + gji);
            (m, m)
        }
    }
}

/// Scores from any zeroth/pair scorer pair.
pub fn scores_with<Z, P>(zeroth: &Z, pair: &P, task: &ChoiceTask, aggregation: Aggregation) -> Result<ScoreVector>
where
    Z: ZerothUtility + ?Sized,
    P: PairUtility + ?Sized,
{
    let relation = relation_with(pair, task)?;
    (0..task.len())
        .map(|i| {
            let base = zeroth.utility(task.object(i))?;
            let context = if task.len() > 1 {
                relation.row_aggregate(i, aggregation)
            } else {
                0.0
            };
            Ok(base + context)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FetaModel {
    zeroth: DenseNet,
    pair: DenseNet,
    pub aggregation: Aggregation,
    /// Slope of the logistic link used when training with binary cross-entropy.
    pub link_scale: f64,
    pub threshold: f64,
    pub comparison: Comparison,
    /// Task size seen in training, if any.
    pub train_size: Option<usize>,
}

pub const DEFAULT_LINK_SCALE: f64 = 100.0;

/// Row index of pair `(i, j)`, `i < j`, in the row-major upper triangle.
fn pair_index(n: usize, i: usize, j: usize) -> usize {
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

fn pair_inputs(task: &ChoiceTask) -> Array2<f64> {
    let (n, d) = (task.len(), task.dim());
    let rows = n * n.saturating_sub(1) / 2;
    let mut out = Array2::zeros((rows, 2 * d));
    let mut k = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let (lo, hi) = if pair_order(task, i, j) == Ordering::Greater { (j, i) } else { (i, j) };
            let mut row = out.row_mut(k);
            row.slice_mut(ndarray::s![..d]).assign(&task.object(lo));
            row.slice_mut(ndarray::s![d..]).assign(&task.object(hi));
            k += 1;
        }
    }
    out
}

impl FetaModel {
    pub fn new(zeroth: DenseNet, pair: DenseNet, aggregation: Aggregation) -> Result<Self> {
        if zeroth.output_dim() != 1 {
            return Err(Error::shape("zeroth-order network must have one output"));
        }
        if pair.output_dim() != 2 {
            return Err(Error::shape("pairwise network must have exactly two outputs"));
        }
        if pair.input_dim() != 2 * zeroth.input_dim() {
            return Err(Error::shape("pairwise network input must be twice the feature dimension"));
        }
        Ok(Self {
            zeroth,
            pair,
            aggregation,
            link_scale: DEFAULT_LINK_SCALE,
            threshold: 0.5 * aggregation.score_range(2),
            comparison: Comparison::Gt,
            train_size: None,
        })
    }

    /// Randomly initialised model with sigmoid heads.
    pub fn init(dim: usize, cfg: &TrainConfig, aggregation: Aggregation, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let zeroth = DenseNet::mlp(dim, cfg.hidden_layers, cfg.units, 1, Activation::Sigmoid, cfg.l2, &mut rng)?;
        let pair = DenseNet::mlp(2 * dim, cfg.hidden_layers, cfg.units, 2, Activation::Sigmoid, cfg.l2, &mut rng)?;
        Self::new(zeroth, pair, aggregation)
    }

    pub fn zeroth_net(&self) -> &DenseNet {
        &self.zeroth
    }

    pub fn pair_net(&self) -> &DenseNet {
        &self.pair
    }

    pub fn dim(&self) -> usize {
        self.zeroth.input_dim()
    }

    fn check_task(&self, task: &ChoiceTask) -> Result<()> {
        if task.dim() != self.dim() {
            return Err(Error::shape(format!(
                "model expects {}-dimensional objects, task has {}",
                self.dim(),
                task.dim()
            )));
        }
        if task.is_empty() {
            return Err(Error::validation("task has no objects"));
        }
        Ok(())
    }

    pub fn pairwise_relation(&self, task: &ChoiceTask) -> Result<PairRelation> {
        self.check_task(task)?;
        let n = task.len();
        if n < 2 {
            return Ok(PairRelation(Array2::zeros((1, 1))));
        }
        let out = self.pair.forward_batch(pair_inputs(task).view())?;
        let mut r = Array2::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                let k = pair_index(n, i, j);
                (r[[i, j]], r[[j, i]]) = scatter_heads(pair_order(task, i, j), (out[[k, 0]], out[[k, 1]]));
            }
        }
        Ok(PairRelation(r))
    }

    pub fn zeroth_utilities(&self, task: &ChoiceTask) -> Result<Vec<f64>> {
        self.check_task(task)?;
        Ok(self.zeroth.forward_batch(task.objects())?.column(0).to_vec())
    }

    /// Scores together with the number of rows pushed through each network.
    pub fn scores_traced(&self, task: &ChoiceTask) -> Result<(ScoreVector, EvalCount)> {
        let u0 = self.zeroth_utilities(task)?;
        let n = task.len();
        let count = EvalCount {
            zeroth: n,
            pair: n * n.saturating_sub(1) / 2,
        };
        if n == 1 {
            return Ok((u0, count));
        }
        let relation = self.pairwise_relation(task)?;
        let scores = u0
            .iter()
            .enumerate()
            .map(|(i, u)| u + relation.row_aggregate(i, self.aggregation))
            .collect();
        Ok((scores, count))
    }

    /// Mean task loss plus L2 penalty, with gradients for both networks.
    pub fn objective(&self, batch: &[&Instance], loss: LossKind) -> Result<(f64, Gradients, Gradients)> {
        batch_objective(&self.zeroth, &self.pair, self.aggregation, self.link_scale, batch, loss)
    }

    pub fn write_checkpoint(&self, ckpt: &mut Checkpoint) {
        ckpt.put_meta("model", "feta");
        ckpt.put_meta("aggregation", self.aggregation.name());
        ckpt.put_meta("threshold", self.threshold);
        ckpt.put_meta("comparison", self.comparison.name());
        ckpt.put_meta("link_scale", self.link_scale);
        ckpt.put_meta("dim", self.dim());
        if let Some(n) = self.train_size {
            ckpt.put_meta("train_size", n);
        }
        self.zeroth.write_checkpoint(ckpt, "zeroth/");
        self.pair.write_checkpoint(ckpt, "pair/");
    }

    pub fn read_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let zeroth = DenseNet::read_checkpoint(ckpt, "zeroth/")?;
        let pair = DenseNet::read_checkpoint(ckpt, "pair/")?;
        let mut model = Self::new(zeroth, pair, Aggregation::from_name(ckpt.meta("aggregation")?)?)?;
        model.threshold = ckpt.meta_f64("threshold")?;
        model.link_scale = ckpt.meta_f64("link_scale")?;
        model.comparison = Comparison::from_name(ckpt.meta("comparison")?)?;
        model.train_size = ckpt.meta_usize("train_size").ok();
        if ckpt.meta_usize("dim")? != model.dim() {
            return Err(Error::shape("checkpoint dim disagrees with network input"));
        }
        Ok(model)
    }
}

impl ChoiceModel for FetaModel {
    fn name(&self) -> &'static str {
        "feta"
    }

    fn scores(&self, task: &ChoiceTask) -> Result<ScoreVector> {
        Ok(self.scores_traced(task)?.0)
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }

    fn set_threshold(&mut self, t: f64) {
        self.threshold = t;
    }

    fn comparison(&self) -> Comparison {
        self.comparison
    }
}

/// Probability fed to binary cross-entropy: a logistic curve of slope
/// `link_scale` centred on the middle of the score range.
pub fn link_probability(score: f64, range: f64, link_scale: f64) -> f64 {
    crate::nnet::sigmoid(link_logit(score, range, link_scale))
}

fn link_logit(score: f64, range: f64, link_scale: f64) -> f64 {
    link_scale * (score / range - 0.5)
}

fn batch_objective(
    zeroth: &DenseNet,
    pair: &DenseNet,
    aggregation: Aggregation,
    link_scale: f64,
    batch: &[&Instance],
    loss: LossKind,
) -> Result<(f64, Gradients, Gradients)> {
    let first = batch
        .first()
        .ok_or_else(|| Error::validation("empty batch"))?;
    let (n, d) = (first.task.len(), first.task.dim());
    if batch.iter().any(|i| i.task.len() != n) {
        return Err(Error::validation("batch tasks must share one size"));
    }
    let pairs = n * n.saturating_sub(1) / 2;
    let b = batch.len();

    let mut zin = Array2::zeros((b * n, d));
    for (t, inst) in batch.iter().enumerate() {
        zin.slice_mut(ndarray::s![t * n..(t + 1) * n, ..])
            .assign(&inst.task.objects());
    }
    let zcache = zeroth.forward_cached(zin.view())?;
    let pcache = if pairs > 0 {
        let mut pin = Array2::zeros((b * pairs, 2 * d));
        for (t, inst) in batch.iter().enumerate() {
            pin.slice_mut(ndarray::s![t * pairs..(t + 1) * pairs, ..])
                .assign(&pair_inputs(&inst.task));
        }
        Some(pair.forward_cached(pin.view())?)
    } else {
        None
    };

    let w = aggregation.weight(n);
    let range = aggregation.score_range(n);
    let inv_b = 1.0 / b as f64;
    let mut dz = Array2::zeros((b * n, 1));
    let mut dp = Array2::zeros((b * pairs, 2));
    let mut total = 0.0;
    for (t, inst) in batch.iter().enumerate() {
        let u0 = zcache.output().slice(ndarray::s![t * n..(t + 1) * n, 0]).to_owned();
        let mut scores = u0.to_vec();
        if let Some(pc) = &pcache {
            let out = pc.output();
            for i in 0..n {
                for j in (i + 1)..n {
                    let k = t * pairs + pair_index(n, i, j);
                    let (rij, rji) = scatter_heads(pair_order(&inst.task, i, j), (out[[k, 0]], out[[k, 1]]));
                    scores[i] += w * rij;
                    scores[j] += w * rji;
                }
            }
        }
        let (l, g) = if loss.wants_probabilities() {
            let z: Vec<f64> = scores.iter().map(|&s| link_logit(s, range, link_scale)).collect();
            let (l, g) = binary_cross_entropy_logits(&inst.label, &z)?;
            (l, g.iter().map(|g| g * link_scale / range).collect())
        } else {
            loss.evaluate(&inst.label, &scores)?
        };
        total += l;
        for i in 0..n {
            dz[[t * n + i, 0]] = g[i] * inv_b;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let k = t * pairs + pair_index(n, i, j);
                let (g0, g1) = gather_heads(pair_order(&inst.task, i, j), g[i], g[j]);
                dp[[k, 0]] = g0 * w * inv_b;
                dp[[k, 1]] = g1 * w * inv_b;
            }
        }
    }
    let (gz, _) = zeroth.backward(&zcache, dz.view())?;
    let gp = match &pcache {
        Some(pc) => pair.backward(pc, dp.view())?.0,
        None => {
            // no pairs: only the L2 term reaches the pairwise network
            let mut g = Gradients::zeros_like(pair);
            for (gl, l) in g.layers.iter_mut().zip(pair.layers()) {
                gl.weights.scaled_add(pair.l2(), &l.weights);
                gl.bias.scaled_add(pair.l2(), &l.bias);
            }
            g
        }
    };
    let value = total * inv_b + zeroth.l2_penalty() + pair.l2_penalty();
    Ok((value, gz, gp))
}

/// Trains both networks jointly with Nesterov SGD on tasks of one size.
pub fn train_feta(data: &Dataset, cfg: &TrainConfig, aggregation: Aggregation) -> Result<FetaModel> {
    cfg.validate()?;
    let loss = cfg.loss_for(data.kind);
    let (n, d) = check_training_set(data, loss)?;
    let mut model = FetaModel::init(d, cfg, aggregation, cfg.seed)?;
    model.train_size = Some(n);
    model.link_scale = cfg.link_scale;
    model.threshold = 0.5 * aggregation.score_range(n);
    let mut opt_z = OptimizerState::new(&model.zeroth, cfg.schedule(), cfg.momentum)?;
    let mut opt_p = OptimizerState::new(&model.pair, cfg.schedule(), cfg.momentum)?;
    let mut rng = stream_rng(cfg.seed, SHUFFLE_STREAM);
    for epoch in 0..cfg.epochs {
        opt_z.epoch = epoch;
        opt_p.epoch = epoch;
        for batch in shuffled_batches(data.len(), cfg.batch_size, &mut rng) {
            let items: Vec<&Instance> = batch.iter().map(|&i| &data.instances[i]).collect();
            let look_z = opt_z.lookahead(&model.zeroth);
            let look_p = opt_p.lookahead(&model.pair);
            let (_, gz, gp) = batch_objective(&look_z, &look_p, aggregation, model.link_scale, &items, loss)?;
            opt_z.step(&mut model.zeroth, &gz)?;
            opt_p.step(&mut model.pair, &gp)?;
        }
        log::debug!("feta epoch {epoch} done");
    }
    Ok(model)
}
