//! Context-free comparison models. Each scores an object on its own features
//! only, so the same object gets the same score in every task.

use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::losses::{softplus, LossKind};
use crate::model::ChoiceModel;
use crate::nnet::{sigmoid, Activation, DenseNet, Gradients, OptimizerState};
use crate::train::{shuffled_batches, stream_rng, TrainConfig, SHUFFLE_STREAM};
use crate::types::{ChoiceLabel, ChoiceTask, Comparison, Dataset, Instance, ScoreVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    /// Per-object logistic model trained with the task loss.
    GenLinear,
    /// Linear utility trained with a hinge on chosen-minus-unchosen scores.
    PairwiseLinear,
    /// Multilayer utility trained with the pairwise logistic loss.
    RankNet,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::GenLinear => "gen_linear",
            BaselineKind::PairwiseLinear => "pairwise_linear",
            BaselineKind::RankNet => "ranknet",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "gen_linear" => Ok(BaselineKind::GenLinear),
            "pairwise_linear" => Ok(BaselineKind::PairwiseLinear),
            "ranknet" => Ok(BaselineKind::RankNet),
            other => Err(Error::validation(format!("unknown baseline '{other}'"))),
        }
    }
}

/// Training signal for a single-object utility network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ObjectLoss {
    Task(LossKind),
    PairHinge,
    PairLogistic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtilityScorer {
    kind: BaselineKind,
    net: DenseNet,
    pub threshold: f64,
    pub comparison: Comparison,
}

impl UtilityScorer {
    pub fn new(kind: BaselineKind, net: DenseNet) -> Result<Self> {
        if net.output_dim() != 1 {
            return Err(Error::shape("utility network must have one output"));
        }
        if kind != BaselineKind::RankNet && net.layers().len() != 1 {
            return Err(Error::shape("linear baselines have a single layer"));
        }
        Ok(Self {
            kind,
            net,
            threshold: 0.5,
            comparison: Comparison::Gt,
        })
    }

    pub fn kind(&self) -> BaselineKind {
        self.kind
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Weight vector of a single-layer scorer.
    pub fn weights(&self) -> Option<ArrayView1<'_, f64>> {
        match self.net.layers() {
            [l] => Some(l.weights.row(0)),
            _ => None,
        }
    }

    pub fn bias(&self) -> Option<f64> {
        match self.net.layers() {
            [l] => Some(l.bias[0]),
            _ => None,
        }
    }

    pub fn utility(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        Ok(self.net.forward(x)?[0])
    }

    pub fn write_checkpoint(&self, ckpt: &mut Checkpoint) {
        ckpt.put_meta("model", self.kind.name());
        ckpt.put_meta("threshold", self.threshold);
        ckpt.put_meta("comparison", self.comparison.name());
        self.net.write_checkpoint(ckpt, "net/");
    }

    pub fn read_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let kind = BaselineKind::from_name(ckpt.meta("model")?)?;
        let mut model = Self::new(kind, DenseNet::read_checkpoint(ckpt, "net/")?)?;
        model.threshold = ckpt.meta_f64("threshold")?;
        model.comparison = Comparison::from_name(ckpt.meta("comparison")?)?;
        Ok(model)
    }
}

impl ChoiceModel for UtilityScorer {
    fn name(&self) -> &'static str {
        self.kind.name()
    }

    // One forward pass per object, so a score never depends on its neighbours
    // even through floating-point blocking.
    fn scores(&self, task: &ChoiceTask) -> Result<ScoreVector> {
        (0..task.len()).map(|i| self.utility(task.object(i))).collect()
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

/// Within-task (chosen, unchosen) index pairs.
pub fn preference_pairs(label: &ChoiceLabel) -> Vec<(usize, usize)> {
    let chosen = label.chosen();
    let rest: Vec<usize> = (0..label.len()).filter(|&i| !label.get(i)).collect();
    chosen
        .iter()
        .flat_map(|&p| rest.iter().map(move |&q| (p, q)))
        .collect()
}

/// Mean batch loss plus L2 penalty, with its gradient.
pub fn object_objective(net: &DenseNet, batch: &[&Instance], loss: ObjectLoss) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::validation("empty batch"));
    }
    let d = net.input_dim();
    let total: usize = batch.iter().map(|i| i.task.len()).sum();
    let mut x = Array2::zeros((total, d));
    let mut offsets = Vec::with_capacity(batch.len());
    let mut row = 0;
    for inst in batch {
        if inst.task.dim() != d {
            return Err(Error::shape("task dimension differs from the network input"));
        }
        offsets.push(row);
        for i in 0..inst.task.len() {
            x.row_mut(row + i).assign(&inst.task.object(i));
        }
        row += inst.task.len();
    }
    let cache = net.forward_cached(x.view())?;
    let s = cache.output().column(0).to_owned();
    let mut upstream = Array2::zeros((total, 1));
    let mut value = 0.0;

    match loss {
        ObjectLoss::Task(kind) => {
            let inv_b = 1.0 / batch.len() as f64;
            for (inst, &off) in batch.iter().zip(&offsets) {
                let n = inst.task.len();
                let scores = s.slice(ndarray::s![off..off + n]).to_vec();
                let (l, g) = kind.evaluate(&inst.label, &scores)?;
                value += l * inv_b;
                for i in 0..n {
                    upstream[[off + i, 0]] = g[i] * inv_b;
                }
            }
        }
        ObjectLoss::PairHinge | ObjectLoss::PairLogistic => {
            let pairs: Vec<(usize, usize)> = batch
                .iter()
                .zip(&offsets)
                .flat_map(|(inst, &off)| {
                    preference_pairs(&inst.label)
                        .into_iter()
                        .map(move |(p, q)| (off + p, off + q))
                })
                .collect();
            if !pairs.is_empty() {
                let inv_p = 1.0 / pairs.len() as f64;
                for (p, q) in pairs {
                    let delta = s[p] - s[q];
                    // dL/d(delta)
                    let g = if loss == ObjectLoss::PairHinge {
                        let margin = 1.0 - delta;
                        if margin > 0.0 {
                            value += margin * inv_p;
                            -1.0
                        } else {
                            0.0
                        }
                    } else {
                        value += softplus(-delta) * inv_p;
                        -sigmoid(-delta)
                    };
                    upstream[[p, 0]] += g * inv_p;
                    upstream[[q, 0]] -= g * inv_p;
                }
            }
        }
    }
    let (grads, _) = net.backward(&cache, upstream.view())?;
    Ok((value + net.l2_penalty(), grads))
}

fn check_baseline_data(data: &Dataset, loss: ObjectLoss) -> Result<usize> {
    let d = data
        .feature_dim()
        .ok_or_else(|| Error::validation("training set is empty"))?;
    if data.instances.iter().any(|i| i.task.dim() != d) {
        return Err(Error::shape("training tasks have inconsistent feature dimensions"));
    }
    if let ObjectLoss::Task(kind) = loss {
        if kind.is_categorical() && data.instances.iter().any(|i| i.label.hot_index().is_none()) {
            return Err(Error::validation(format!("{} needs one-hot labels", kind.name())));
        }
    }
    Ok(d)
}

/// Nesterov mini-batch training of a single-object network.
pub fn train_object_net(data: &Dataset, cfg: &TrainConfig, mut net: DenseNet, loss: ObjectLoss) -> Result<DenseNet> {
    cfg.validate()?;
    check_baseline_data(data, loss)?;
    let mut opt = OptimizerState::new(&net, cfg.schedule(), cfg.momentum)?;
    let mut rng = stream_rng(cfg.seed, SHUFFLE_STREAM);
    for epoch in 0..cfg.epochs {
        opt.epoch = epoch;
        for batch in shuffled_batches(data.len(), cfg.batch_size, &mut rng) {
            let items: Vec<&Instance> = batch.iter().map(|&i| &data.instances[i]).collect();
            let (_, g) = object_objective(&opt.lookahead(&net), &items, loss)?;
            opt.step(&mut net, &g)?;
        }
    }
    Ok(net)
}

fn linear_net(d: usize, head: Activation, l2: f64, seed: u64) -> Result<DenseNet> {
    DenseNet::init(&[d, 1], head, head, l2, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn train_gen_linear(data: &Dataset, cfg: &TrainConfig) -> Result<UtilityScorer> {
    let d = check_baseline_data(data, ObjectLoss::Task(cfg.loss_for(data.kind)))?;
    let net = linear_net(d, Activation::Sigmoid, cfg.l2, cfg.seed)?;
    let net = train_object_net(data, cfg, net, ObjectLoss::Task(cfg.loss_for(data.kind)))?;
    UtilityScorer::new(BaselineKind::GenLinear, net)
}

pub fn train_pairwise_linear(data: &Dataset, cfg: &TrainConfig) -> Result<UtilityScorer> {
    let d = check_baseline_data(data, ObjectLoss::PairHinge)?;
    let net = linear_net(d, Activation::Identity, cfg.l2, cfg.seed)?;
    let net = train_object_net(data, cfg, net, ObjectLoss::PairHinge)?;
    UtilityScorer::new(BaselineKind::PairwiseLinear, net)
}

pub fn train_ranknet(data: &Dataset, cfg: &TrainConfig) -> Result<UtilityScorer> {
    let d = check_baseline_data(data, ObjectLoss::PairLogistic)?;
    let net = DenseNet::mlp(
        d,
        cfg.hidden_layers,
        cfg.units,
        1,
        Activation::Identity,
        cfg.l2,
        &mut ChaCha8Rng::seed_from_u64(cfg.seed),
    )?;
    let net = train_object_net(data, cfg, net, ObjectLoss::PairLogistic)?;
    UtilityScorer::new(BaselineKind::RankNet, net)
}

/// Chooses every object.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AllPositive;

pub fn all_positive(task: &ChoiceTask) -> ChoiceLabel {
    ChoiceLabel::all(task.len(), true)
}

impl ChoiceModel for AllPositive {
    fn name(&self) -> &'static str {
        "all_positive"
    }

    fn scores(&self, task: &ChoiceTask) -> Result<ScoreVector> {
        Ok(vec![1.0; task.len()])
    }

    fn threshold(&self) -> f64 {
        f64::NEG_INFINITY
    }

    fn set_threshold(&mut self, _t: f64) {}

    fn comparison(&self) -> Comparison {
        Comparison::Gt
    }

    fn choose(&self, task: &ChoiceTask) -> Result<ChoiceLabel> {
        Ok(all_positive(task))
    }

    fn calibrate(&mut self, _held_out: &[Instance]) -> Result<f64> {
        Ok(f64::NEG_INFINITY)
    }
}

/// Uniform pseudo-random utility in [0, 1) keyed on the object's feature bits,
/// so it is reproducible and context-free.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RandomUtility {
    pub seed: u64,
    pub threshold: f64,
}

impl RandomUtility {
    pub fn new(seed: u64) -> Self {
        Self { seed, threshold: 0.5 }
    }

    pub fn utility(&self, x: ArrayView1<'_, f64>) -> f64 {
        // splitmix64 over the feature bits
        let mut h = self.seed ^ 0x9e37_79b9_7f4a_7c15;
        for v in x.iter() {
            h ^= v.to_bits();
            h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut z = h;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            h = z ^ (z >> 31);
        }
        (h >> 11) as f64 / (1u64 << 53) as f64
    }
}

impl ChoiceModel for RandomUtility {
    fn name(&self) -> &'static str {
        "random"
    }

    fn scores(&self, task: &ChoiceTask) -> Result<ScoreVector> {
        Ok((0..task.len()).map(|i| self.utility(task.object(i))).collect())
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }

    fn set_threshold(&mut self, t: f64) {
        self.threshold = t;
    }

    fn comparison(&self) -> Comparison {
        Comparison::Gt
    }
}
