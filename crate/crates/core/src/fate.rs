//! First-aggregate-then-evaluate scoring.
//!
//! Every object is embedded by a shared network; the embeddings of a task
//! are averaged into one context representative, and a joint network scores
//! each object concatenated with that representative.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::model::ChoiceModel;
use crate::nnet::{Activation, DenseNet, Gradients, OptimizerState};
use crate::train::{check_training_set, shuffled_batches, stream_rng, TrainConfig, SHUFFLE_STREAM};
use crate::types::{ChoiceTask, Comparison, Dataset, Instance, ScoreVector};

/// Object embedding into the context space.
pub trait Embedding {
    fn embed(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>>;
}

/// Utility of an object given a context representative.
pub trait JointUtility {
    fn utility(&self, x: ArrayView1<'_, f64>, context: ArrayView1<'_, f64>) -> Result<f64>;
}

/// Mean embedding over the context of object `exclude` (or over the whole
/// task when `exclude` is `None`).
pub fn context_representative_with<E: Embedding + ?Sized>(
    embedding: &E,
    task: &ChoiceTask,
    exclude: Option<usize>,
) -> Result<Array1<f64>> {
    let members: Vec<usize> = (0..task.len()).filter(|&k| Some(k) != exclude).collect();
    if members.is_empty() {
        return Err(Error::Domain("context is empty".into()));
    }
    let mut sum: Option<Array1<f64>> = None;
    for &k in &members {
        let e = embedding.embed(task.object(k))?;
        sum = Some(match sum {
            Some(acc) => acc + &e,
            None => e,
        });
    }
    Ok(sum.expect("members nonempty") / members.len() as f64)
}

pub fn scores_with<E, J>(embedding: &E, joint: &J, task: &ChoiceTask, self_in_context: bool) -> Result<ScoreVector>
where
    E: Embedding + ?Sized,
    J: JointUtility + ?Sized,
{
    if self_in_context {
        let mu = context_representative_with(embedding, task, None)?;
        (0..task.len())
            .map(|i| joint.utility(task.object(i), mu.view()))
            .collect()
    } else {
        (0..task.len())
            .map(|i| {
                let mu = context_representative_with(embedding, task, Some(i))?;
                joint.utility(task.object(i), mu.view())
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalCount {
    pub embed: usize,
    pub joint: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FateModel {
    embed: DenseNet,
    joint: DenseNet,
    pub threshold: f64,
    pub comparison: Comparison,
    pub self_in_context: bool,
    pub train_size: Option<usize>,
}

impl FateModel {
    pub fn new(embed: DenseNet, joint: DenseNet, self_in_context: bool) -> Result<Self> {
        if joint.output_dim() != 1 {
            return Err(Error::shape("joint network must have one output"));
        }
        if joint.input_dim() != embed.input_dim() + embed.output_dim() {
            return Err(Error::shape(
                "joint network input must equal feature dim plus embedding dim",
            ));
        }
        Ok(Self {
            embed,
            joint,
            threshold: 0.5,
            comparison: Comparison::Gt,
            self_in_context,
            train_size: None,
        })
    }

    /// Embedding stack of `hidden_layers` ReLU layers ending in an
    /// `embedding_dim` ReLU layer; joint stack with a sigmoid head.
    pub fn init(
        dim: usize,
        embedding_dim: usize,
        cfg: &TrainConfig,
        self_in_context: bool,
        seed: u64,
    ) -> Result<Self> {
        if embedding_dim == 0 {
            return Err(Error::validation("embedding dimension must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![dim];
        sizes.extend(std::iter::repeat_n(cfg.units, cfg.hidden_layers));
        sizes.push(embedding_dim);
        let embed = DenseNet::init(&sizes, Activation::Relu, Activation::Relu, cfg.l2, &mut rng)?;
        let joint = DenseNet::mlp(
            dim + embedding_dim,
            cfg.hidden_layers,
            cfg.units,
            1,
            Activation::Sigmoid,
            cfg.l2,
            &mut rng,
        )?;
        Self::new(embed, joint, self_in_context)
    }

    pub fn embed_net(&self) -> &DenseNet {
        &self.embed
    }

    pub fn joint_net(&self) -> &DenseNet {
        &self.joint
    }

    pub fn dim(&self) -> usize {
        self.embed.input_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.embed.output_dim()
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
        if !self.self_in_context && task.len() < 2 {
            return Err(Error::Domain(
                "leave-one-out context of a single object is empty".into(),
            ));
        }
        Ok(())
    }

    /// Representative of the context of object `i`; with `self_in_context`
    /// the index is ignored and the task-wide mean is returned.
    pub fn context_representative(&self, task: &ChoiceTask, i: Option<usize>) -> Result<Array1<f64>> {
        self.check_task(task)?;
        let e = self.embed.forward_batch(task.objects())?;
        let n = task.len();
        let sum = e.sum_axis(Axis(0));
        match (self.self_in_context, i) {
            (true, _) | (false, None) => Ok(sum / n as f64),
            (false, Some(i)) => Ok((sum - e.row(i)) / (n - 1) as f64),
        }
    }

    pub fn scores_traced(&self, task: &ChoiceTask) -> Result<(ScoreVector, EvalCount)> {
        self.check_task(task)?;
        let (n, d, m) = (task.len(), self.dim(), self.embedding_dim());
        let e = self.embed.forward_batch(task.objects())?;
        let sum = e.sum_axis(Axis(0));
        let mut input = Array2::zeros((n, d + m));
        input.slice_mut(s![.., ..d]).assign(&task.objects());
        if self.self_in_context {
            let mu = &sum / n as f64;
            for mut row in input.slice_mut(s![.., d..]).rows_mut() {
                row.assign(&mu);
            }
        } else {
            for i in 0..n {
                let mu = (&sum - &e.row(i)) / (n - 1) as f64;
                input.slice_mut(s![i, d..]).assign(&mu);
            }
        }
        let out = self.joint.forward_batch(input.view())?;
        Ok((out.column(0).to_vec(), EvalCount { embed: n, joint: n }))
    }

    pub fn objective(&self, batch: &[&Instance], loss: LossKind) -> Result<(f64, Gradients, Gradients)> {
        batch_objective(&self.embed, &self.joint, self.self_in_context, batch, loss)
    }

    pub fn write_checkpoint(&self, ckpt: &mut Checkpoint) {
        ckpt.put_meta("model", "fate");
        ckpt.put_meta("threshold", self.threshold);
        ckpt.put_meta("comparison", self.comparison.name());
        ckpt.put_meta("self_in_context", self.self_in_context);
        ckpt.put_meta("embedding_dim", self.embedding_dim());
        ckpt.put_meta("dim", self.dim());
        if let Some(n) = self.train_size {
            ckpt.put_meta("train_size", n);
        }
        self.embed.write_checkpoint(ckpt, "embed/");
        self.joint.write_checkpoint(ckpt, "joint/");
    }

    pub fn read_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let embed = DenseNet::read_checkpoint(ckpt, "embed/")?;
        let joint = DenseNet::read_checkpoint(ckpt, "joint/")?;
        let self_in_context = match ckpt.meta("self_in_context")? {
            "true" => true,
            "false" => false,
            other => return Err(Error::validation(format!("bad self_in_context '{other}'"))),
        };
        let mut model = Self::new(embed, joint, self_in_context)?;
        model.threshold = ckpt.meta_f64("threshold")?;
        model.comparison = Comparison::from_name(ckpt.meta("comparison")?)?;
        model.train_size = ckpt.meta_usize("train_size").ok();
        if ckpt.meta_usize("embedding_dim")? != model.embedding_dim() || ckpt.meta_usize("dim")? != model.dim() {
            return Err(Error::shape("checkpoint metadata disagrees with networks"));
        }
        Ok(model)
    }
}

impl ChoiceModel for FateModel {
    fn name(&self) -> &'static str {
        "fate"
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

fn batch_objective(
    embed: &DenseNet,
    joint: &DenseNet,
    self_in_context: bool,
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
    if !self_in_context && n < 2 {
        return Err(Error::Domain("leave-one-out context of a single object is empty".into()));
    }
    let m = embed.output_dim();
    let b = batch.len();

    let mut x = Array2::zeros((b * n, d));
    for (t, inst) in batch.iter().enumerate() {
        x.slice_mut(s![t * n..(t + 1) * n, ..]).assign(&inst.task.objects());
    }
    let ecache = embed.forward_cached(x.view())?;
    let e = ecache.output();

    let mut jin = Array2::zeros((b * n, d + m));
    jin.slice_mut(s![.., ..d]).assign(&x);
    let mut sums = Vec::with_capacity(b);
    for t in 0..b {
        let block = e.slice(s![t * n..(t + 1) * n, ..]);
        let sum = block.sum_axis(Axis(0));
        for i in 0..n {
            let mu = if self_in_context {
                &sum / n as f64
            } else {
                (&sum - &block.row(i)) / (n - 1) as f64
            };
            jin.slice_mut(s![t * n + i, d..]).assign(&mu);
        }
        sums.push(sum);
    }
    let jcache = joint.forward_cached(jin.view())?;

    let inv_b = 1.0 / b as f64;
    let mut dj = Array2::zeros((b * n, 1));
    let mut total = 0.0;
    for (t, inst) in batch.iter().enumerate() {
        let scores = jcache.output().slice(s![t * n..(t + 1) * n, 0]).to_vec();
        let (l, g) = loss.evaluate(&inst.label, &scores)?;
        total += l;
        for i in 0..n {
            dj[[t * n + i, 0]] = g[i] * inv_b;
        }
    }
    let (gj, djin) = joint.backward(&jcache, dj.view())?;

    // Distribute each representative's gradient back onto the embeddings.
    let gmu = djin.slice(s![.., d..]);
    let mut de = Array2::zeros((b * n, m));
    for t in 0..b {
        let block = gmu.slice(s![t * n..(t + 1) * n, ..]);
        let total_g = block.sum_axis(Axis(0));
        for k in 0..n {
            let row = if self_in_context {
                &total_g / n as f64
            } else {
                (&total_g - &block.row(k)) / (n - 1) as f64
            };
            de.slice_mut(s![t * n + k, ..]).assign(&row);
        }
    }
    let (ge, _) = embed.backward(&ecache, de.view())?;
    let value = total * inv_b + embed.l2_penalty() + joint.l2_penalty();
    Ok((value, ge, gj))
}

/// Trains embedding and joint networks end to end on tasks of one size.
pub fn train_fate(data: &Dataset, cfg: &TrainConfig, embedding_dim: usize, self_in_context: bool) -> Result<FateModel> {
    cfg.validate()?;
    let loss = cfg.loss_for(data.kind);
    let (n, d) = check_training_set(data, loss)?;
    let mut model = FateModel::init(d, embedding_dim, cfg, self_in_context, cfg.seed)?;
    model.train_size = Some(n);
    let mut opt_e = OptimizerState::new(&model.embed, cfg.schedule(), cfg.momentum)?;
    let mut opt_j = OptimizerState::new(&model.joint, cfg.schedule(), cfg.momentum)?;
    let mut rng = stream_rng(cfg.seed, SHUFFLE_STREAM);
    for epoch in 0..cfg.epochs {
        opt_e.epoch = epoch;
        opt_j.epoch = epoch;
        for batch in shuffled_batches(data.len(), cfg.batch_size, &mut rng) {
            let items: Vec<&Instance> = batch.iter().map(|&i| &data.instances[i]).collect();
            let look_e = opt_e.lookahead(&model.embed);
            let look_j = opt_j.lookahead(&model.joint);
            let (_, ge, gj) = batch_objective(&look_e, &look_j, self_in_context, &items, loss)?;
            opt_e.step(&mut model.embed, &ge)?;
            opt_j.step(&mut model.joint, &gj)?;
        }
    }
    Ok(model)
}
