//! Finite-difference checks of the FETA and FATE training objectives.

use rand::Rng;
use setchoice::fate::FateModel;
use setchoice::feta::{Aggregation, FetaModel};
use setchoice::losses::LossKind;
use setchoice::nnet::DenseNet;
use setchoice::train::TrainConfig;
use setchoice::{ChoiceModel, Instance};

use super::{max_fd_error, random_instance, rng};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const INSTANCES: usize = 20;

fn small_cfg() -> TrainConfig {
    TrainConfig {
        hidden_layers: 1,
        units: 5,
        l2: 1e-3,
        ..TrainConfig::default()
    }
}

/// Moves parameters off the exact-zero biases of a fresh init, where a
/// fully inactive ReLU layer would put later units right on their kink.
fn jitter(net: &DenseNet, r: &mut rand_chacha::ChaCha8Rng) -> DenseNet {
    let mut out = net.clone();
    let theta: Vec<f64> = net.flatten().iter().map(|v| v + r.random_range(-0.1..0.1)).collect();
    out.set_flat(&theta).unwrap();
    out
}

fn split(nets: [&DenseNet; 2], theta: &[f64]) -> (DenseNet, DenseNet) {
    let (mut a, mut b) = (nets[0].clone(), nets[1].clone());
    let k = a.parameter_count();
    a.set_flat(&theta[..k]).unwrap();
    b.set_flat(&theta[k..]).unwrap();
    (a, b)
}

/// Hinge losses are not differentiable where a margin is exactly zero or
/// the rival is tied; such draws are skipped, as are draws with a ReLU kink
/// inside the difference stencil.
fn near_kink(loss: LossKind, scores: &[f64], inst: &Instance) -> bool {
    let Some(hot) = inst.label.hot_index() else {
        return false;
    };
    let margins: Vec<f64> = (0..scores.len())
        .filter(|&i| i != hot)
        .map(|i| 1.0 + scores[i] - scores[hot])
        .collect();
    match loss {
        LossKind::CategoricalHingeSum => margins.iter().any(|m| m.abs() < 1e-4),
        LossKind::CategoricalHingeMax => {
            let mut sorted = margins.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            sorted[0].abs() < 1e-4 || (sorted.len() > 1 && sorted[0] - sorted[1] < 1e-4)
        }
        _ => false,
    }
}

/// Draws batches of one or two random tasks until `INSTANCES` kink-free
/// checks have run; returns the worst relative error.
fn check<M: ChoiceModel>(
    seed: u64,
    loss: LossKind,
    build: impl Fn(&mut rand_chacha::ChaCha8Rng, usize) -> M,
    objective: impl Fn(&M, &[&Instance], Option<&[f64]>) -> (f64, Vec<f64>, Vec<f64>),
) -> f64 {
    let mut r = rng(seed);
    let (mut checked, mut worst) = (0, 0.0f64);
    for _ in 0..10 * INSTANCES {
        if checked == INSTANCES {
            break;
        }
        let d = r.random_range(1..=3);
        let n = r.random_range(2..=5);
        let model = build(&mut r, d);
        let batch: Vec<Instance> = (0..r.random_range(1..=2))
            .map(|_| random_instance(&mut r, n, d, loss.is_categorical()))
            .collect();
        if batch
            .iter()
            .any(|i| near_kink(loss, &model.scores(&i.task).unwrap(), i))
        {
            continue;
        }
        let refs: Vec<&Instance> = batch.iter().collect();
        let (_, theta, grad) = objective(&model, &refs, None);
        let Some(err) = max_fd_error(|t| objective(&model, &refs, Some(t)).0, &theta, &grad, H) else {
            continue;
        };
        worst = worst.max(err);
        checked += 1;
    }
    assert_eq!(checked, INSTANCES, "too many draws landed on kinks");
    worst
}

fn feta_init(r: &mut rand_chacha::ChaCha8Rng, d: usize, agg: Aggregation) -> FetaModel {
    let m = FetaModel::init(d, &small_cfg(), agg, r.random()).unwrap();
    FetaModel::new(jitter(m.zeroth_net(), r), jitter(m.pair_net(), r), agg).unwrap()
}

/// `(value, theta, grad)` of a FETA model, optionally at replaced parameters.
fn feta_objective(m: &FetaModel, batch: &[&Instance], loss: LossKind, theta: Option<&[f64]>) -> (f64, Vec<f64>, Vec<f64>) {
    let model = match theta {
        Some(t) => {
            let (z, p) = split([m.zeroth_net(), m.pair_net()], t);
            let mut fresh = FetaModel::new(z, p, m.aggregation).unwrap();
            fresh.link_scale = m.link_scale;
            fresh
        }
        None => m.clone(),
    };
    let (v, gz, gp) = model.objective(batch, loss).unwrap();
    let mut theta = model.zeroth_net().flatten();
    theta.extend(model.pair_net().flatten());
    let mut grad = gz.flatten();
    grad.extend(gp.flatten());
    (v, theta, grad)
}

fn fate_objective(m: &FateModel, batch: &[&Instance], loss: LossKind, theta: Option<&[f64]>) -> (f64, Vec<f64>, Vec<f64>) {
    let model = match theta {
        Some(t) => {
            let (e, j) = split([m.embed_net(), m.joint_net()], t);
            FateModel::new(e, j, m.self_in_context).unwrap()
        }
        None => m.clone(),
    };
    let (v, ge, gj) = model.objective(batch, loss).unwrap();
    let mut theta = model.embed_net().flatten();
    theta.extend(model.joint_net().flatten());
    let mut grad = ge.flatten();
    grad.extend(gj.flatten());
    (v, theta, grad)
}

/// Worst relative gradient error of FETA with the given link scale
/// (the model default when `None`).
pub fn feta_worst(seed: u64, loss: LossKind, agg: Aggregation, link_scale: Option<f64>) -> f64 {
    check(
        seed,
        loss,
        |r, d| {
            let mut m = feta_init(r, d, agg);
            if let Some(k) = link_scale {
                m.link_scale = k;
            }
            m
        },
        |m, b, t| feta_objective(m, b, loss, t),
    )
}

pub fn fate_worst(seed: u64, loss: LossKind, self_in_context: bool) -> f64 {
    check(
        seed,
        loss,
        |r, d| {
            let m = FateModel::init(d, 3, &small_cfg(), self_in_context, r.random()).unwrap();
            FateModel::new(jitter(m.embed_net(), r), jitter(m.joint_net(), r), self_in_context).unwrap()
        },
        |m, b, t| fate_objective(m, b, loss, t),
    )
}
