#![allow(dead_code)]

pub mod gradcheck;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use setchoice::fate::{Embedding, JointUtility};
use setchoice::feta::{PairUtility, ZerothUtility};
use setchoice::{ChoiceLabel, ChoiceTask, Error, Instance, Result};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Objects a, b, c, d encoded as scalar ids 0..4.
pub fn ids(v: &[usize]) -> ChoiceTask {
    ChoiceTask::from_rows(&v.iter().map(|&x| vec![x as f64]).collect::<Vec<_>>()).unwrap()
}

/// Lookup tables for the four-object FETA example.
pub struct FetaTables {
    pub u0: [f64; 4],
    pub u1: [[f64; 4]; 4],
}

pub fn feta_example() -> FetaTables {
    FetaTables {
        u0: [0.1, 0.2, 0.2, 0.1],
        u1: [
            [0.0, 0.6, 0.4, 0.0],
            [0.0, 0.0, 0.6, 0.7],
            [0.3, 0.0, 0.0, 0.2],
            [0.5, 0.0, 0.4, 0.0],
        ],
    }
}

impl ZerothUtility for FetaTables {
    fn utility(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        Ok(self.u0[x[0] as usize])
    }
}

impl PairUtility for FetaTables {
    fn pair(&self, xi: ArrayView1<'_, f64>, xj: ArrayView1<'_, f64>) -> Result<(f64, f64)> {
        let (i, j) = (xi[0] as usize, xj[0] as usize);
        Ok((self.u1[i][j], self.u1[j][i]))
    }
}

/// Scalar embeddings a=1, b=2, c=3, d=6 and utilities keyed on the context mean.
pub struct FateExample;

impl Embedding for FateExample {
    fn embed(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        Ok(Array1::from(vec![[1.0, 2.0, 3.0, 6.0][x[0] as usize]]))
    }
}

impl JointUtility for FateExample {
    fn utility(&self, x: ArrayView1<'_, f64>, mu: ArrayView1<'_, f64>) -> Result<f64> {
        let table = [[1.0, 0.5], [0.5, 1.0], [0.3, 0.3], [0.2, 0.2]];
        let col = match mu[0] {
            v if v == 2.0 => 0,
            v if v == 3.0 => 1,
            other => return Err(Error::Domain(format!("no column for {other}"))),
        };
        Ok(table[x[0] as usize][col])
    }
}

pub fn random_task<R: Rng>(rng: &mut R, n: usize, d: usize) -> ChoiceTask {
    let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    ChoiceTask::new(x).unwrap()
}

/// Random label; one-hot when `one_hot`, otherwise independent bits.
pub fn random_label<R: Rng>(rng: &mut R, n: usize, one_hot: bool) -> ChoiceLabel {
    if one_hot {
        ChoiceLabel::one_hot(n, rng.random_range(0..n))
    } else {
        ChoiceLabel::new((0..n).map(|_| rng.random_bool(0.5)).collect())
    }
}

pub fn random_instance<R: Rng>(rng: &mut R, n: usize, d: usize, one_hot: bool) -> Instance {
    let task = random_task(rng, n, d);
    Instance::new(task, random_label(rng, n, one_hot)).unwrap()
}

fn central(f: &impl Fn(&[f64]) -> f64, probe: &mut [f64], k: usize, h: f64) -> f64 {
    let x = probe[k];
    probe[k] = x + h;
    let up = f(probe);
    probe[k] = x - h;
    let down = f(probe);
    probe[k] = x;
    (up - down) / (2.0 * h)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Largest relative error between `grad` and central differences of `f`, or
/// `None` when a kink lies within the stencil of some coordinate (central
/// differences at `h` and `h/10` disagree).
pub fn max_fd_error(f: impl Fn(&[f64]) -> f64, theta: &[f64], grad: &[f64], h: f64) -> Option<f64> {
    assert_eq!(theta.len(), grad.len());
    let mut worst: f64 = 0.0;
    let mut probe = theta.to_vec();
    for k in 0..theta.len() {
        let coarse = central(&f, &mut probe, k, h);
        let fine = central(&f, &mut probe, k, h / 10.0);
        if rel(coarse, fine) > 1e-3 {
            return None;
        }
        worst = worst.max(rel(coarse, grad[k]));
    }
    Some(worst)
}
