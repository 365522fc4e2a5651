//! Task-level training losses with their gradients w.r.t. the score vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ChoiceLabel;

/// Clipping applied to probabilities before taking logarithms.
pub const PROB_EPSILON: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    BinaryCrossEntropy,
    CategoricalCrossEntropy,
    CategoricalHingeMax,
    CategoricalHingeSum,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [
        LossKind::BinaryCrossEntropy,
        LossKind::CategoricalCrossEntropy,
        LossKind::CategoricalHingeMax,
        LossKind::CategoricalHingeSum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::BinaryCrossEntropy => "binary_cross_entropy",
            LossKind::CategoricalCrossEntropy => "categorical_cross_entropy",
            LossKind::CategoricalHingeMax => "categorical_hinge_max",
            LossKind::CategoricalHingeSum => "categorical_hinge_sum",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::validation(format!("unknown loss '{name}'")))
    }

    /// Whether the loss expects probabilities in `(0, 1)` rather than raw scores.
    pub fn wants_probabilities(self) -> bool {
        self == LossKind::BinaryCrossEntropy
    }

    /// Whether the label must be one-hot.
    pub fn is_categorical(self) -> bool {
        self != LossKind::BinaryCrossEntropy
    }

    pub fn evaluate(self, y: &ChoiceLabel, s: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self {
            LossKind::BinaryCrossEntropy => binary_cross_entropy(y, s),
            LossKind::CategoricalCrossEntropy => categorical_cross_entropy(y, s),
            LossKind::CategoricalHingeMax => categorical_hinge_max(y, s),
            LossKind::CategoricalHingeSum => categorical_hinge_sum(y, s),
        }
    }
}

fn check_len(y: &ChoiceLabel, s: &[f64]) -> Result<()> {
    if y.len() != s.len() {
        return Err(Error::shape(format!(
            "label has {} entries but scores have {}",
            y.len(),
            s.len()
        )));
    }
    Ok(())
}

fn hot_index(y: &ChoiceLabel) -> Result<usize> {
    y.hot_index()
        .ok_or_else(|| Error::validation("categorical loss needs a one-hot label"))
}

/// Mean binary cross-entropy on probabilities clipped to `[eps, 1 - eps]`.
pub fn binary_cross_entropy(y: &ChoiceLabel, s: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(y, s)?;
    let n = s.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; s.len()];
    for (i, (&yi, &si)) in y.bits().iter().zip(s).enumerate() {
        let p = si.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON);
        let clipped = p != si;
        if yi {
            loss -= p.ln();
            if !clipped {
                grad[i] = -1.0 / (n * p);
            }
        } else {
            loss -= (1.0 - p).ln();
            if !clipped {
                grad[i] = 1.0 / (n * (1.0 - p));
            }
        }
    }
    Ok((loss / n, grad))
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean binary cross-entropy of `sigmoid(z)`, evaluated on the logits so it
/// stays exact where the probabilities round to 0 or 1. No clipping.
pub fn binary_cross_entropy_logits(y: &ChoiceLabel, z: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(y, z)?;
    let n = z.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; z.len()];
    for (i, (&yi, &zi)) in y.bits().iter().zip(z).enumerate() {
        let t = if yi { 1.0 } else { 0.0 };
        loss += softplus(zi) - t * zi;
        grad[i] = (crate::nnet::sigmoid(zi) - t) / n;
    }
    Ok((loss / n, grad))
}

/// Cross-entropy of `softmax(s)` against a one-hot label.
pub fn categorical_cross_entropy(y: &ChoiceLabel, s: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(y, s)?;
    let hot = hot_index(y)?;
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = max + total.ln() - s[hot];
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, e)| e / total - if i == hot { 1.0 } else { 0.0 })
        .collect();
    Ok((loss, grad))
}

/// `max(1 + max_{i != hot} s_i - s_hot, 0)`.
pub fn categorical_hinge_max(y: &ChoiceLabel, s: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(y, s)?;
    let hot = hot_index(y)?;
    let mut grad = vec![0.0; s.len()];
    let rival = (0..s.len())
        .filter(|&i| i != hot)
        .fold(None::<usize>, |best, i| match best {
            Some(b) if s[i] <= s[b] => Some(b),
            _ => Some(i),
        });
    let Some(rival) = rival else {
        return Ok((0.0, grad));
    };
    let margin = 1.0 + s[rival] - s[hot];
    if margin > 0.0 {
        grad[rival] = 1.0;
        grad[hot] = -1.0;
        Ok((margin, grad))
    } else {
        Ok((0.0, grad))
    }
}

/// `sum_{i != hot} max(1 + s_i - s_hot, 0)`.
pub fn categorical_hinge_sum(y: &ChoiceLabel, s: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(y, s)?;
    let hot = hot_index(y)?;
    let mut grad = vec![0.0; s.len()];
    let mut loss = 0.0;
    for i in (0..s.len()).filter(|&i| i != hot) {
        let term = 1.0 + s[i] - s[hot];
        if term > 0.0 {
            loss += term;
            grad[i] += 1.0;
            grad[hot] -= 1.0;
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn y(bits: &[i64]) -> ChoiceLabel {
        ChoiceLabel::from_ints(bits).unwrap()
    }

    #[test]
    fn bce_perfect_prediction_is_near_zero() {
        let (l, _) = binary_cross_entropy(&y(&[1, 0]), &[1.0 - PROB_EPSILON, PROB_EPSILON]).unwrap();
        assert!(l < 1e-11);
    }

    #[test]
    fn bce_half_is_ln2() {
        let (l, _) = binary_cross_entropy(&y(&[1]), &[0.5]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bce_length_mismatch() {
        assert!(matches!(
            binary_cross_entropy(&y(&[1, 0]), &[0.5]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn cce_uniform_is_ln_n() {
        let (l, _) = categorical_cross_entropy(&y(&[0, 0, 1, 0]), &[0.3; 4]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn cce_large_margin_vanishes() {
        let (l, _) = categorical_cross_entropy(&y(&[0, 1, 0]), &[0.0, 50.0, 0.0]).unwrap();
        assert!(l < 1e-20);
    }

    #[test]
    fn cce_requires_one_hot() {
        assert!(matches!(
            categorical_cross_entropy(&y(&[1, 1]), &[0.0, 0.0]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn hinge_max_worked_value() {
        let (l, g) = categorical_hinge_max(&y(&[0, 1, 0]), &[0.5, 0.2, 0.1]).unwrap();
        assert!((l - 1.3).abs() < 1e-12);
        assert_eq!(g, vec![1.0, -1.0, 0.0]);
    }

    #[test]
    fn hinge_max_satisfied_margin_is_zero() {
        let (l, g) = categorical_hinge_max(&y(&[1, 0, 0]), &[2.0, 0.9, 1.0]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hinge_single_object_has_no_competitor() {
        assert_eq!(categorical_hinge_max(&y(&[1]), &[0.3]).unwrap().0, 0.0);
        assert_eq!(categorical_hinge_sum(&y(&[1]), &[0.3]).unwrap().0, 0.0);
    }

    #[test]
    fn hinge_sum_worked_values() {
        let (l, _) = categorical_hinge_sum(&y(&[0, 1, 0]), &[0.5, 0.2, 0.1]).unwrap();
        assert!((l - 2.2).abs() < 1e-12);
        let (l, _) = categorical_hinge_sum(&y(&[0, 0, 0, 1, 0]), &[0.7; 5]).unwrap();
        assert!((l - 4.0).abs() < 1e-12);
        let (l, _) = categorical_hinge_sum(&y(&[0, 1, 0]), &[0.0, 5.0, 1.0]).unwrap();
        assert_eq!(l, 0.0);
    }

    fn one_hot_case() -> impl Strategy<Value = (ChoiceLabel, Vec<f64>)> {
        (2usize..9).prop_flat_map(|n| {
            (0..n, proptest::collection::vec(-3.0f64..3.0, n))
                .prop_map(move |(hot, s)| (ChoiceLabel::one_hot(n, hot), s))
        })
    }

    proptest! {
        #[test]
        fn hinge_max_bounds_zero_one_loss((y, s) in one_hot_case()) {
            let hot = y.hot_index().unwrap();
            let (l, _) = categorical_hinge_max(&y, &s).unwrap();
            if crate::types::argmax(&s) != Some(hot) {
                prop_assert!(l >= 1.0);
            }
            prop_assert!(l >= 0.0);
        }

        #[test]
        fn hinge_sum_dominates_hinge_max((y, s) in one_hot_case()) {
            let (lmax, _) = categorical_hinge_max(&y, &s).unwrap();
            let (lsum, _) = categorical_hinge_sum(&y, &s).unwrap();
            prop_assert!(lsum >= lmax - 1e-12);
        }

        #[test]
        fn bce_matches_direct_formula(
            pairs in proptest::collection::vec((any::<bool>(), 0.01f64..0.99), 1..12)
        ) {
            let label = ChoiceLabel::new(pairs.iter().map(|p| p.0).collect());
            let s: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let (l, _) = binary_cross_entropy(&label, &s).unwrap();
            let mut oracle = 0.0;
            for (yi, si) in &pairs {
                let yv = if *yi { 1.0 } else { 0.0 };
                oracle += yv * si.ln() + (1.0 - yv) * (1.0 - si).ln();
            }
            oracle = -oracle / pairs.len() as f64;
            prop_assert!((l - oracle).abs() < 1e-12);
        }

        #[test]
        fn bce_invariant_under_joint_permutation(
            pairs in proptest::collection::vec((any::<bool>(), 0.01f64..0.99), 2..10),
            seed in any::<u64>()
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut perm: Vec<usize> = (0..pairs.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let label = ChoiceLabel::new(pairs.iter().map(|p| p.0).collect());
            let s: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let ps: Vec<f64> = perm.iter().map(|&i| s[i]).collect();
            let (a, _) = binary_cross_entropy(&label, &s).unwrap();
            let (b, _) = binary_cross_entropy(&label.permuted(&perm), &ps).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn cce_matches_log_sum_exp((y, s) in one_hot_case()) {
            let hot = y.hot_index().unwrap();
            let (l, _) = categorical_cross_entropy(&y, &s).unwrap();
            let lse = s.iter().map(|v| v.exp()).sum::<f64>().ln();
            prop_assert!((l - (lse - s[hot])).abs() < 1e-12);
        }

        #[test]
        fn hinge_max_matches_scan((y, s) in one_hot_case()) {
            let mut worst = f64::NEG_INFINITY;
            for i in 0..s.len() {
                for j in 0..s.len() {
                    if y.get(j) && !y.get(i) {
                        worst = worst.max(s[i] - s[j]);
                    }
                }
            }
            let (l, _) = categorical_hinge_max(&y, &s).unwrap();
            prop_assert!((l - (1.0 + worst).max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let h = 1e-6;
        let mut checked = 0;
        while checked < 200 {
            let n = rng.random_range(2..7);
            let hot = rng.random_range(0..n);
            let kind = LossKind::ALL[checked % 4];
            let (label, s): (ChoiceLabel, Vec<f64>) = if kind == LossKind::BinaryCrossEntropy {
                (
                    ChoiceLabel::new((0..n).map(|_| rng.random_bool(0.5)).collect()),
                    (0..n).map(|_| rng.random_range(0.05..0.95)).collect(),
                )
            } else {
                (
                    ChoiceLabel::one_hot(n, hot),
                    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
                )
            };
            // resample inputs close to a hinge kink
            if kind != LossKind::BinaryCrossEntropy && kind != LossKind::CategoricalCrossEntropy {
                let near_kink = (0..n).filter(|&i| i != hot).any(|i| {
                    let t = 1.0 + s[i] - s[hot];
                    t.abs() < 1e-3
                }) || {
                    let mut sorted: Vec<f64> = (0..n).filter(|&i| i != hot).map(|i| s[i]).collect();
                    sorted.sort_by(f64::total_cmp);
                    sorted.windows(2).any(|w| (w[1] - w[0]).abs() < 1e-3)
                };
                if near_kink {
                    continue;
                }
            }
            let (_, g) = kind.evaluate(&label, &s).unwrap();
            for i in 0..n {
                let mut plus = s.clone();
                let mut minus = s.clone();
                plus[i] += h;
                minus[i] -= h;
                let fd = (kind.evaluate(&label, &plus).unwrap().0 - kind.evaluate(&label, &minus).unwrap().0) / (2.0 * h);
                let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
                assert!(rel < 1e-6 || (fd - g[i]).abs() < 1e-9, "{kind:?} i={i} fd={fd} g={}", g[i]);
            }
            checked += 1;
        }
    }
}
