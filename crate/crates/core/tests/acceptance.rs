//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --release --test acceptance -- 4 5`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use common::gradcheck::{fate_worst, feta_worst, INSTANCES, TOL};
use common::{feta_example, ids, random_task, rng, FateExample};
use setchoice::baselines::{BaselineKind, RandomUtility, UtilityScorer};
use setchoice::calibrate::{apply_threshold, tune_threshold, CalibrationMetric, CalibrationSet};
use setchoice::datagen::{hv_contributions, hypervolume_2d};
use setchoice::fate::{self, FateModel};
use setchoice::feta::{self, Aggregation, FetaModel};
use setchoice::harness::{evaluate, fit, fit_all, fold_splits, size_generalization_sweep, ExperimentConfig, ModelName};
use setchoice::losses::LossKind;
use setchoice::metrics::{
    auc_micro, categorical_accuracy, f1_micro, informedness, normalized_accuracy, subset01, topk_accuracy,
    ConfusionTotals,
};
use setchoice::nnet::{Activation, DenseNet};
use setchoice::train::TrainConfig;
use setchoice::{ChoiceLabel, ChoiceModel, Comparison, Dataset, Error};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<(), String> {
    let spent = start.elapsed();
    ensure(spent <= budget, || format!("took {:.0}s, budget {}s", spent.as_secs_f64(), budget.as_secs()))
}

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text).expect("bundled config parses")
}

fn with_model(cfg: &ExperimentConfig, name: ModelName) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.model.name = name;
    c
}

fn metric(m: &[(String, f64)], name: &str) -> f64 {
    m.iter().find(|(k, _)| k == name).map(|p| p.1).unwrap_or(f64::NAN)
}

fn err(e: Error) -> String {
    e.to_string()
}

// 1
fn golden_feta() -> Outcome {
    let t = feta_example();
    let cases = [(ids(&[0, 1, 2]), [1.1, 0.8, 0.5], [true, false, false]), (ids(&[0, 1, 3]), [0.7, 0.9, 0.6], [false, true, false])];
    for (task, want, chosen) in cases {
        let s = feta::scores_with(&t, &t, &task, Aggregation::Sum).map_err(err)?;
        for (a, b) in s.iter().zip(want) {
            ensure((a - b).abs() <= 1e-12, || format!("scores {s:?}, want {want:?}"))?;
        }
        let c = apply_threshold(&s, 0.9, Comparison::Ge);
        ensure(c.bits() == chosen, || format!("chose {:?} from {s:?}", c.chosen()))?;
    }
    Ok("scores exact, choices {a} and {b}".into())
}

// 2
fn golden_fate() -> Outcome {
    let cases = [(ids(&[0, 1, 2]), 2.0, 0), (ids(&[0, 1, 3]), 3.0, 1)];
    for (task, mu_want, hot) in cases {
        let mu = fate::context_representative_with(&FateExample, &task, None).map_err(err)?;
        ensure(mu[0] == mu_want, || format!("representative {}, want {mu_want}", mu[0]))?;
        let s = fate::scores_with(&FateExample, &FateExample, &task, true).map_err(err)?;
        let c = apply_threshold(&s, 1.0, Comparison::Ge);
        ensure(c == ChoiceLabel::one_hot(3, hot), || format!("chose {:?} from {s:?}", c.chosen()))?;
    }
    Ok("representatives 2 and 3, choices {a} and {b}".into())
}

// 3
fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut checks = Vec::new();
    for agg in [Aggregation::Mean, Aggregation::Sum] {
        for (k, loss) in LossKind::ALL.into_iter().enumerate() {
            checks.push((format!("feta {} {}", agg.name(), loss.name()), feta_worst(100 + k as u64, loss, agg, Some(4.0))));
        }
    }
    checks.push(("feta default link".into(), feta_worst(7, LossKind::BinaryCrossEntropy, Aggregation::Mean, None)));
    for self_in_context in [true, false] {
        for (k, loss) in LossKind::ALL.into_iter().enumerate() {
            checks.push((format!("fate self={self_in_context} {}", loss.name()), fate_worst(200 + k as u64, loss, self_in_context)));
        }
    }
    for (name, e) in &checks {
        ensure(*e < TOL, || format!("{name}: relative error {e:e}"))?;
        worst = worst.max(*e);
    }
    within_budget(start, Duration::from_secs(60))?;
    Ok(format!("{} configurations x {INSTANCES} instances, worst relative error {worst:.2e}", checks.len()))
}

// 4
fn pareto() -> Outcome {
    let start = Instant::now();
    let cfg = config(include_str!("../../../configs/pareto.toml"));
    let train = cfg.dataset.load().map_err(err)?;
    let mut test_spec = cfg.dataset.generate.clone().expect("generated dataset");
    test_spec.instances = 1000;
    test_spec.first_instance = 1 << 32;
    let test = setchoice::datagen::generate(&test_spec).map_err(err)?;
    let feta = fit_all(&cfg, &train).map_err(err)?;
    let linear = fit_all(&with_model(&cfg, ModelName::GenLinear), &train).map_err(err)?;
    let f = metric(&evaluate(&feta, &test).map_err(err)?, "informedness");
    let g = metric(&evaluate(&linear, &test).map_err(err)?, "informedness");
    let detail = format!("feta {f:.3}, gen_linear {g:.3} on {} held-out tasks", test.len());
    ensure(f >= 0.70, || format!("{detail}; feta below 0.70"))?;
    ensure(f - g >= 0.15, || format!("{detail}; margin below 0.15"))?;
    within_budget(start, Duration::from_secs(600))?;
    Ok(format!("{detail}, {:.0}s", start.elapsed().as_secs_f64()))
}

// 5
fn mode() -> Outcome {
    let start = Instant::now();
    let cfg = config(include_str!("../../../configs/mode.toml"));
    let data = cfg.dataset.load().map_err(err)?;
    let split = &fold_splits(data.len(), cfg.cv.folds, 0, cfg.cv.seed, Some(cfg.cv.calibration_fraction)).map_err(err)?[0];
    let (train, cal, test) = (data.select(&split.train), data.select(&split.calibration), data.select(&split.test));
    let mut got = Vec::new();
    for name in [ModelName::Fate, ModelName::GenLinear, ModelName::Ranknet] {
        let model = fit(&with_model(&cfg, name), &train, &cal).map_err(err)?;
        got.push((name, metric(&evaluate(&model, &test).map_err(err)?, "informedness")));
    }
    let detail = got.iter().map(|(n, v)| format!("{n} {v:.3}")).collect::<Vec<_>>().join(", ");
    ensure(got[0].1 >= 0.5, || format!("{detail}; fate below 0.5"))?;
    for (n, v) in &got[1..] {
        ensure(v.abs() <= 0.05, || format!("{detail}; {n} outside 0 +- 0.05"))?;
    }
    within_budget(start, Duration::from_secs(900))?;
    Ok(format!("{detail}, {:.0}s", start.elapsed().as_secs_f64()))
}

/// Scores on a coarse grid half the time, so ties are common.
fn random_scores<R: Rng>(r: &mut R, n: usize) -> Vec<f64> {
    let grid = r.random_bool(0.5);
    (0..n)
        .map(|_| if grid { r.random_range(0..5) as f64 / 4.0 } else { r.random_range(-2.0..2.0) })
        .collect()
}

fn random_bits<R: Rng>(r: &mut R, n: usize) -> ChoiceLabel {
    let p = r.random_range(0.0..1.0);
    ChoiceLabel::new((0..n).map(|_| r.random_bool(p)).collect())
}

fn brute_counts(pairs: &[(ChoiceLabel, ChoiceLabel)]) -> (u64, u64, u64, u64) {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (y, p) in pairs {
        for k in 0..y.len() {
            match (y.get(k), p.get(k)) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
    }
    (tp, fp, fn_, tn)
}

fn div_or_zero(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

// 6
fn metric_oracles() -> Outcome {
    let mut r = rng(6);
    for set in 0..1000 {
        let tasks = r.random_range(1..=5);
        let mut labelled = Vec::new();
        let mut pooled = Vec::new();
        let mut totals = ConfusionTotals::new();
        for _ in 0..tasks {
            let n = r.random_range(1..=10);
            let s = random_scores(&mut r, n);
            let (y, p) = (random_bits(&mut r, n), random_bits(&mut r, n));
            totals.accumulate(&y, &p).map_err(err)?;
            let same = y.bits().iter().zip(p.bits()).all(|(a, b)| a == b);
            let sub = subset01(&y, &p).map_err(err)?;
            ensure(sub == if same { 1.0 } else { 0.0 }, || format!("set {set}: subset01 {sub}"))?;
            let truth = r.random_range(0..n);
            for k in 1..=n {
                let ahead = (0..n).filter(|&j| s[j] > s[truth] || (s[j] == s[truth] && j < truth)).count();
                let want = if ahead < k { 1.0 } else { 0.0 };
                let got = topk_accuracy(truth, &s, k).map_err(err)?;
                ensure(got == want, || format!("set {set}: top-{k} {got}, oracle {want}"))?;
            }
            pooled.extend(s.iter().copied().zip(y.bits().iter().copied()));
            labelled.push((y, p));
        }
        let (tp, fp, fn_, tn) = brute_counts(&labelled);
        let f1 = div_or_zero(2 * tp, 2 * tp + fp + fn_);
        let inf = div_or_zero(tp, tp + fn_) + div_or_zero(tn, tn + fp) - 1.0;
        ensure(f1_micro(&totals) == f1, || format!("set {set}: f1 {} vs {f1}", f1_micro(&totals)))?;
        ensure(informedness(&totals) == inf, || format!("set {set}: informedness {} vs {inf}", informedness(&totals)))?;

        let pos: Vec<f64> = pooled.iter().filter(|p| p.1).map(|p| p.0).collect();
        let neg: Vec<f64> = pooled.iter().filter(|p| !p.1).map(|p| p.0).collect();
        match auc_micro(&pooled) {
            Err(Error::Undefined(_)) if pos.is_empty() || neg.is_empty() => {}
            Err(e) => return Err(format!("set {set}: auc error {e}")),
            Ok(auc) => {
                let mut wins = 0.0;
                for &a in &pos {
                    for &b in &neg {
                        wins += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
                    }
                }
                let want = wins / (pos.len() * neg.len()) as f64;
                ensure(auc == want, || format!("set {set}: auc {auc} vs pair count {want}"))?;
            }
        }
    }
    Ok("1000 sets, f1/informedness/auc/subset01/top-k exact".into())
}

fn f1_at(cal: &CalibrationSet, t: f64) -> f64 {
    let pairs: Vec<_> = cal
        .pairs()
        .iter()
        .map(|(s, y)| (y.clone(), apply_threshold(s, t, Comparison::Gt)))
        .collect();
    let (tp, fp, fn_, _) = brute_counts(&pairs);
    div_or_zero(2 * tp, 2 * tp + fp + fn_)
}

// 7
fn threshold_optimality() -> Outcome {
    let mut r = rng(7);
    let mut done = 0;
    while done < 200 {
        let mut cal = CalibrationSet::new();
        for _ in 0..r.random_range(1..=6) {
            let n = r.random_range(1..=8);
            cal.push(random_scores(&mut r, n), random_bits(&mut r, n)).map_err(err)?;
        }
        if cal.pairs().iter().all(|(_, y)| y.count_chosen() == 0) {
            continue;
        }
        // every achievable prediction is "score > t" for t a pooled score or below all of them
        let mut best = f1_at(&cal, f64::NEG_INFINITY);
        for (s, _) in cal.pairs() {
            for &t in s {
                best = best.max(f1_at(&cal, t));
            }
        }
        let tuned = tune_threshold(&cal, CalibrationMetric::F1Micro).map_err(err)?;
        let got = f1_at(&cal, tuned);
        ensure(got == best, || format!("set {done}: tuned F1 {got}, exhaustive {best}"))?;
        done += 1;
    }
    Ok("200 sets, tuned F1 equals exhaustive maximum".into())
}

/// Area of the union of boxes `[p, 0]` by inclusion-exclusion over subsets.
fn hv_inclusion_exclusion(pts: &[[f64; 2]]) -> f64 {
    let mut total = 0.0;
    for mask in 1u32..(1 << pts.len()) {
        let (mut x, mut y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (k, p) in pts.iter().enumerate() {
            if mask & (1 << k) != 0 {
                x = x.max(p[0]);
                y = y.max(p[1]);
            }
        }
        let sign = if mask.count_ones() % 2 == 1 { 1.0 } else { -1.0 };
        total += sign * (-x) * (-y);
    }
    total
}

// 8
fn hypervolume_oracle() -> Outcome {
    let mut r = rng(8);
    let mut worst = 0.0f64;
    for front in 0..2000 {
        let n = r.random_range(1..=6);
        let grid = r.random_bool(0.3);
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                let mut c = || if grid { -(r.random_range(0..4) as f64) / 3.0 } else { r.random_range(-1.0..0.0) };
                [c(), c()]
            })
            .collect();
        let arr = Array2::from_shape_fn((n, 2), |(i, j)| pts[i][j]);
        let hv = hypervolume_2d(arr.view(), [0.0, 0.0]).map_err(err)?;
        let want = hv_inclusion_exclusion(&pts);
        worst = worst.max((hv - want).abs());
        ensure((hv - want).abs() <= 1e-9, || format!("front {front}: hypervolume {hv} vs {want}"))?;
        let contrib = hv_contributions(arr.view(), [0.0, 0.0]).map_err(err)?;
        for i in 0..n {
            let rest: Vec<[f64; 2]> = pts.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, p)| *p).collect();
            let want = want - hv_inclusion_exclusion(&rest);
            worst = worst.max((contrib[i] - want).abs());
            ensure((contrib[i] - want).abs() <= 1e-9, || format!("front {front}: contribution {i} {} vs {want}", contrib[i]))?;
        }
    }
    Ok(format!("2000 fronts of up to 6 points, worst error {worst:.1e}"))
}

// 9
fn random_chooser() -> Outcome {
    let mut r = rng(9);
    let mut parts = Vec::new();
    for n in [5, 10, 20] {
        let chooser = RandomUtility::new(n as u64);
        let trials = 100_000;
        let mut hits = 0.0;
        for _ in 0..trials {
            let task = random_task(&mut r, n, 2);
            let truth = r.random_range(0..n);
            let s = chooser.scores(&task).map_err(err)?;
            hits += categorical_accuracy(truth, &s).map_err(err)?;
        }
        let na = normalized_accuracy(hits / trials as f64, n).map_err(err)?;
        ensure(na.abs() <= 0.02, || format!("n={n}: normalized accuracy {na:.4}"))?;
        parts.push(format!("n={n} {na:+.4}"));
    }
    Ok(parts.join(", "))
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        hidden_layers: 2,
        units: 8,
        ..TrainConfig::default()
    }
}

fn scorer(kind: &str, d: usize, seed: u64) -> Box<dyn ChoiceModel> {
    let mut r = rng(seed);
    let linear = |head, r: &mut rand_chacha::ChaCha8Rng| DenseNet::init(&[d, 1], head, head, 0.0, r).unwrap();
    match kind {
        "feta_mean" => Box::new(FetaModel::init(d, &small_cfg(), Aggregation::Mean, seed).unwrap()),
        "feta_sum" => Box::new(FetaModel::init(d, &small_cfg(), Aggregation::Sum, seed).unwrap()),
        "fate" => Box::new(FateModel::init(d, 4, &small_cfg(), true, seed).unwrap()),
        "fate_leave_one_out" => Box::new(FateModel::init(d, 4, &small_cfg(), false, seed).unwrap()),
        "gen_linear" => Box::new(UtilityScorer::new(BaselineKind::GenLinear, linear(Activation::Sigmoid, &mut r)).unwrap()),
        "pairwise_linear" => {
            Box::new(UtilityScorer::new(BaselineKind::PairwiseLinear, linear(Activation::Identity, &mut r)).unwrap())
        }
        "ranknet" => Box::new(
            UtilityScorer::new(
                BaselineKind::RankNet,
                DenseNet::mlp(d, 2, 8, 1, Activation::Identity, 0.0, &mut r).unwrap(),
            )
            .unwrap(),
        ),
        "random" => Box::new(RandomUtility::new(seed)),
        other => unreachable!("{other}"),
    }
}

// 10
fn permutations() -> Outcome {
    let kinds = ["feta_mean", "feta_sum", "fate", "fate_leave_one_out", "gen_linear", "pairwise_linear", "ranknet", "random"];
    let mut r = rng(10);
    let (mut worst, mut ties) = (0.0f64, 0);
    for kind in kinds {
        for trial in 0..100u64 {
            let d = r.random_range(1..=4);
            let n = r.random_range(2..=10);
            let model = scorer(kind, d, trial);
            let task = random_task(&mut r, n, d);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut r);
            let s = model.scores(&task).map_err(err)?;
            let sp = model.scores(&task.permuted(&perm)).map_err(err)?;
            for k in 0..n {
                let e = (sp[k] - s[perm[k]]).abs();
                worst = worst.max(e);
                ensure(e <= 1e-9, || format!("{kind} trial {trial}: object {k} differs by {e:e}"))?;
            }
            let (c, cp) = (model.discrete_choose(&task).map_err(err)?, model.discrete_choose(&task.permuted(&perm)).map_err(err)?);
            let top = s[c];
            if s.iter().filter(|&&v| top - v <= 1e-9).count() > 1 {
                // tied maxima: any of them is the same choice up to the tie
                ties += 1;
                ensure(top - s[perm[cp]] <= 1e-9, || format!("{kind} trial {trial}: choice left the tied maxima"))?;
            } else {
                ensure(perm[cp] == c, || format!("{kind} trial {trial}: discrete choice moved"))?;
            }
        }
    }
    Ok(format!("{} scorers x 100 tasks, worst deviation {worst:.1e}, {ties} tied maxima", kinds.len()))
}

fn check_valid(model: &dyn ChoiceModel, data: &Dataset) -> Result<(), String> {
    for inst in &data.instances {
        let s = model.scores(&inst.task).map_err(err)?;
        ensure(s.len() == inst.task.len() && s.iter().all(|v| v.is_finite()), || {
            format!("{} gave invalid scores at n={}", model.name(), inst.task.len())
        })?;
        ensure(model.choose(&inst.task).map_err(err)?.len() == inst.task.len(), || "bad label length".into())?;
    }
    Ok(())
}

// 11
fn size_generalization() -> Outcome {
    let start = Instant::now();
    let cfg = config(include_str!("../../../configs/unique.toml"));
    let data = cfg.dataset.load().map_err(err)?;
    let spec = cfg.dataset.generate.clone().expect("generated dataset");
    let sizes: Vec<usize> = (3..=16).collect();
    let mut ranges = Vec::new();
    for name in [ModelName::Feta, ModelName::Fate] {
        let model = fit_all(&with_model(&cfg, name), &data).map_err(err)?;
        let sweep = size_generalization_sweep(&model, &spec, &sizes, 500).map_err(err)?;
        ensure(sweep.len() == sizes.len(), || format!("{name}: sweep covered {} sizes", sweep.len()))?;
        for &n in &sizes {
            let mut s = spec.clone();
            s.task_size = n;
            s.instances = 20;
            s.first_instance = 1 << 40;
            check_valid(&model, &setchoice::datagen::generate(&s).map_err(err)?)?;
        }
        let acc: Vec<f64> = sweep.iter().map(|r| r.normalized_accuracy).collect();
        let lo = acc.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ranges.push((name, lo, hi));
    }
    let detail = ranges
        .iter()
        .map(|(n, lo, hi)| format!("{n} normalized accuracy {lo:.3}..{hi:.3}"))
        .collect::<Vec<_>>()
        .join(", ");
    let (_, lo, hi) = ranges[0];
    ensure(hi - lo < 0.25, || format!("{detail}; feta varies by {:.3}", hi - lo))?;
    within_budget(start, Duration::from_secs(900))?;
    Ok(format!("{detail}, {:.0}s", start.elapsed().as_secs_f64()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("golden FETA example", golden_feta),
        ("golden FATE example", golden_fate),
        ("gradient suite", gradients),
        ("pareto learning", pareto),
        ("mode context dependence", mode),
        ("metric oracles", metric_oracles),
        ("threshold optimality", threshold_optimality),
        ("hypervolume oracle", hypervolume_oracle),
        ("random chooser", random_chooser),
        ("permutation properties", permutations),
        ("size generalization", size_generalization),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let id = k + 1;
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
