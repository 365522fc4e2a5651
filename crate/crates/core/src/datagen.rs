//! Synthetic choice datasets: Pareto fronts, hypervolume contributions and
//! the Mode/Unique class-count problems.
//!
//! Every instance draws from its own ChaCha stream, so instance `i` does not
//! depend on how many instances were generated before it.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{argmax, ChoiceLabel, ChoiceTask, Dataset, DatasetKind, Instance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Pareto,
    Hypervolume,
    Mode,
    Unique,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Pareto => "pareto",
            Family::Hypervolume => "hypervolume",
            Family::Mode => "mode",
            Family::Unique => "unique",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "pareto" => Ok(Family::Pareto),
            "hypervolume" => Ok(Family::Hypervolume),
            "mode" => Ok(Family::Mode),
            "unique" => Ok(Family::Unique),
            other => Err(Error::validation(format!("unknown family '{other}'"))),
        }
    }

    /// Noise scale used when the spec leaves it unset.
    pub fn default_noise(self) -> f64 {
        match self {
            Family::Pareto => 0.1,
            Family::Hypervolume => 0.0,
            Family::Mode | Family::Unique => 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub family: Family,
    pub instances: usize,
    pub task_size: usize,
    pub dim: usize,
    pub seed: u64,
    #[serde(default)]
    pub noise: Option<f64>,
    /// Discrete-choice variant (one-hot targets). Hypervolume is always discrete.
    #[serde(default)]
    pub discrete: bool,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_prototype_scale")]
    pub prototype_scale: f64,
    /// Number of distinct noisy objects per class; 0 draws fresh noise per object.
    #[serde(default)]
    pub pool_per_class: usize,
    /// Stream index of the first instance. Specs differing only here share
    /// class prototypes but draw disjoint instances (held-out sets).
    #[serde(default)]
    pub first_instance: u64,
}

fn default_classes() -> usize {
    10
}

fn default_prototype_scale() -> f64 {
    1.0
}

impl GeneratorSpec {
    pub fn new(family: Family, instances: usize, task_size: usize, dim: usize, seed: u64) -> Self {
        Self {
            family,
            instances,
            task_size,
            dim,
            seed,
            noise: None,
            discrete: family == Family::Hypervolume,
            classes: default_classes(),
            prototype_scale: default_prototype_scale(),
            pool_per_class: 0,
            first_instance: 0,
        }
    }

    pub fn noise(&self) -> f64 {
        self.noise.unwrap_or_else(|| self.family.default_noise())
    }

    pub fn kind(&self) -> DatasetKind {
        if self.discrete || self.family == Family::Hypervolume {
            DatasetKind::Discrete
        } else {
            DatasetKind::Choice
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.instances == 0 {
            return Err(Error::validation("instance count must be at least 1"));
        }
        if self.task_size < 2 {
            return Err(Error::validation("task size must be at least 2"));
        }
        if self.dim == 0 {
            return Err(Error::validation("feature dimension must be positive"));
        }
        if !(self.noise() >= 0.0 && self.noise().is_finite()) {
            return Err(Error::validation("noise must be finite and nonnegative"));
        }
        match self.family {
            Family::Pareto if self.dim < 2 => Err(Error::validation("pareto needs d >= 2")),
            Family::Pareto if self.discrete => {
                Err(Error::validation("pareto has no discrete-choice variant"))
            }
            Family::Hypervolume if self.dim != 2 => {
                Err(Error::validation("hypervolume is implemented for d = 2 only"))
            }
            Family::Mode | Family::Unique if self.classes < 2 => {
                Err(Error::validation("need at least two classes"))
            }
            _ => Ok(()),
        }
    }
}

/// Stream reserved for per-dataset constants (class prototypes, tie vector).
const WORLD_STREAM: u64 = u64::MAX;

fn instance_rng(spec: &GeneratorSpec, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(spec.first_instance.wrapping_add(index as u64));
    rng
}

fn gaussian_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_fn(d, |_| rng.sample::<f64, _>(StandardNormal))
}

/// Uniform point in the closed unit ball: Gaussian direction, radius `U^(1/d)`.
pub fn sample_unit_ball<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Array1<f64> {
    loop {
        let g = gaussian_vector(d, rng);
        let norm = g.dot(&g).sqrt();
        if norm > 0.0 {
            let r = rng.random::<f64>().powf(1.0 / d as f64);
            return g * (r / norm);
        }
    }
}

/// Uniform point on the unit sphere restricted to the nonpositive orthant.
pub fn sample_negative_sphere<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Array1<f64> {
    loop {
        let g = gaussian_vector(d, rng).mapv(|v| -v.abs());
        let norm = g.dot(&g).sqrt();
        if norm > 0.0 {
            return g / norm;
        }
    }
}

/// True if `a` is no worse than `b` everywhere and strictly better somewhere
/// (minimisation).
pub fn dominates(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b.iter()) {
        if x > y {
            return false;
        }
        strict |= x < y;
    }
    strict
}

pub fn pareto_front_min(points: ArrayView2<'_, f64>) -> ChoiceLabel {
    let n = points.nrows();
    ChoiceLabel::new(
        (0..n)
            .map(|i| !(0..n).any(|j| j != i && dominates(points.row(j), points.row(i))))
            .collect(),
    )
}

fn check_front(points: ArrayView2<'_, f64>, reference: [f64; 2]) -> Result<()> {
    if points.ncols() != 2 {
        return Err(Error::shape("hypervolume needs two-dimensional points"));
    }
    for (i, p) in points.rows().into_iter().enumerate() {
        if !(p[0] <= reference[0] && p[1] <= reference[1]) {
            return Err(Error::Domain(format!(
                "point {i} ({}, {}) does not dominate the reference point",
                p[0], p[1]
            )));
        }
    }
    Ok(())
}

fn sweep_area(mut pts: Vec<[f64; 2]>, reference: [f64; 2]) -> f64 {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut ceiling = reference[1];
    let mut area = 0.0;
    for [x, y] in pts {
        if y < ceiling {
            area += (reference[0] - x) * (ceiling - y);
            ceiling = y;
        }
    }
    area
}

/// Area dominated by `points` and bounded by `reference`.
pub fn hypervolume_2d(points: ArrayView2<'_, f64>, reference: [f64; 2]) -> Result<f64> {
    check_front(points, reference)?;
    Ok(sweep_area(points.rows().into_iter().map(|p| [p[0], p[1]]).collect(), reference))
}

/// Hypervolume lost when each point is removed on its own.
pub fn hv_contributions(points: ArrayView2<'_, f64>, reference: [f64; 2]) -> Result<Vec<f64>> {
    check_front(points, reference)?;
    let pts: Vec<[f64; 2]> = points.rows().into_iter().map(|p| [p[0], p[1]]).collect();
    let total = sweep_area(pts.clone(), reference);
    Ok((0..pts.len())
        .map(|i| {
            let rest: Vec<[f64; 2]> = pts
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, p)| *p)
                .collect();
            (total - sweep_area(rest, reference)).max(0.0)
        })
        .collect())
}

/// Occurrences of each class in `labels`.
pub fn class_counts(labels: &[usize], classes: usize) -> Vec<usize> {
    let mut c = vec![0; classes];
    for &l in labels {
        c[l] += 1;
    }
    c
}

/// Objects whose class occurs most often (every modal class if several tie).
pub fn mode_choice(labels: &[usize], classes: usize) -> ChoiceLabel {
    let c = class_counts(labels, classes);
    let top = c.iter().copied().max().unwrap_or(0);
    ChoiceLabel::new(labels.iter().map(|&l| c[l] == top).collect())
}

/// Objects whose class occurs exactly once.
pub fn unique_choice(labels: &[usize], classes: usize) -> ChoiceLabel {
    let c = class_counts(labels, classes);
    ChoiceLabel::new(labels.iter().map(|&l| c[l] == 1).collect())
}

/// Class prototypes, tie vector and optional finite object pool shared by
/// every instance of a Mode/Unique dataset.
#[derive(Clone, Debug)]
pub struct ClassWorld {
    prototypes: Array2<f64>,
    tie_vector: Array1<f64>,
    noise: f64,
    pool: Vec<Array2<f64>>,
}

impl ClassWorld {
    pub fn new(spec: &GeneratorSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(WORLD_STREAM);
        let (k, d) = (spec.classes, spec.dim);
        let prototypes =
            Array2::from_shape_fn((k, d), |_| spec.prototype_scale * rng.sample::<f64, _>(StandardNormal));
        let tie_vector = gaussian_vector(d, &mut rng);
        let noise = spec.noise();
        let pool = (0..if spec.pool_per_class > 0 { k } else { 0 })
            .map(|c| {
                Array2::from_shape_fn((spec.pool_per_class, d), |(_, j)| {
                    prototypes[[c, j]] + noise * rng.sample::<f64, _>(StandardNormal)
                })
            })
            .collect();
        Self {
            prototypes,
            tie_vector,
            noise,
            pool,
        }
    }

    pub fn prototypes(&self) -> ArrayView2<'_, f64> {
        self.prototypes.view()
    }

    pub fn tie_vector(&self) -> ArrayView1<'_, f64> {
        self.tie_vector.view()
    }

    pub fn classes(&self) -> usize {
        self.prototypes.nrows()
    }

    /// Task of `n` objects with uniformly drawn classes.
    pub fn sample_task<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (ChoiceTask, Vec<usize>) {
        let d = self.prototypes.ncols();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.classes())).collect();
        let mut x = Array2::zeros((n, d));
        for (i, &c) in labels.iter().enumerate() {
            if let Some(pool) = self.pool.get(c) {
                x.row_mut(i).assign(&pool.row(rng.random_range(0..pool.nrows())));
            } else {
                for j in 0..d {
                    x[[i, j]] = self.prototypes[[c, j]] + self.noise * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        (ChoiceTask::new(x).expect("finite features"), labels)
    }

    /// Among the modal objects, the one with the least angle to the tie vector.
    pub fn mode_discrete(&self, task: &ChoiceTask, labels: &[usize]) -> usize {
        let modal = mode_choice(labels, self.classes());
        let w = &self.tie_vector;
        let wn = w.dot(w).sqrt();
        let cosines: Vec<f64> = (0..task.len())
            .map(|i| {
                if !modal.get(i) {
                    return f64::NEG_INFINITY;
                }
                let x = task.object(i);
                let xn = x.dot(&x).sqrt();
                if xn == 0.0 || wn == 0.0 {
                    -1.0
                } else {
                    x.dot(w) / (xn * wn)
                }
            })
            .collect();
        argmax(&cosines).expect("task nonempty")
    }
}

/// Generated dataset plus the latent object classes of Mode/Unique tasks.
#[derive(Clone, Debug)]
pub struct Generated {
    pub dataset: Dataset,
    pub classes: Option<Vec<Vec<usize>>>,
}

pub fn generate(spec: &GeneratorSpec) -> Result<Dataset> {
    Ok(generate_with_classes(spec)?.dataset)
}

pub fn generate_with_classes(spec: &GeneratorSpec) -> Result<Generated> {
    spec.validate()?;
    match spec.family {
        Family::Pareto => Ok(Generated { dataset: gen_pareto(spec)?, classes: None }),
        Family::Hypervolume => Ok(Generated { dataset: gen_hypervolume(spec)?, classes: None }),
        Family::Mode | Family::Unique => gen_counting(spec),
    }
}

pub fn gen_pareto(spec: &GeneratorSpec) -> Result<Dataset> {
    spec.validate()?;
    let (n, d, sigma) = (spec.task_size, spec.dim, spec.noise());
    let instances = (0..spec.instances)
        .map(|i| {
            let mut rng = instance_rng(spec, i);
            let centre = sample_unit_ball(d, &mut rng);
            let x = Array2::from_shape_fn((n, d), |(_, j)| {
                centre[j] + sigma * rng.sample::<f64, _>(StandardNormal)
            });
            let label = pareto_front_min(x.view());
            Instance::new(ChoiceTask::new(x)?, label)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(DatasetKind::Choice, instances)
}

pub fn gen_hypervolume(spec: &GeneratorSpec) -> Result<Dataset> {
    spec.validate()?;
    let n = spec.task_size;
    let instances = (0..spec.instances)
        .map(|i| {
            let mut rng = instance_rng(spec, i);
            let mut x = Array2::zeros((n, 2));
            for mut row in x.rows_mut() {
                row.assign(&sample_negative_sphere(2, &mut rng));
            }
            let contrib = hv_contributions(x.view(), [0.0, 0.0])?;
            let target = argmax(&contrib).expect("n >= 2");
            Instance::new(ChoiceTask::new(x)?, ChoiceLabel::one_hot(n, target))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(DatasetKind::Discrete, instances)
}

fn gen_counting(spec: &GeneratorSpec) -> Result<Generated> {
    let world = ClassWorld::new(spec);
    let k = spec.classes;
    let mut instances = Vec::with_capacity(spec.instances);
    let mut all_classes = Vec::with_capacity(spec.instances);
    for i in 0..spec.instances {
        let mut rng = instance_rng(spec, i);
        let (task, labels, label) = loop {
            let (task, labels) = world.sample_task(spec.task_size, &mut rng);
            let label = match (spec.family, spec.discrete) {
                (Family::Mode, false) => mode_choice(&labels, k),
                (Family::Mode, true) => {
                    ChoiceLabel::one_hot(labels.len(), world.mode_discrete(&task, &labels))
                }
                (Family::Unique, false) => {
                    let l = unique_choice(&labels, k);
                    if l.count_chosen() == 0 {
                        continue;
                    }
                    l
                }
                (Family::Unique, true) => {
                    let l = unique_choice(&labels, k);
                    if l.count_chosen() != 1 {
                        continue;
                    }
                    l
                }
                _ => unreachable!("counting families only"),
            };
            break (task, labels, label);
        };
        instances.push(Instance::new(task, label)?);
        all_classes.push(labels);
    }
    Ok(Generated {
        dataset: Dataset::new(spec.kind(), instances)?,
        classes: Some(all_classes),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn dominance_examples() {
        assert_eq!(
            pareto_front_min(array![[0.0, 0.0], [1.0, 1.0]].view()),
            ChoiceLabel::new(vec![true, false])
        );
        assert_eq!(
            pareto_front_min(array![[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]].view()),
            ChoiceLabel::all(3, true)
        );
        // equal in one coordinate, better in the other
        assert_eq!(
            pareto_front_min(array![[0.0, 1.0], [0.0, 2.0]].view()),
            ChoiceLabel::new(vec![true, false])
        );
    }

    #[test]
    fn hypervolume_examples() {
        assert_eq!(hypervolume_2d(array![[-1.0, -1.0]].view(), [0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(hypervolume_2d(array![[-1.0, 0.0], [0.0, -1.0]].view(), [0.0, 0.0]).unwrap(), 0.0);
        let two = array![[-2.0, -1.0], [-1.0, -2.0]];
        assert_eq!(hypervolume_2d(two.view(), [0.0, 0.0]).unwrap(), 3.0);
        // own box 2 minus overlap 1
        assert_eq!(hv_contributions(two.view(), [0.0, 0.0]).unwrap(), vec![1.0, 1.0]);
        let dup = array![[-1.0, -1.0], [-1.0, -1.0], [-0.5, -2.0]];
        let c = hv_contributions(dup.view(), [0.0, 0.0]).unwrap();
        assert_eq!(&c[..2], &[0.0, 0.0]);
    }

    #[test]
    fn point_outside_reference_is_domain_error() {
        assert!(matches!(
            hypervolume_2d(array![[0.5, -1.0]].view(), [0.0, 0.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            hypervolume_2d(array![[0.5, -1.0, 0.0]].view(), [0.0, 0.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn counting_examples() {
        let u = unique_choice(&[1, 1, 2, 3, 4, 4, 5, 5, 6, 6], 10);
        assert_eq!(u.chosen(), vec![2, 3]);
        let m = mode_choice(&[1, 1, 2, 4, 4, 5, 5, 6, 6, 6], 10);
        assert_eq!(m.chosen(), vec![7, 8, 9]);
        assert_eq!(
            class_counts(&[1, 2, 4, 4, 4, 5, 5], 10),
            vec![0, 1, 1, 0, 3, 2, 0, 0, 0, 0]
        );
    }

    #[test]
    fn generators_are_deterministic() {
        for family in [Family::Pareto, Family::Hypervolume, Family::Mode, Family::Unique] {
            let spec = GeneratorSpec::new(family, 5, 30, 2, 7);
            let a = generate(&spec).unwrap();
            let b = generate(&spec).unwrap();
            assert_eq!(a, b, "{}", family.name());
        }
    }

    #[test]
    fn instance_streams_do_not_depend_on_count() {
        let small = generate(&GeneratorSpec::new(Family::Pareto, 3, 8, 2, 11)).unwrap();
        let large = generate(&GeneratorSpec::new(Family::Pareto, 10, 8, 2, 11)).unwrap();
        assert_eq!(small.instances[..], large.instances[..3]);
    }

    #[test]
    fn offset_specs_share_the_world_but_not_instances() {
        let spec = GeneratorSpec::new(Family::Unique, 4, 6, 8, 2);
        let held_out = GeneratorSpec { first_instance: 1000, ..spec.clone() };
        assert_eq!(ClassWorld::new(&spec).prototypes(), ClassWorld::new(&held_out).prototypes());
        let (a, b) = (generate(&spec).unwrap(), generate(&held_out).unwrap());
        assert_ne!(a.instances[0], b.instances[0]);
        let shifted = generate(&GeneratorSpec { first_instance: 2, ..spec.clone() }).unwrap();
        assert_eq!(a.instances[2], shifted.instances[0]);
    }

    #[test]
    fn pareto_labels_nonempty_and_centres_in_ball() {
        let data = generate(&GeneratorSpec::new(Family::Pareto, 50, 10, 3, 1)).unwrap();
        assert!(data.instances.iter().all(|i| i.label.count_chosen() >= 1));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let p = sample_unit_ball(3, &mut rng);
            assert!(p.dot(&p) <= 1.0);
        }
    }

    #[test]
    fn hypervolume_points_on_negative_sphere_and_target_on_front() {
        let data = generate(&GeneratorSpec::new(Family::Hypervolume, 40, 10, 2, 3)).unwrap();
        for inst in &data.instances {
            for p in inst.task.objects().rows() {
                assert!((p.dot(&p).sqrt() - 1.0).abs() < 1e-12);
                assert!(p.iter().all(|&v| v <= 0.0));
            }
            let target = inst.label.hot_index().unwrap();
            assert!(pareto_front_min(inst.task.objects()).get(target));
        }
    }

    #[test]
    fn unique_and_mode_labels_follow_counts() {
        let mut spec = GeneratorSpec::new(Family::Unique, 30, 10, 16, 5);
        let g = generate_with_classes(&spec).unwrap();
        for (inst, cls) in g.dataset.instances.iter().zip(g.classes.unwrap()) {
            assert_eq!(inst.label, unique_choice(&cls, 10));
            assert!(inst.label.count_chosen() >= 1);
        }
        spec.discrete = true;
        let g = generate_with_classes(&spec).unwrap();
        assert!(g.dataset.instances.iter().all(|i| i.label.hot_index().is_some()));
        spec.family = Family::Mode;
        let g = generate_with_classes(&spec).unwrap();
        for (inst, cls) in g.dataset.instances.iter().zip(g.classes.unwrap()) {
            let hot = inst.label.hot_index().unwrap();
            assert!(mode_choice(&cls, 10).get(hot));
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(GeneratorSpec::new(Family::Pareto, 0, 5, 2, 0).validate().is_err());
        assert!(GeneratorSpec::new(Family::Pareto, 5, 1, 2, 0).validate().is_err());
        assert!(GeneratorSpec::new(Family::Pareto, 5, 5, 1, 0).validate().is_err());
        assert!(GeneratorSpec::new(Family::Hypervolume, 5, 5, 3, 0).validate().is_err());
    }
}
