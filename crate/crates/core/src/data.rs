//! Long-tailed dataset synthesis and batch sampling.
//!
//! Provides the exponential-decay class-size profile used to thin a
//! balanced source into a long-tailed split, a synthetic Gaussian-mixture
//! generator for desk-scale experiments, and the two batch samplers
//! (instance and class-balanced). All operations are pure functions of
//! their inputs and seeds.

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, stream};

/// Declarative description of an exponentially decaying class-size profile.
///
/// `imbalance_factor` is the ratio between the largest and the smallest
/// per-class training count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTailSpec {
    pub num_classes: usize,
    pub max_count: usize,
    pub imbalance_factor: f64,
}

impl LongTailSpec {
    pub fn new(num_classes: usize, max_count: usize, imbalance_factor: f64) -> Result<Self> {
        let spec = Self {
            num_classes,
            max_count,
            imbalance_factor,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::validation(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.max_count == 0 {
            return Err(Error::validation("max_count must be >= 1"));
        }
        if !(self.imbalance_factor >= 1.0) || !self.imbalance_factor.is_finite() {
            return Err(Error::validation(format!(
                "imbalance_factor must be >= 1, got {}",
                self.imbalance_factor
            )));
        }
        Ok(())
    }
}

/// Per-class sample counts `n_i = round(max_count * IF^(-i/(C-1)))`,
/// floored at 1 so no class vanishes. Non-increasing in the class index;
/// class 0 holds `max_count` samples and class C-1 holds
/// `round(max_count / IF)`.
pub fn per_class_counts(spec: &LongTailSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    let c1 = (spec.num_classes - 1) as f64;
    Ok((0..spec.num_classes)
        .map(|i| {
            let n = spec.max_count as f64 * spec.imbalance_factor.powf(-(i as f64) / c1);
            (n.round() as usize).max(1)
        })
        .collect())
}

/// An ordered labelled sample collection.
///
/// Rows of `features` are individual inputs; `labels[i]` is the class of
/// row `i`. `per_class_counts` is always consistent with `labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    features: Array2<f64>,
    labels: Vec<usize>,
    per_class_counts: Vec<usize>,
}

impl DatasetSplit {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::validation("num_classes must be >= 1"));
        }
        if features.nrows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("features contain non-finite entries"));
        }
        let mut counts = vec![0usize; num_classes];
        for (i, &y) in labels.iter().enumerate() {
            if y >= num_classes {
                return Err(Error::validation(format!(
                    "label {y} at row {i} out of range [0, {num_classes})"
                )));
            }
            counts[y] += 1;
        }
        Ok(Self {
            features,
            labels,
            per_class_counts: counts,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.per_class_counts.len()
    }

    pub fn input_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn per_class_counts(&self) -> &[usize] {
        &self.per_class_counts
    }

    pub fn sample(&self, i: usize) -> (ArrayView1<'_, f64>, usize) {
        (self.features.row(i), self.labels[i])
    }

    /// Row indices belonging to `class`, in storage order.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == class)
            .map(|(i, _)| i)
            .collect()
    }

    /// Copy the given rows into a dense batch.
    pub fn gather(&self, indices: &[usize]) -> (Array2<f64>, Vec<usize>) {
        let mut inputs = Array2::zeros((indices.len(), self.input_dim()));
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            inputs.row_mut(row).assign(&self.features.row(i));
            labels.push(self.labels[i]);
        }
        (inputs, labels)
    }
}

fn default_test_per_class() -> usize {
    100
}

/// Synthetic Gaussian-mixture dataset description: one spherical Gaussian
/// per class, means pairwise `class_separation * sqrt(2)` apart (or better),
/// per-class train counts given explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMixtureSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    pub class_separation: f64,
    pub within_class_std: f64,
    pub counts: Vec<usize>,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
}

impl SynthMixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::validation("num_classes must be >= 1"));
        }
        if self.input_dim == 0 {
            return Err(Error::validation("input_dim must be >= 1"));
        }
        if !(self.class_separation > 0.0) {
            return Err(Error::validation("class_separation must be > 0"));
        }
        if !(self.within_class_std > 0.0) {
            return Err(Error::validation("within_class_std must be > 0"));
        }
        if self.counts.len() != self.num_classes {
            return Err(Error::validation(format!(
                "counts has {} entries for {} classes",
                self.counts.len(),
                self.num_classes
            )));
        }
        if self.counts.iter().any(|&c| c == 0) {
            return Err(Error::validation("every class count must be >= 1"));
        }
        if self.test_per_class == 0 {
            return Err(Error::validation("test_per_class must be >= 1"));
        }
        Ok(())
    }
}

/// Orthonormal basis from seeded Gram-Schmidt on a Gaussian matrix.
fn random_rotation(dim: usize, rng: &mut rng::SeedRng) -> Array2<f64> {
    let mut q = Array2::<f64>::zeros((dim, dim));
    for j in 0..dim {
        loop {
            let mut v: Array1<f64> = Array1::from_iter((0..dim).map(|_| rng.sample(StandardNormal)));
            for k in 0..j {
                let qk = q.column(k);
                let proj = v.dot(&qk);
                v = &v - &(&qk * proj);
            }
            let norm = v.dot(&v).sqrt();
            if norm > 1e-8 {
                q.column_mut(j).assign(&(&v / norm));
                break;
            }
        }
    }
    q
}

/// Deterministic class means: signed scaled basis vectors rotated by a
/// seeded orthonormal map, so pairwise distances are at least
/// `separation * sqrt(2)` whenever `C <= 2 * D`. Extra classes beyond the
/// signed basis fall back to random unit directions.
fn class_means(spec: &SynthMixtureSpec, rng: &mut rng::SeedRng) -> Array2<f64> {
    let d = spec.input_dim;
    let sep = spec.class_separation;
    let rot = random_rotation(d, rng);
    let mut means = Array2::zeros((spec.num_classes, d));
    for c in 0..spec.num_classes {
        if c < d {
            means.row_mut(c).assign(&(&rot.column(c) * sep));
        } else if c < 2 * d {
            means.row_mut(c).assign(&(&rot.column(c - d) * -sep));
        } else {
            let mut v: Array1<f64> = Array1::from_iter((0..d).map(|_| rng.sample(StandardNormal)));
            let norm = v.dot(&v).sqrt().max(1e-12);
            v.mapv_inplace(|x| x / norm * sep);
            means.row_mut(c).assign(&v);
        }
    }
    means
}

fn draw_split(
    spec: &SynthMixtureSpec,
    means: &Array2<f64>,
    counts: &[usize],
    rng: &mut rng::SeedRng,
) -> Result<DatasetSplit> {
    let total: usize = counts.iter().sum();
    let mut features = Array2::zeros((total, spec.input_dim));
    let mut labels = Vec::with_capacity(total);
    let mut row = 0;
    for (c, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            for d in 0..spec.input_dim {
                let e: f64 = rng.sample(StandardNormal);
                features[[row, d]] = means[[c, d]] + spec.within_class_std * e;
            }
            labels.push(c);
            row += 1;
        }
    }
    DatasetSplit::new(features, labels, spec.num_classes)
}

/// Generate a (train, test) pair from a Gaussian-mixture description.
///
/// The train split follows `spec.counts`; the test split is balanced with
/// `spec.test_per_class` samples per class. Both are fresh draws from the
/// same mixture, deterministic in `seed`.
pub fn make_synthetic_mixture(
    spec: &SynthMixtureSpec,
    seed: u64,
) -> Result<(DatasetSplit, DatasetSplit)> {
    spec.validate()?;
    let mut rng = rng::rng_for(seed, stream::DATA);
    let means = class_means(spec, &mut rng);
    let train = draw_split(spec, &means, &spec.counts, &mut rng)?;
    let test_counts = vec![spec.test_per_class; spec.num_classes];
    let test = draw_split(spec, &means, &test_counts, &mut rng)?;
    Ok((train, test))
}

/// Thin a balanced source split down to the long-tailed profile of `spec`.
///
/// Within each class the kept subset is a uniform random choice fixed by
/// `seed`; kept samples stay in source order.
pub fn subsample_longtail(
    source: &DatasetSplit,
    spec: &LongTailSpec,
    seed: u64,
) -> Result<DatasetSplit> {
    let target = per_class_counts(spec)?;
    if source.num_classes() != spec.num_classes {
        return Err(Error::validation(format!(
            "source has {} classes, spec has {}",
            source.num_classes(),
            spec.num_classes
        )));
    }
    let mut rng = rng::rng_for(seed, stream::DATA);
    let mut picked = Vec::new();
    for (class, &want) in target.iter().enumerate() {
        let mut idx = source.class_indices(class);
        if idx.len() < want {
            return Err(Error::validation(format!(
                "class {class} has only {} source samples, need {want}",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let mut chosen = idx[..want].to_vec();
        chosen.sort_unstable();
        picked.extend(chosen);
    }
    let (features, labels) = source.gather(&picked);
    DatasetSplit::new(features, labels, source.num_classes())
}

/// Uniform instance sampler: every epoch is a seeded shuffle of all rows
/// partitioned into batches, so each instance appears exactly once per
/// epoch and class frequencies in expectation follow the data.
#[derive(Debug, Clone)]
pub struct InstanceSampler {
    num_samples: usize,
    batch_size: usize,
    seed: u64,
}

impl InstanceSampler {
    pub fn new(split: &DatasetSplit, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::validation("batch_size must be >= 1"));
        }
        if batch_size > split.len() {
            return Err(Error::validation(format!(
                "batch_size {} exceeds dataset size {}",
                batch_size,
                split.len()
            )));
        }
        Ok(Self {
            num_samples: split.len(),
            batch_size,
            seed,
        })
    }

    /// All batches of one epoch, as row indices into the split.
    pub fn epoch(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.num_samples).collect();
        let mut rng = rng::epoch_rng(self.seed, stream::SHUFFLE, epoch);
        order.shuffle(&mut rng);
        order
            .chunks(self.batch_size)
            .map(|c| c.to_vec())
            .collect()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.num_samples.div_ceil(self.batch_size)
    }
}

/// Class-balanced sampler: each slot draws a class uniformly, then an
/// instance uniformly within the class (with replacement). Provided for
/// sampling ablations; the main pipeline uses [`InstanceSampler`].
#[derive(Debug, Clone)]
pub struct ClassBalancedSampler {
    class_indices: Vec<Vec<usize>>,
    batch_size: usize,
    batches_per_epoch: usize,
    seed: u64,
}

impl ClassBalancedSampler {
    pub fn new(split: &DatasetSplit, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::validation("batch_size must be >= 1"));
        }
        let class_indices: Vec<Vec<usize>> = (0..split.num_classes())
            .map(|c| split.class_indices(c))
            .collect();
        if let Some(empty) = class_indices.iter().position(|v| v.is_empty()) {
            return Err(Error::validation(format!(
                "class {empty} is empty; class-balanced sampling needs every class populated"
            )));
        }
        Ok(Self {
            class_indices,
            batch_size,
            batches_per_epoch: split.len().div_ceil(batch_size),
            seed,
        })
    }

    pub fn epoch(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut rng = rng::epoch_rng(self.seed, stream::SHUFFLE, epoch);
        let num_classes = self.class_indices.len();
        (0..self.batches_per_epoch)
            .map(|_| {
                (0..self.batch_size)
                    .map(|_| {
                        let c = rng.random_range(0..num_classes);
                        let within = rng.random_range(0..self.class_indices[c].len());
                        self.class_indices[c][within]
                    })
                    .collect()
            })
            .collect()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.batches_per_epoch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(c: usize, n_max: usize, imb: f64) -> LongTailSpec {
        LongTailSpec::new(c, n_max, imb).unwrap()
    }

    #[test]
    fn counts_if100_endpoints_and_profile() {
        // Frozen from an arbitrary-precision evaluation of n_max * IF^(-i/9).
        let expect = [5000, 2997, 1797, 1077, 646, 387, 232, 139, 83, 50];
        let got = per_class_counts(&spec(10, 5000, 100.0)).unwrap();
        assert_eq!(got, expect);
    }

    #[test]
    fn counts_balanced_when_if_one() {
        let got = per_class_counts(&spec(10, 5000, 1.0)).unwrap();
        assert!(got.iter().all(|&n| n == 5000));
    }

    #[test]
    fn counts_rejects_bad_specs() {
        assert!(LongTailSpec::new(1, 100, 10.0).is_err());
        assert!(LongTailSpec::new(10, 100, 0.5).is_err());
        assert!(LongTailSpec::new(10, 0, 10.0).is_err());
    }

    #[test]
    fn counts_never_below_one() {
        let got = per_class_counts(&spec(10, 10, 1000.0)).unwrap();
        assert_eq!(*got.last().unwrap(), 1);
        assert!(got.iter().all(|&n| n >= 1));
    }

    fn balanced_source(c: usize, per_class: usize, dim: usize) -> DatasetSplit {
        let n = c * per_class;
        let mut features = Array2::zeros((n, dim));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i / per_class;
            features[[i, 0]] = i as f64;
            labels.push(class);
        }
        DatasetSplit::new(features, labels, c).unwrap()
    }

    #[test]
    fn subsample_matches_profile_and_is_deterministic() {
        let source = balanced_source(10, 200, 3);
        let lt = spec(10, 200, 100.0);
        let a = subsample_longtail(&source, &lt, 0).unwrap();
        let b = subsample_longtail(&source, &lt, 0).unwrap();
        assert_eq!(a.per_class_counts(), per_class_counts(&lt).unwrap());
        assert_eq!(a, b);
        let c = subsample_longtail(&source, &lt, 1).unwrap();
        assert_ne!(a.features(), c.features());
    }

    #[test]
    fn subsample_if_one_keeps_all_class_contents() {
        let source = balanced_source(4, 8, 2);
        let lt = spec(4, 8, 1.0);
        let out = subsample_longtail(&source, &lt, 3).unwrap();
        assert_eq!(out.len(), source.len());
        for class in 0..4 {
            let mut src: Vec<f64> = source
                .class_indices(class)
                .iter()
                .map(|&i| source.features()[[i, 0]])
                .collect();
            let mut got: Vec<f64> = out
                .class_indices(class)
                .iter()
                .map(|&i| out.features()[[i, 0]])
                .collect();
            src.sort_by(f64::total_cmp);
            got.sort_by(f64::total_cmp);
            assert_eq!(src, got);
        }
    }

    #[test]
    fn subsample_insufficient_names_class() {
        let source = balanced_source(10, 30, 2);
        let lt = spec(10, 200, 100.0);
        let err = subsample_longtail(&source, &lt, 0).unwrap_err();
        assert!(err.to_string().contains("class 0"), "{err}");
    }

    fn synth_spec() -> SynthMixtureSpec {
        SynthMixtureSpec {
            num_classes: 3,
            input_dim: 4,
            class_separation: 5.0,
            within_class_std: 0.5,
            counts: vec![20, 10, 5],
            test_per_class: 8,
        }
    }

    #[test]
    fn synthetic_counts_and_determinism() {
        let spec = synth_spec();
        let (train, test) = make_synthetic_mixture(&spec, 7).unwrap();
        assert_eq!(train.per_class_counts(), &[20, 10, 5]);
        assert_eq!(test.per_class_counts(), &[8, 8, 8]);
        let (train2, _) = make_synthetic_mixture(&spec, 7).unwrap();
        assert_eq!(train, train2);
    }

    #[test]
    fn synthetic_balanced_when_counts_equal() {
        let mut spec = synth_spec();
        spec.counts = vec![12, 12, 12];
        let (train, _) = make_synthetic_mixture(&spec, 0).unwrap();
        assert_eq!(train.per_class_counts(), &[12, 12, 12]);
    }

    #[test]
    fn synthetic_means_well_separated() {
        let spec = SynthMixtureSpec {
            num_classes: 10,
            input_dim: 32,
            class_separation: 4.0,
            within_class_std: 1.0,
            counts: vec![5; 10],
            test_per_class: 2,
        };
        let mut rng = rng::rng_for(11, stream::DATA);
        let means = class_means(&spec, &mut rng);
        for i in 0..10 {
            for j in (i + 1)..10 {
                let diff = &means.row(i) - &means.row(j);
                let dist = diff.dot(&diff).sqrt();
                assert!(
                    dist >= 4.0 * std::f64::consts::SQRT_2 - 1e-9,
                    "classes {i},{j} too close: {dist}"
                );
            }
        }
    }

    #[test]
    fn instance_sampler_partitions_each_epoch() {
        let source = balanced_source(5, 20, 2);
        let sampler = InstanceSampler::new(&source, 32, 0).unwrap();
        let batches = sampler.epoch(0);
        let sizes: Vec<usize> = batches.iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![32, 32, 32, 4]);
        let mut seen: Vec<usize> = batches.into_iter().flatten().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn instance_sampler_seeded() {
        let source = balanced_source(5, 20, 2);
        let a = InstanceSampler::new(&source, 16, 9).unwrap().epoch(3);
        let b = InstanceSampler::new(&source, 16, 9).unwrap().epoch(3);
        assert_eq!(a, b);
        let c = InstanceSampler::new(&source, 16, 9).unwrap().epoch(4);
        assert_ne!(a, c);
    }

    #[test]
    fn instance_sampler_rejects_oversize_batch() {
        let source = balanced_source(2, 4, 2);
        assert!(InstanceSampler::new(&source, 9, 0).is_err());
        assert!(InstanceSampler::new(&source, 0, 0).is_err());
    }

    #[test]
    fn class_balanced_frequencies_near_uniform() {
        // 3 classes with very skewed counts; drawn class frequencies should
        // still be uniform within 2%.
        let mut features = Array2::zeros((111, 1));
        let mut labels = vec![0usize; 100];
        labels.extend(vec![1usize; 10]);
        labels.extend(vec![2usize; 1]);
        for i in 0..111 {
            features[[i, 0]] = i as f64;
        }
        let split = DatasetSplit::new(features, labels, 3).unwrap();
        let sampler = ClassBalancedSampler::new(&split, 30, 0).unwrap();
        let mut class_hits = [0usize; 3];
        let mut total = 0usize;
        for epoch in 0..300 {
            for batch in sampler.epoch(epoch) {
                for idx in batch {
                    class_hits[split.labels()[idx]] += 1;
                    total += 1;
                }
            }
        }
        for hits in class_hits {
            let freq = hits as f64 / total as f64;
            assert!((freq - 1.0 / 3.0).abs() < 0.02, "freq {freq}");
        }
    }

    #[test]
    fn class_balanced_rejects_empty_class() {
        let features = Array2::zeros((4, 1));
        let labels = vec![0, 0, 2, 2];
        let split = DatasetSplit::new(features, labels, 3).unwrap();
        let err = ClassBalancedSampler::new(&split, 2, 0).unwrap_err();
        assert!(err.to_string().contains("class 1"), "{err}");
    }

    #[test]
    fn class_balanced_single_class_draws_everything() {
        let mut features = Array2::zeros((6, 1));
        for i in 0..6 {
            features[[i, 0]] = i as f64;
        }
        let split = DatasetSplit::new(features, vec![0; 6], 1).unwrap();
        let sampler = ClassBalancedSampler::new(&split, 4, 1).unwrap();
        let batches = sampler.epoch(0);
        assert_eq!(batches.len(), 2);
        assert!(batches.iter().flatten().all(|&i| i < 6));
    }
}
