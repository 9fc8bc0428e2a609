//! Per-class learnable Gaussian residual layer.
//!
//! Each class `i` owns a scale/shift pair `(a_i, b_i)` defining a residual
//! distribution `a_i * E + b_i` with `E` standard normal. Sampling is
//! reparameterized: the standard-normal draw is taken first and the
//! residual is an affine function of it, so gradients w.r.t. `a` and `b`
//! are exact for a fixed draw. Constraints (`a >= 0`, `b` in `[0, 1]`) are
//! enforced by projection after each optimizer step.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, stream, SeedRng};

/// Per-class scale/shift pairs.
///
/// `dim == 1` is the default scalar-per-class form where one pair is
/// broadcast over every feature dimension; `dim == D` stores an
/// independent pair per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropheterParams {
    num_classes: usize,
    dim: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl PropheterParams {
    pub fn new(num_classes: usize, dim: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if num_classes == 0 || dim == 0 {
            return Err(Error::validation("num_classes and dim must be >= 1"));
        }
        if a.len() != num_classes * dim || b.len() != num_classes * dim {
            return Err(Error::shape(format!(
                "expected {} entries per parameter, got a: {}, b: {}",
                num_classes * dim,
                a.len(),
                b.len()
            )));
        }
        Ok(Self {
            num_classes,
            dim,
            a,
            b,
        })
    }

    pub fn zeros(num_classes: usize) -> Self {
        Self {
            num_classes,
            dim: 1,
            a: vec![0.0; num_classes],
            b: vec![0.0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn a_mut(&mut self) -> &mut [f64] {
        &mut self.a
    }

    pub fn b_mut(&mut self) -> &mut [f64] {
        &mut self.b
    }

    fn entry(&self, class: usize, feature: usize) -> usize {
        debug_assert!(class < self.num_classes);
        if self.dim == 1 {
            class
        } else {
            class * self.dim + feature
        }
    }

    /// Parameter index feeding feature dimension `feature` of `class`;
    /// used when accumulating gradients.
    pub fn param_index(&self, class: usize, feature: usize) -> usize {
        self.entry(class, feature % self.dim.max(1))
    }

    pub fn scale(&self, class: usize, feature: usize) -> f64 {
        self.a[self.param_index(class, feature)]
    }

    pub fn shift(&self, class: usize, feature: usize) -> f64 {
        self.b[self.param_index(class, feature)]
    }

    pub fn is_feasible(&self) -> bool {
        self.a.iter().all(|&v| v >= 0.0 && v.is_finite())
            && self.b.iter().all(|&v| (0.0..=1.0).contains(&v))
    }

    /// Clamp `a` to `[0, inf)` and `b` to `[0, 1]` in place. Idempotent.
    pub fn project_in_place(&mut self) {
        for v in &mut self.a {
            if !(*v >= 0.0) {
                *v = 0.0;
            }
        }
        for v in &mut self.b {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

/// Random feasible initialization: `a` and `b` uniform in `[0, 1]`.
pub fn init_params(num_classes: usize, seed: u64) -> PropheterParams {
    init_params_per_dim(num_classes, 1, seed)
}

/// Per-dimension variant of [`init_params`].
pub fn init_params_per_dim(num_classes: usize, dim: usize, seed: u64) -> PropheterParams {
    let mut rng = rng::rng_for(seed, stream::PARAMS);
    let n = num_classes * dim;
    let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    PropheterParams {
        num_classes,
        dim,
        a,
        b,
    }
}

/// Pure projection of [`PropheterParams::project_in_place`].
pub fn project_params(params: &PropheterParams) -> PropheterParams {
    let mut out = params.clone();
    out.project_in_place();
    out
}

/// A `B x D` matrix of fresh standard-normal draws.
pub fn standard_noise(batch: usize, d: usize, rng: &mut SeedRng) -> Array2<f64> {
    let mut out = Array2::zeros((batch, d));
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    out
}

/// Residual entries `a[y_j] * e_{jd} + b[y_j]` from a fixed noise draw.
pub fn residual_from_noise(
    params: &PropheterParams,
    labels: &[usize],
    noise: &Array2<f64>,
) -> Result<Array2<f64>> {
    if !params.is_feasible() {
        return Err(Error::validation(
            "propheter params infeasible; project before sampling".to_string(),
        ));
    }
    if noise.nrows() != labels.len() {
        return Err(Error::shape(format!(
            "{} noise rows but {} labels",
            noise.nrows(),
            labels.len()
        )));
    }
    let d = noise.ncols();
    if params.dim != 1 && params.dim != d {
        return Err(Error::shape(format!(
            "per-dimension params sized {} applied to width {d}",
            params.dim
        )));
    }
    let mut out = Array2::zeros(noise.raw_dim());
    for (j, &y) in labels.iter().enumerate() {
        if y >= params.num_classes {
            return Err(Error::validation(format!(
                "label {y} out of range [0, {})",
                params.num_classes
            )));
        }
        for k in 0..d {
            out[[j, k]] = params.scale(y, k) * noise[[j, k]] + params.shift(y, k);
        }
    }
    Ok(out)
}

/// Sample a `B x D` residual matrix with fresh standard-normal noise.
/// Row `j` has population mean `b[y_j]` and standard deviation `a[y_j]`.
pub fn sample_residual(
    params: &PropheterParams,
    labels: &[usize],
    d: usize,
    rng: &mut SeedRng,
) -> Result<Array2<f64>> {
    if d == 0 {
        return Err(Error::validation("feature dimension must be >= 1"));
    }
    let noise = standard_noise(labels.len(), d, rng);
    residual_from_noise(params, labels, &noise)
}

/// A batch of features with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub values: Array2<f64>,
    pub labels: Vec<usize>,
}

impl FeatureBatch {
    pub fn new(values: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if values.nrows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                values.nrows(),
                labels.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("features contain non-finite entries"));
        }
        Ok(Self { values, labels })
    }
}

/// Add a residual to every feature entry. Labels pass through unchanged.
pub fn apply_gn(features: &FeatureBatch, residual: &Array2<f64>) -> Result<FeatureBatch> {
    if features.values.dim() != residual.dim() {
        return Err(Error::shape(format!(
            "feature shape {:?} vs residual shape {:?}",
            features.values.dim(),
            residual.dim()
        )));
    }
    Ok(FeatureBatch {
        values: &features.values + residual,
        labels: features.labels.clone(),
    })
}

/// Per-class channel subsets, each of the same size `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMask {
    channels: Vec<Vec<usize>>,
    num_channels: usize,
}

impl KernelMask {
    pub fn new(channels: Vec<Vec<usize>>, num_channels: usize) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::validation("mask needs at least one class"));
        }
        let k = channels[0].len();
        for (class, set) in channels.iter().enumerate() {
            if set.len() != k {
                return Err(Error::validation(format!(
                    "class {class} selects {} channels, class 0 selects {k}",
                    set.len()
                )));
            }
            let mut seen = std::collections::HashSet::new();
            for &ch in set {
                if ch >= num_channels {
                    return Err(Error::validation(format!(
                        "class {class} references channel {ch}, only {num_channels} exist"
                    )));
                }
                if !seen.insert(ch) {
                    return Err(Error::validation(format!(
                        "class {class} repeats channel {ch}"
                    )));
                }
            }
        }
        Ok(Self {
            channels,
            num_channels,
        })
    }

    /// Mask selecting every channel for every class.
    pub fn full(num_classes: usize, num_channels: usize) -> Self {
        Self {
            channels: vec![(0..num_channels).collect(); num_classes],
            num_channels,
        }
    }

    /// Mask selecting no channels (the identity mask).
    pub fn empty(num_classes: usize, num_channels: usize) -> Self {
        Self {
            channels: vec![Vec::new(); num_classes],
            num_channels,
        }
    }

    pub fn k(&self) -> usize {
        self.channels[0].len()
    }

    pub fn num_classes(&self) -> usize {
        self.channels.len()
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn class_channels(&self, class: usize) -> &[usize] {
        &self.channels[class]
    }
}

/// Add the residual only on each sample's class-masked channels; other
/// channels pass through unchanged.
pub fn apply_gn_masked(
    features: &FeatureBatch,
    residual: &Array2<f64>,
    mask: &KernelMask,
) -> Result<FeatureBatch> {
    if features.values.dim() != residual.dim() {
        return Err(Error::shape(format!(
            "feature shape {:?} vs residual shape {:?}",
            features.values.dim(),
            residual.dim()
        )));
    }
    if mask.num_channels() != features.values.ncols() {
        return Err(Error::shape(format!(
            "mask built for {} channels, features have {}",
            mask.num_channels(),
            features.values.ncols()
        )));
    }
    let mut values = features.values.clone();
    for (j, &y) in features.labels.iter().enumerate() {
        if y >= mask.num_classes() {
            return Err(Error::validation(format!(
                "label {y} out of range for mask with {} classes",
                mask.num_classes()
            )));
        }
        for &ch in mask.class_channels(y) {
            values[[j, ch]] += residual[[j, ch]];
        }
    }
    Ok(FeatureBatch {
        values,
        labels: features.labels.clone(),
    })
}
