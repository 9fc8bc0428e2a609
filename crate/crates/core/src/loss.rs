//! Classification losses for imbalanced data, plus the feature-matching
//! distillation loss.
//!
//! Reference semantics, all batch-mean reduced:
//! - cross entropy: `-log softmax(z)[y]`
//! - focal: `-(1 - p_y)^gamma * log p_y`
//! - class-balanced: cross entropy weighted by effective-number class
//!   weights `(1 - beta) / (1 - beta^{n_i})`, normalized to mean 1
//! - balanced softmax: cross entropy over logits shifted by `log n_j`
//! - feature distillation: mean squared error over all elements

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tagged choice of classification loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Focal { gamma: f64 },
    ClassBalanced { beta: f64 },
    BalancedSoftmax,
}

impl LossKind {
    pub fn label(&self) -> String {
        match self {
            LossKind::CrossEntropy => "CE Loss".to_string(),
            LossKind::Focal { gamma } => format!("Focal Loss (gamma = {gamma})"),
            LossKind::ClassBalanced { beta } => format!("Class-Balanced Loss (beta = {beta})"),
            LossKind::BalancedSoftmax => "Balanced Softmax Loss".to_string(),
        }
    }

    fn needs_counts(&self) -> bool {
        matches!(
            self,
            LossKind::ClassBalanced { .. } | LossKind::BalancedSoftmax
        )
    }
}

/// Loss choice plus the per-class training counts required by the
/// count-aware kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_counts: Option<Vec<usize>>,
}

impl LossSpec {
    pub fn cross_entropy() -> Self {
        Self {
            kind: LossKind::CrossEntropy,
            class_counts: None,
        }
    }

    pub fn with_counts(kind: LossKind, counts: &[usize]) -> Self {
        Self {
            kind,
            class_counts: Some(counts.to_vec()),
        }
    }

    /// Validate and precompute per-class terms.
    pub fn resolve(&self) -> Result<ResolvedLoss> {
        match &self.kind {
            LossKind::CrossEntropy => Ok(ResolvedLoss {
                kind: self.kind.clone(),
                weights: None,
                log_counts: None,
            }),
            LossKind::Focal { gamma } => {
                if !(*gamma >= 0.0) || !gamma.is_finite() {
                    return Err(Error::validation(format!(
                        "focal gamma must be >= 0, got {gamma}"
                    )));
                }
                Ok(ResolvedLoss {
                    kind: self.kind.clone(),
                    weights: None,
                    log_counts: None,
                })
            }
            LossKind::ClassBalanced { beta } => {
                let counts = self.counts_or_err()?;
                let weights = class_balanced_weights(counts, *beta)?;
                Ok(ResolvedLoss {
                    kind: self.kind.clone(),
                    weights: Some(weights),
                    log_counts: None,
                })
            }
            LossKind::BalancedSoftmax => {
                let counts = self.counts_or_err()?;
                let log_counts = log_counts(counts)?;
                Ok(ResolvedLoss {
                    kind: self.kind.clone(),
                    weights: None,
                    log_counts: Some(log_counts),
                })
            }
        }
    }

    fn counts_or_err(&self) -> Result<&[usize]> {
        self.class_counts
            .as_deref()
            .ok_or_else(|| {
                Error::validation(format!(
                    "{} requires per-class counts",
                    self.kind.label()
                ))
            })
    }
}

/// A validated loss with count-derived terms precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedLoss {
    kind: LossKind,
    weights: Option<Vec<f64>>,
    log_counts: Option<Vec<f64>>,
}

impl ResolvedLoss {
    pub fn kind(&self) -> &LossKind {
        &self.kind
    }

    /// Loss and gradient w.r.t. the logits for a single sample, unreduced.
    /// Batch mean is the caller's responsibility.
    pub fn per_sample(&self, logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
        if label >= logits.len() {
            return Err(Error::validation(format!(
                "label {label} out of range for {} logits",
                logits.len()
            )));
        }
        match &self.kind {
            LossKind::CrossEntropy => Ok(ce_per_sample(logits, label, 1.0)),
            LossKind::ClassBalanced { .. } => {
                let w = self.weights.as_ref().expect("resolved CB has weights");
                Ok(ce_per_sample(logits, label, w[label]))
            }
            LossKind::BalancedSoftmax => {
                let lc = self.log_counts.as_ref().expect("resolved BSM has log counts");
                if lc.len() != logits.len() {
                    return Err(Error::shape(format!(
                        "{} class counts for {} logits",
                        lc.len(),
                        logits.len()
                    )));
                }
                let shifted: Vec<f64> = logits.iter().zip(lc).map(|(z, l)| z + l).collect();
                let (value, grad) = ce_per_sample(&shifted, label, 1.0);
                Ok((value, grad))
            }
            LossKind::Focal { gamma } => Ok(focal_per_sample(logits, label, *gamma)),
        }
    }

    /// Batch-mean loss value.
    pub fn batch_value(&self, logits: &Array2<f64>, labels: &[usize]) -> Result<f64> {
        check_batch(logits, labels)?;
        let mut total = 0.0;
        for (row, &y) in logits.rows().into_iter().zip(labels) {
            let (v, _) = self.per_sample(row.as_slice().expect("contiguous row"), y)?;
            total += v;
        }
        Ok(total / labels.len() as f64)
    }
}

fn check_batch(logits: &Array2<f64>, labels: &[usize]) -> Result<()> {
    if logits.nrows() != labels.len() {
        return Err(Error::shape(format!(
            "{} logit rows but {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::validation("empty batch"));
    }
    Ok(())
}

/// Numerically stable log softmax.
fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|z| z - log_z).collect()
}

fn ce_per_sample(logits: &[f64], label: usize, weight: f64) -> (f64, Vec<f64>) {
    let logp = log_softmax(logits);
    let value = -weight * logp[label];
    let mut grad: Vec<f64> = logp.iter().map(|lp| weight * lp.exp()).collect();
    grad[label] -= weight;
    (value, grad)
}

fn focal_per_sample(logits: &[f64], label: usize, gamma: f64) -> (f64, Vec<f64>) {
    if gamma == 0.0 {
        return ce_per_sample(logits, label, 1.0);
    }
    let logp = log_softmax(logits);
    let p: Vec<f64> = logp.iter().map(|lp| lp.exp()).collect();
    let py = p[label];
    let q = 1.0 - py;
    if q <= 0.0 {
        // Saturated prediction: loss and gradient both vanish.
        return (0.0, vec![0.0; logits.len()]);
    }
    let value = -q.powf(gamma) * logp[label];
    // d/dp [-(1-p)^g ln p] = g (1-p)^{g-1} ln p - (1-p)^g / p,
    // chained through dp_y/dz_k = p_y (1[k=y] - p_k).
    let dvalue_dpy = gamma * q.powf(gamma - 1.0) * logp[label] - q.powf(gamma) / py;
    let grad: Vec<f64> = p
        .iter()
        .enumerate()
        .map(|(k, &pk)| {
            let indicator = if k == label { 1.0 } else { 0.0 };
            dvalue_dpy * py * (indicator - pk)
        })
        .collect();
    (value, grad)
}

fn log_counts(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.iter().any(|&n| n == 0) {
        return Err(Error::validation(
            "balanced softmax requires every class count >= 1".to_string(),
        ));
    }
    Ok(counts.iter().map(|&n| (n as f64).ln()).collect())
}

/// Mean cross entropy `-log softmax(z)[y]` over the batch.
pub fn ce_loss(logits: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    LossSpec::cross_entropy().resolve()?.batch_value(logits, labels)
}

/// Mean focal loss `-(1 - p_y)^gamma log p_y`; gamma = 0 recovers
/// cross entropy exactly.
pub fn focal_loss(logits: &Array2<f64>, labels: &[usize], gamma: f64) -> Result<f64> {
    LossSpec {
        kind: LossKind::Focal { gamma },
        class_counts: None,
    }
    .resolve()?
    .batch_value(logits, labels)
}

/// Effective-number class weights `(1 - beta) / (1 - beta^{n_i})`,
/// normalized to mean 1 so overall loss scale stays comparable across beta.
pub fn class_balanced_weights(counts: &[usize], beta: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::validation(format!(
            "class-balanced beta must lie in [0, 1), got {beta}"
        )));
    }
    if counts.is_empty() || counts.iter().any(|&n| n == 0) {
        return Err(Error::validation(
            "class-balanced weights require every class count >= 1".to_string(),
        ));
    }
    let raw: Vec<f64> = counts
        .iter()
        .map(|&n| (1.0 - beta) / (1.0 - beta.powi(n as i32)))
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(raw.into_iter().map(|w| w / mean).collect())
}

/// Mean class-balanced cross entropy.
pub fn class_balanced_loss(
    logits: &Array2<f64>,
    labels: &[usize],
    counts: &[usize],
    beta: f64,
) -> Result<f64> {
    LossSpec::with_counts(LossKind::ClassBalanced { beta }, counts)
        .resolve()?
        .batch_value(logits, labels)
}

/// Mean cross entropy over logits shifted by `log n_j`.
pub fn balanced_softmax_loss(
    logits: &Array2<f64>,
    labels: &[usize],
    counts: &[usize],
) -> Result<f64> {
    LossSpec::with_counts(LossKind::BalancedSoftmax, counts)
        .resolve()?
        .batch_value(logits, labels)
}

/// Mean squared error over all `B x D` elements.
pub fn feature_distill_loss(v: &Array2<f64>, v_hat: &Array2<f64>) -> Result<f64> {
    if v.dim() != v_hat.dim() {
        return Err(Error::shape(format!(
            "feature shapes {:?} vs {:?}",
            v.dim(),
            v_hat.dim()
        )));
    }
    let n = v.len();
    if n == 0 {
        return Err(Error::validation("empty feature batch"));
    }
    let sum: f64 = v
        .iter()
        .zip(v_hat.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / n as f64)
}

/// Combined student objective: classification term plus
/// `alpha * feature_distill_loss`.
pub fn student_loss(
    logits: &Array2<f64>,
    labels: &[usize],
    spec: &LossSpec,
    v: &Array2<f64>,
    v_hat: &Array2<f64>,
    alpha: f64,
) -> Result<f64> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::validation(format!(
            "alpha must be finite and >= 0, got {alpha}"
        )));
    }
    let cls = spec.resolve()?.batch_value(logits, labels)?;
    Ok(cls + alpha * feature_distill_loss(v, v_hat)?)
}
