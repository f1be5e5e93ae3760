//! Evaluation metrics (ROC-AUC, accuracy, F1, MCC) and per-sample inference
//! timing.

use std::fmt;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{Scalar, Tensor};

/// Mann–Whitney ROC-AUC: the probability that a random positive outscores a
/// random negative, ties counting one half.
///
/// Computed from integer counts (twice the concordant pairs plus tied
/// pairs), so the only rounding is the final division.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "roc_auc: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("roc_auc scores".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument("roc_auc needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut doubled, mut neg_below) = (0u128, 0u128);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut n) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        doubled += 2 * p * neg_below + p * n;
        neg_below += n;
        i = j;
    }
    Ok(doubled as f64 / (2 * pos * neg) as f64)
}

/// Confusion counts at a threshold; a sample is predicted positive when
/// `score >= threshold`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn from_scores(scores: &[f64], labels: &[bool], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for (&s, &l) in scores.iter().zip(labels) {
            match (s >= threshold, l) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// `2TP / (2TP + FP + FN)`, 0 when the denominator vanishes.
    pub fn f1(&self) -> f64 {
        let d = 2 * self.tp + self.fp + self.fn_;
        if d == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / d as f64
        }
    }

    /// Matthews correlation, 0 when any marginal is empty.
    pub fn mcc(&self) -> f64 {
        let (tp, fp, tn, fn_) = (self.tp as f64, self.fp as f64, self.tn as f64, self.fn_ as f64);
        let factors = [tp + fp, tp + fn_, tn + fp, tn + fn_];
        if factors.contains(&0.0) {
            return 0.0;
        }
        (tp * tn - fp * fn_) / factors.iter().product::<f64>().sqrt()
    }
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub auc: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub mcc: f64,
    pub confusion: Confusion,
    pub threshold: f64,
}

/// All four metrics; errors unless both classes are present.
pub fn evaluate(scores: &[f64], labels: &[bool], threshold: f64) -> Result<EvalReport> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside (0, 1)")));
    }
    let auc = roc_auc(scores, labels)?;
    let confusion = Confusion::from_scores(scores, labels, threshold);
    Ok(EvalReport {
        auc,
        accuracy: confusion.accuracy(),
        f1: confusion.f1(),
        mcc: confusion.mcc(),
        confusion,
        threshold,
    })
}

impl fmt::Display for EvalReport {
    /// One-line JSON object.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.confusion;
        write!(
            f,
            "{{\"auc\":{:.6},\"accuracy\":{:.6},\"f1\":{:.6},\"mcc\":{:.6},\"tp\":{},\"fp\":{},\"tn\":{},\"fn\":{},\"threshold\":{}}}",
            self.auc, self.accuracy, self.f1, self.mcc, c.tp, c.fp, c.tn, c.fn_, self.threshold
        )
    }
}

/// Per-sample inference time in milliseconds over repeated timed runs.
#[derive(Clone, Debug, PartialEq)]
pub struct PsitReport {
    pub per_sample_ms: Vec<f64>,
    pub median_ms: f64,
    pub p95_ms: f64,
}

/// Linear-interpolated quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub const MIN_WARMUP: usize = 3;

/// Time `run` (which processes `batch` samples) `repetitions` times after
/// `warmup` untimed calls (at least [`MIN_WARMUP`]).
pub fn measure_psit_with(
    batch: usize,
    repetitions: usize,
    warmup: usize,
    mut run: impl FnMut() -> Result<()>,
) -> Result<PsitReport> {
    if batch == 0 || repetitions == 0 {
        return Err(Error::InvalidArgument("psit needs batch >= 1 and repetitions >= 1".into()));
    }
    for _ in 0..warmup.max(MIN_WARMUP) {
        run()?;
    }
    let mut per_sample_ms = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        run()?;
        per_sample_ms.push(start.elapsed().as_secs_f64() * 1e3 / batch as f64);
    }
    let mut sorted = per_sample_ms.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(PsitReport {
        median_ms: quantile_sorted(&sorted, 0.5),
        p95_ms: quantile_sorted(&sorted, 0.95),
        per_sample_ms,
    })
}

/// PSIT of `model` on the `(B, T, H, W, Cin)` batch `x`.
pub fn measure_psit<F: Scalar>(model: &Model<F>, x: &Tensor<F>, repetitions: usize) -> Result<PsitReport> {
    let batch = x.shape().first().copied().unwrap_or(0);
    measure_psit_with(batch, repetitions, MIN_WARMUP, || model.predict(x).map(drop))
}
