//! Evaluation metrics: weighted cross-entropy, relative cross entropy (RCE)
//! against the average-CTR naive predictor, weighted PR-AUC with step
//! interpolation, pooled RCE over a shared eval set, and calibration
//! diagnostics. Pure functions over immutable slices.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("metric contract: {0}")]
    Contract(String),
    #[error("metric domain: {0}")]
    Domain(String),
}

/// Predictions are clipped to [CLIP, 1-CLIP] before logs so cross-entropy
/// stays finite.
pub const PREDICTION_CLIP: f64 = 1e-7;

fn clip(p: f64) -> f64 {
    p.clamp(PREDICTION_CLIP, 1.0 - PREDICTION_CLIP)
}

fn check_lengths(preds: usize, labels: usize, weights: usize) -> Result<(), EvalError> {
    if preds != labels || preds != weights {
        return Err(EvalError::Contract(format!(
            "length mismatch: {preds} predictions, {labels} labels, {weights} weights"
        )));
    }
    if preds == 0 {
        return Err(EvalError::Contract("empty evaluation set".into()));
    }
    Ok(())
}

/// Weighted mean negative log-likelihood, with predictions clipped.
pub fn cross_entropy(preds: &[f64], labels: &[bool], weights: &[f64]) -> Result<f64, EvalError> {
    check_lengths(preds.len(), labels.len(), weights.len())?;
    let mut total = 0.0;
    let mut total_weight = 0.0;
    for ((&p, &y), &w) in preds.iter().zip(labels).zip(weights) {
        let p = clip(p);
        total += w * if y { -p.ln() } else { -(1.0 - p).ln() };
        total_weight += w;
    }
    if !(total_weight > 0.0) {
        return Err(EvalError::Contract("total weight must be positive".into()));
    }
    Ok(total / total_weight)
}

/// The constant predictor every model is compared against: the weighted mean
/// label, clipped away from 0 and 1.
pub fn naive_baseline(labels: &[bool], weights: &[f64]) -> Result<f64, EvalError> {
    if labels.is_empty() || labels.len() != weights.len() {
        return Err(EvalError::Contract(format!(
            "length mismatch or empty: {} labels, {} weights",
            labels.len(),
            weights.len()
        )));
    }
    let total_weight: f64 = weights.iter().sum();
    if !(total_weight > 0.0) {
        return Err(EvalError::Contract("total weight must be positive".into()));
    }
    let positive: f64 = labels.iter().zip(weights).filter(|(y, _)| **y).map(|(_, w)| w).sum();
    Ok(clip(positive / total_weight))
}

/// Relative cross entropy: percentage improvement over the naive predictor,
/// (ce_naive - ce_pred) * 100 / ce_naive. Higher is better.
pub fn rce(ce_pred: f64, ce_naive: f64) -> Result<f64, EvalError> {
    if !(ce_naive > 0.0) {
        return Err(EvalError::Domain(format!("ce_naive must be positive, got {ce_naive}")));
    }
    Ok((ce_naive - ce_pred) * 100.0 / ce_naive)
}

/// Area under the weighted precision-recall step curve: thresholds sweep the
/// distinct prediction values in descending order (ties share a threshold),
/// accumulating precision * delta-recall.
pub fn pr_auc(preds: &[f64], labels: &[bool], weights: &[f64]) -> Result<f64, EvalError> {
    check_lengths(preds.len(), labels.len(), weights.len())?;
    let positive_weight: f64 =
        labels.iter().zip(weights).filter(|(y, _)| **y).map(|(_, w)| w).sum();
    if !(positive_weight > 0.0) {
        return Err(EvalError::Domain("PR-AUC needs at least one positive example".into()));
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].total_cmp(&preds[a]).then(a.cmp(&b)));

    let mut area = 0.0;
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        // Consume the whole tie group at this threshold.
        let score = preds[order[i]];
        while i < order.len() && preds[order[i]] == score {
            let idx = order[i];
            if labels[idx] {
                tp += weights[idx];
            } else {
                fp += weights[idx];
            }
            i += 1;
        }
        let recall = tp / positive_weight;
        let precision = tp / (tp + fp);
        area += precision * (recall - prev_recall);
        prev_recall = recall;
    }
    Ok(area)
}

/// Scores several models' predictions over one shared eval set against the
/// shared naive baseline; returns (model id, RCE) in input order.
pub fn pooled_rce(
    model_preds: &[(String, Vec<f64>)],
    labels: &[bool],
    weights: &[f64],
) -> Result<Vec<(String, f64)>, EvalError> {
    let naive = naive_baseline(labels, weights)?;
    let naive_preds = vec![naive; labels.len()];
    let ce_naive = cross_entropy(&naive_preds, labels, weights)?;
    let mut out = Vec::with_capacity(model_preds.len());
    for (id, preds) in model_preds {
        let ce = cross_entropy(preds, labels, weights)?;
        out.push((id.clone(), rce(ce, ce_naive)?));
    }
    Ok(out)
}

/// One equal-width calibration bin over [lo, hi).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
    /// Mean prediction in the bin; absent when the bin is empty.
    pub mean_prediction: Option<f64>,
    /// Fraction of positives in the bin; absent when the bin is empty.
    pub empirical_rate: Option<f64>,
}

/// Buckets predictions into `n_bins` equal-width bins over [0, 1] (the last
/// bin includes 1.0) and reports per-bin mean prediction and positive rate.
pub fn calibration_report(
    preds: &[f64],
    labels: &[bool],
    n_bins: usize,
) -> Result<Vec<CalibrationBin>, EvalError> {
    if n_bins == 0 {
        return Err(EvalError::Contract("n_bins must be at least 1".into()));
    }
    if preds.len() != labels.len() {
        return Err(EvalError::Contract(format!(
            "length mismatch: {} predictions, {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut counts = vec![0u64; n_bins];
    let mut pred_sums = vec![0.0; n_bins];
    let mut pos_counts = vec![0u64; n_bins];
    for (&p, &y) in preds.iter().zip(labels) {
        let p = p.clamp(0.0, 1.0);
        let bin = ((p * n_bins as f64) as usize).min(n_bins - 1);
        counts[bin] += 1;
        pred_sums[bin] += p;
        pos_counts[bin] += y as u64;
    }
    Ok((0..n_bins)
        .map(|i| CalibrationBin {
            lo: i as f64 / n_bins as f64,
            hi: (i + 1) as f64 / n_bins as f64,
            count: counts[i],
            mean_prediction: (counts[i] > 0).then(|| pred_sums[i] / counts[i] as f64),
            empirical_rate: (counts[i] > 0).then(|| pos_counts[i] as f64 / counts[i] as f64),
        })
        .collect())
}

/// Full per-model evaluation record, one JSON object per line of
/// metrics.jsonl.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub n_examples: u64,
    pub cross_entropy: f64,
    pub rce: f64,
    pub pr_auc: f64,
    pub calibration: Vec<CalibrationBin>,
}

impl MetricsReport {
    /// Scores one model's predictions against a precomputed naive CE (so
    /// several models share one baseline).
    pub fn compute(
        model: impl Into<String>,
        preds: &[f64],
        labels: &[bool],
        weights: &[f64],
        ce_naive: f64,
        n_bins: usize,
    ) -> Result<Self, EvalError> {
        let ce = cross_entropy(preds, labels, weights)?;
        Ok(Self {
            model: model.into(),
            n_examples: preds.len() as u64,
            cross_entropy: ce,
            rce: rce(ce, ce_naive)?,
            pr_auc: pr_auc(preds, labels, weights)?,
            calibration: calibration_report(preds, labels, n_bins)?,
        })
    }
}

/// Welch's unequal-variance t statistic and its Welch-Satterthwaite degrees
/// of freedom, for comparing per-seed metric samples from two losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchT {
    pub t: f64,
    pub df: f64,
}

pub fn welch_t(a: &[f64], b: &[f64]) -> Result<WelchT, EvalError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(EvalError::Contract("welch_t needs at least 2 samples per group".into()));
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let var = |xs: &[f64], m: f64| {
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
    };
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (var(a, ma), var(b, mb));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se2 = va / na + vb / nb;
    if !(se2 > 0.0) {
        return Err(EvalError::Domain("zero variance in both samples".into()));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    Ok(WelchT { t, df })
}
