//! Ranking and regression metrics.

use super::EvalError;

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::Config(format!(
            "{} scores against {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(EvalError::Config("no examples to score".into()));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(EvalError::Config(format!("non-finite score {s}")));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(EvalError::Config("labels must be 0 or 1".into()));
    }
    Ok(())
}

/// Area under the ROC curve in its rank-statistic form: the fraction
/// of positive/negative pairs ranked correctly, with half credit for
/// ties. Computed from midranks in O(n log n).
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::Undefined(format!(
            "auc_roc needs both classes, got {n_pos} positives and {n_neg} negatives"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Midrank of the tie group covering sorted positions i..j.
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let p = n_pos as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n_neg as f64))
}

/// Average precision: precision accumulated at each positive along the
/// descending-score sweep, ties visited in index order.
pub fn auc_pr(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 {
        return Err(EvalError::Undefined(
            "auc_pr needs at least one positive label".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (k, &idx) in order.iter().enumerate() {
        if labels[idx] == 1 {
            hits += 1;
            ap += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(ap / n_pos as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankMetric {
    AucRoc,
    AucPr,
}

impl RankMetric {
    fn compute(self, scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
        match self {
            Self::AucRoc => auc_roc(scores, labels),
            Self::AucPr => auc_pr(scores, labels),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MultilabelSummary {
    /// Unweighted mean over labels where the metric is defined.
    pub macro_value: f64,
    /// Metric over the flattened (score, label) pairs.
    pub micro_value: f64,
    /// Labels skipped from the macro mean as undefined.
    pub skipped: usize,
}

/// Macro and micro aggregation of a ranking metric over label columns;
/// `scores` and `labels` are per-example rows of equal width.
pub fn multilabel_aggregate(
    scores: &[Vec<f64>],
    labels: &[Vec<u8>],
    metric: RankMetric,
) -> Result<MultilabelSummary, EvalError> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(EvalError::Config(format!(
            "{} score rows against {} label rows",
            scores.len(),
            labels.len()
        )));
    }
    let width = scores[0].len();
    if width == 0
        || scores.iter().any(|r| r.len() != width)
        || labels.iter().any(|r| r.len() != width)
    {
        return Err(EvalError::Config("ragged label matrix".into()));
    }

    let mut sum = 0.0;
    let mut defined = 0usize;
    for col in 0..width {
        let s: Vec<f64> = scores.iter().map(|r| r[col]).collect();
        let l: Vec<u8> = labels.iter().map(|r| r[col]).collect();
        match metric.compute(&s, &l) {
            Ok(v) => {
                sum += v;
                defined += 1;
            }
            Err(EvalError::Undefined(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if defined == 0 {
        return Err(EvalError::Undefined(
            "metric undefined for every label column".into(),
        ));
    }

    let flat_scores: Vec<f64> = scores.iter().flatten().copied().collect();
    let flat_labels: Vec<u8> = labels.iter().flatten().copied().collect();
    Ok(MultilabelSummary {
        macro_value: sum / defined as f64,
        micro_value: metric.compute(&flat_scores, &flat_labels)?,
        skipped: width - defined,
    })
}

/// Mean squared error and mean absolute deviation.
pub fn regression_errors(predictions: &[f64], targets: &[f64]) -> Result<(f64, f64), EvalError> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(EvalError::Config(format!(
            "{} predictions against {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let n = predictions.len() as f64;
    let (mut se, mut ad) = (0.0, 0.0);
    for (p, t) in predictions.iter().zip(targets) {
        let e = p - t;
        se += e * e;
        ad += e.abs();
    }
    Ok((se / n, ad / n))
}
