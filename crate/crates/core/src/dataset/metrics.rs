//! Confusion counts, threshold metrics and ROC.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are predicted vulnerable; the first point uses +inf.
    pub threshold: f64,
}

/// Metrics of one run. Percentages are in [0, 100].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    #[serde(default)]
    pub roc_points: Vec<RocPoint>,
    /// NaN when the scored set has a single class or no scores were given.
    #[serde(default)]
    pub auc: f64,
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// F1 from the reported precision and recall (percentages); 0 when both are 0.
pub fn f1_of(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Threshold metrics of hard predictions (`true` = vulnerable). Precision is
/// 0 when nothing is predicted vulnerable, recall is 0 when nothing is.
pub fn evaluate(predictions: &[bool], labels: &[bool]) -> RunMetrics {
    assert_eq!(predictions.len(), labels.len(), "predictions and labels differ in length");
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    let precision = pct(tp, tp + fp);
    let recall = pct(tp, tp + fn_);
    RunMetrics {
        accuracy: pct(tp + tn, labels.len()),
        precision,
        recall,
        f1: f1_of(precision, recall),
        tp,
        tn,
        fp,
        fn_,
        roc_points: Vec::new(),
        auc: f64::NAN,
    }
}

/// [`evaluate`] at `threshold` plus the ROC of the raw scores.
pub fn evaluate_scores(scores: &[f64], labels: &[bool], threshold: f64) -> RunMetrics {
    let preds: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
    let mut m = evaluate(&preds, labels);
    let (points, auc) = roc_auc(scores, labels);
    m.roc_points = points;
    m.auc = auc;
    m
}

/// Sweeps every unique score as a threshold, highest first, and integrates
/// TPR over FPR with the trapezoid rule.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> (Vec<RocPoint>, f64) {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let rate = |k: usize, n: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint { fpr: rate(fp, neg), tpr: rate(tp, pos), threshold: t });
    }
    let auc = if pos == 0 || neg == 0 {
        f64::NAN
    } else {
        points.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum()
    };
    (points, auc)
}

/// Per-field mean over runs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub runs: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: f64,
    pub tn: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub auc: f64,
}

impl MeanMetrics {
    pub fn of(runs: &[RunMetrics]) -> MeanMetrics {
        let n = runs.len() as f64;
        let mean = |f: &dyn Fn(&RunMetrics) -> f64| runs.iter().map(f).sum::<f64>() / n;
        MeanMetrics {
            runs: runs.len(),
            accuracy: mean(&|r| r.accuracy),
            precision: mean(&|r| r.precision),
            recall: mean(&|r| r.recall),
            f1: mean(&|r| r.f1),
            tp: mean(&|r| r.tp as f64),
            tn: mean(&|r| r.tn as f64),
            fp: mean(&|r| r.fp as f64),
            fn_: mean(&|r| r.fn_ as f64),
            auc: mean(&|r| r.auc),
        }
    }
}
